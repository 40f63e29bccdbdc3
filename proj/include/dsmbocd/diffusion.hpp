#pragma once

#include "dsmbocd/common.hpp"
#include "dsmbocd/model.hpp"

namespace dsmbocd {

enum class DiffusionKind { identity, robust };

// Diagonal diffusion weights. The robust kind shrinks coordinate i by
// 1/sqrt(1 + (grad r(x) anchor)_i^2), which caps the influence any single
// observation can exert on the generalised posterior.
struct DiffusionSpec {
  DiffusionKind kind = DiffusionKind::identity;
  Vector anchor;  // required iff kind == robust; must be nonzero

  static DiffusionSpec identity() { return DiffusionSpec{}; }

  static DiffusionSpec robust(Vector anchor) {
    if (anchor.size() == 0 || anchor.isZero(0.0))
      throw std::invalid_argument("robust diffusion: anchor must be a nonzero vector");
    DiffusionSpec s;
    s.kind = DiffusionKind::robust;
    s.anchor = std::move(anchor);
    return s;
  }

  void validate(const NaturalExpFamilyModel& model) const {
    if (kind == DiffusionKind::robust && anchor.size() != model.param_dim())
      throw std::invalid_argument(
          cat("robust diffusion: anchor has dimension ", anchor.size(), ", model expects ",
              model.param_dim()));
  }
};

// Per-observation quadratic and linear summaries of the weighted
// score-matching loss:
//   lambda = grad_r' diag(m^2) grad_r
//   nu_j   = sum_i m_ii^2 dr_j/dx_i db/dx_i
//          + sum_i d/dx_i [ m_ii^2 dr_j/dx_i ]
// Their running sums are all the conjugate posterior ever needs.
struct LossSummary {
  Matrix lambda;  // p x p, symmetric PSD
  Vector nu;      // p
};

namespace detail {

// m_ii^2 and its analytic derivative d(m_ii^2)/dx_i.
inline void diffusion_sq(const DiffusionSpec& spec, const SuffStatDerivatives& der,
                         Vector& m_sq, Vector& dm_sq) {
  const Index d = der.jacobian.rows();
  if (spec.kind == DiffusionKind::identity) {
    m_sq = Vector::Ones(d);
    dm_sq = Vector::Zero(d);
    return;
  }
  const Vector u = der.jacobian * spec.anchor;        // (grad r(x) anchor)_i
  const Vector du = der.second_diag * spec.anchor;    // d u_i / d x_i
  m_sq.resize(d);
  dm_sq.resize(d);
  for (Index i = 0; i < d; ++i) {
    const double denom = 1.0 + u(i) * u(i);
    m_sq(i) = 1.0 / denom;
    dm_sq(i) = -2.0 * u(i) * du(i) / (denom * denom);
  }
}

}  // namespace detail

// Diagonal of m(x); identity kind gives all ones, robust entries lie in (0,1].
inline Vector diffusion_diag(const DiffusionSpec& spec, const NaturalExpFamilyModel& model,
                             const Eigen::Ref<const Vector>& x) {
  spec.validate(model);
  if (spec.kind == DiffusionKind::identity) return Vector::Ones(model.data_dim());
  const auto der = model.derivatives(x);
  Vector m_sq, dm_sq;
  detail::diffusion_sq(spec, der, m_sq, dm_sq);
  return m_sq.array().sqrt();
}

inline LossSummary loss_summary_from(const DiffusionSpec& spec, const SuffStatDerivatives& der) {
  Vector m_sq, dm_sq;
  detail::diffusion_sq(spec, der, m_sq, dm_sq);
  LossSummary s;
  s.lambda = der.jacobian.transpose() * m_sq.asDiagonal() * der.jacobian;
  s.lambda = 0.5 * (s.lambda + s.lambda.transpose()).eval();
  s.nu = der.jacobian.transpose() * (m_sq.asDiagonal() * der.base_grad) +
         der.jacobian.transpose() * dm_sq + der.second_diag.transpose() * m_sq;
  return s;
}

inline LossSummary loss_summary(const DiffusionSpec& spec, const NaturalExpFamilyModel& model,
                                const Eigen::Ref<const Vector>& x) {
  spec.validate(model);
  return loss_summary_from(spec, model.derivatives(x));
}

// theta-dependent part of the pointwise loss:
//   d_m(theta, x) = theta' lambda(x) theta + 2 theta' nu(x),
// the omitted remainder being constant in theta.
inline double pointwise_loss(const DiffusionSpec& spec, const NaturalExpFamilyModel& model,
                             const Eigen::Ref<const Vector>& theta,
                             const Eigen::Ref<const Vector>& x) {
  if (theta.size() != model.param_dim() || !model.param_domain().contains(theta))
    throw std::domain_error(cat(model.name(), ": theta outside parameter domain"));
  const auto s = loss_summary(spec, model, x);
  return theta.dot(s.lambda * theta) + 2.0 * theta.dot(s.nu);
}

}  // namespace dsmbocd
