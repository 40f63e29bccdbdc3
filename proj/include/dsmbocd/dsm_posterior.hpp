#pragma once

#include <cassert>

#include <Eigen/Cholesky>

#include "dsmbocd/common.hpp"
#include "dsmbocd/diffusion.hpp"
#include "dsmbocd/model.hpp"
#include "dsmbocd/rng.hpp"

namespace dsmbocd {

// (Truncated) normal generalised posterior over the natural parameter.
// Precision and covariance are co-maintained: the precision is the update
// target, the covariance feeds sampling and the mean recursion. Every
// `kRefreshPeriod` updates the covariance is re-derived from the precision
// to arrest drift; `consistency_error()` exposes ||P C - I||_F for checks.
struct GaussianPosteriorParams {
  Matrix precision;   // Sigma_T^{-1}, SPD
  Matrix covariance;  // Sigma_T
  Vector mean;        // mu_T
  long count = 0;     // observations absorbed
  Box truncation;     // inherited from the model's parameter domain
  long fallback_refactors = 0;  // Woodbury failures repaired by refactorization

  static constexpr long kRefreshPeriod = 1000;

  Index dim() const { return mean.size(); }
  bool truncated() const { return !truncation.is_unbounded(); }

  double consistency_error() const {
    return (precision * covariance - Matrix::Identity(dim(), dim())).norm();
  }

  // Cholesky factor of the covariance (lower). Throws if not SPD.
  Matrix chol_covariance() const {
    Eigen::LLT<Matrix> llt(covariance);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("posterior covariance is not positive definite");
    return llt.matrixL();
  }

  void refresh_covariance_from_precision() {
    Eigen::LLT<Matrix> llt(precision);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("posterior precision is not positive definite");
    covariance = llt.solve(Matrix::Identity(dim(), dim()));
    covariance = 0.5 * (covariance + covariance.transpose()).eval();
  }
};

inline GaussianPosteriorParams make_prior(const Eigen::Ref<const Vector>& mean,
                                          const Eigen::Ref<const Matrix>& cov,
                                          const Box& truncation) {
  if (cov.rows() != cov.cols() || cov.rows() != mean.size())
    throw std::invalid_argument("prior: dimension mismatch");
  if (truncation.dim() != mean.size())
    throw std::invalid_argument("prior: truncation dimension mismatch");
  GaussianPosteriorParams p;
  p.covariance = 0.5 * (cov + cov.transpose());
  Eigen::LLT<Matrix> llt(p.covariance);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("prior covariance is not positive definite");
  p.precision = llt.solve(Matrix::Identity(mean.size(), mean.size()));
  p.precision = 0.5 * (p.precision + p.precision.transpose()).eval();
  p.mean = mean;
  p.count = 0;
  p.truncation = truncation;
  return p;
}

inline GaussianPosteriorParams make_prior(const NaturalExpFamilyModel& model,
                                          const Eigen::Ref<const Vector>& mean,
                                          const Eigen::Ref<const Matrix>& cov) {
  return make_prior(mean, cov, model.param_domain());
}

// One-observation update from precomputed summaries. J = diag(m(x)) grad_r(x)
// is d x p with lambda(x) = J'J, so the covariance downdate only ever inverts
// a d x d core:
//   Sigma_new = Sigma - Sigma J' (I/(2w) + J Sigma J')^{-1} J Sigma.
inline void online_update(GaussianPosteriorParams& state, const Eigen::Ref<const Matrix>& J,
                          const Eigen::Ref<const Vector>& nu, double omega) {
  if (omega < 0.0) throw std::invalid_argument("online_update: omega must be >= 0");
  if (omega == 0.0) {
    ++state.count;
    return;
  }
  const Index d = J.rows();
  // Mean recursion in differenced form: with P_new = P_old + 2w J'J,
  //   mu_new = Sigma_new (P_old mu_old - 2w nu)
  //          = mu_old - Sigma_new 2w (J'(J mu_old) + nu),
  // which never forms the ill-conditioned product P mu.
  const Vector mean_rhs = 2.0 * omega * (J.transpose() * (J * state.mean) + nu);
  state.precision.noalias() += 2.0 * omega * J.transpose() * J;
  state.precision = 0.5 * (state.precision + state.precision.transpose()).eval();

  Matrix SJt = state.covariance * J.transpose();                       // p x d
  Matrix core = Matrix::Identity(d, d) / (2.0 * omega) + J * SJt;     // d x d
  Eigen::LLT<Matrix> llt(core);
  bool ok = llt.info() == Eigen::Success;
  if (ok) {
    state.covariance.noalias() -= SJt * llt.solve(SJt.transpose());
    state.covariance = 0.5 * (state.covariance + state.covariance.transpose()).eval();
    ok = (state.covariance.diagonal().array() > 0.0).all() &&
         state.covariance.allFinite();
  }
  if (!ok) {
    // Rounding broke positive definiteness; rebuild from the exact precision.
    state.refresh_covariance_from_precision();
    ++state.fallback_refactors;
  }
  state.mean.noalias() -= state.covariance * mean_rhs;
  ++state.count;
  if (state.count % GaussianPosteriorParams::kRefreshPeriod == 0)
    state.refresh_covariance_from_precision();
  assert(state.consistency_error() < 1e-8);
}

inline void online_update(GaussianPosteriorParams& state, const NaturalExpFamilyModel& model,
                          const DiffusionSpec& spec, double omega,
                          const Eigen::Ref<const Vector>& x) {
  spec.validate(model);
  const auto der = model.derivatives(x);
  Vector m_sq, dm_sq;
  detail::diffusion_sq(spec, der, m_sq, dm_sq);
  const Matrix J = m_sq.array().sqrt().matrix().asDiagonal() * der.jacobian;
  const auto s = loss_summary_from(spec, der);
  online_update(state, J, s.nu, omega);
}

// Whole-batch construction:
//   precision = Sigma0^{-1} + 2 w sum_t lambda(x_t)
//   mean      = covariance (Sigma0^{-1} mu0 - 2 w sum_t nu(x_t))
// Empty data returns the prior itself.
inline GaussianPosteriorParams batch_posterior(const NaturalExpFamilyModel& model,
                                               const DiffusionSpec& spec,
                                               const Eigen::Ref<const Vector>& prior_mean,
                                               const Eigen::Ref<const Matrix>& prior_cov,
                                               double omega,
                                               const Eigen::Ref<const Matrix>& data) {
  if (!(omega > 0.0) && data.rows() > 0)
    throw std::invalid_argument("batch_posterior: omega must be > 0");
  spec.validate(model);
  GaussianPosteriorParams prior = make_prior(model, prior_mean, prior_cov);
  if (data.rows() == 0) return prior;

  Matrix lambda_sum = Matrix::Zero(model.param_dim(), model.param_dim());
  Vector nu_sum = Vector::Zero(model.param_dim());
  for (Index t = 0; t < data.rows(); ++t) {
    const auto s = loss_summary(spec, model, data.row(t).transpose());
    lambda_sum += s.lambda;
    nu_sum += s.nu;
  }
  GaussianPosteriorParams post = prior;
  post.precision += 2.0 * omega * lambda_sum;
  post.precision = 0.5 * (post.precision + post.precision.transpose()).eval();
  post.refresh_covariance_from_precision();
  post.mean = post.covariance * (prior.precision * prior.mean - 2.0 * omega * nu_sum);
  post.count = data.rows();
  return post;
}

namespace detail {

// Rough truncation mass estimate from the per-coordinate marginals.
inline double marginal_mass(const GaussianPosteriorParams& s, Index i) {
  const double sd = std::sqrt(s.covariance(i, i));
  const double a = s.truncation.lo(i), b = s.truncation.hi(i);
  const double Fa = (a == kNegInf) ? 0.0 : normal_cdf((a - s.mean(i)) / sd);
  const double Fb = (b == kInf) ? 1.0 : normal_cdf((b - s.mean(i)) / sd);
  return Fb - Fa;
}

inline void gibbs_sweep(const GaussianPosteriorParams& s, Vector& theta, RngStream& rng) {
  const Index p = s.dim();
  for (Index i = 0; i < p; ++i) {
    double dot = 0.0;
    for (Index j = 0; j < p; ++j)
      if (j != i) dot += s.precision(i, j) * (theta(j) - s.mean(j));
    const double cvar = 1.0 / s.precision(i, i);
    const double cmean = s.mean(i) - cvar * dot;
    theta(i) = rng.truncated_normal(cmean, std::sqrt(cvar), s.truncation.lo(i),
                                    s.truncation.hi(i));
  }
}

}  // namespace detail

// n i.i.d. draws (rows) from Normal(mean, covariance) truncated to the domain
// box. Plain multivariate normal when unbounded; otherwise rejection with a
// per-call cap, falling back to coordinate Gibbs sweeps when acceptance is
// below 1%. Deterministic given the stream.
inline Matrix sample(const GaussianPosteriorParams& state, RngStream& rng, Index n) {
  if (n <= 0) throw std::invalid_argument("sample: n must be positive");
  const Index p = state.dim();
  const Matrix L = state.chol_covariance();
  Matrix out(n, p);
  Vector z(p);

  if (!state.truncated()) {
    for (Index s = 0; s < n; ++s) {
      for (Index i = 0; i < p; ++i) z(i) = rng.normal();
      out.row(s) = (state.mean + L * z).transpose();
    }
    return out;
  }

  double mass = 1.0;
  for (Index i = 0; i < p; ++i) mass *= detail::marginal_mass(state, i);
  if (mass < 1e-12) {
    std::string coords;
    for (Index i = 0; i < p; ++i)
      if (detail::marginal_mass(state, i) < 5e-2) coords += cat(coords.empty() ? "" : ",", i);
    throw std::runtime_error(
        cat("sample: truncation region has estimated mass ", mass,
            " < 1e-12 (offending coordinates: ", coords, ")"));
  }

  const long cap = std::max<long>(4096, 256 * n);
  long proposals = 0;
  Index accepted = 0;
  while (accepted < n && proposals < cap) {
    for (Index i = 0; i < p; ++i) z(i) = rng.normal();
    Vector draw = state.mean + L * z;
    ++proposals;
    if (state.truncation.contains(draw)) out.row(accepted++) = draw.transpose();
    // After a pilot burst, hand hopeless acceptance rates to Gibbs.
    if (proposals == 1024 && accepted < 10) break;
  }
  if (accepted < n) {
    Vector theta = state.mean;
    for (Index i = 0; i < p; ++i) {
      const double lo = state.truncation.lo(i), hi = state.truncation.hi(i);
      if (!(theta(i) > lo && theta(i) < hi)) {
        const double sd = std::sqrt(state.covariance(i, i));
        if (lo != kNegInf && hi != kInf)
          theta(i) = 0.5 * (lo + hi);
        else if (lo != kNegInf)
          theta(i) = lo + 0.1 * sd;
        else
          theta(i) = hi - 0.1 * sd;
      }
    }
    for (int burn = 0; burn < 50; ++burn) detail::gibbs_sweep(state, theta, rng);
    while (accepted < n) {
      for (int thin = 0; thin < 5; ++thin) detail::gibbs_sweep(state, theta, rng);
      out.row(accepted++) = theta.transpose();
    }
  }
  return out;
}

}  // namespace dsmbocd
