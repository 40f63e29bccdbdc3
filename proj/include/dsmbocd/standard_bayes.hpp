#pragma once

#include <Eigen/Cholesky>

#include "dsmbocd/common.hpp"
#include "dsmbocd/special.hpp"

namespace dsmbocd {

enum class BayesFamily { normal_known_variance, normal_inverse_gamma, normal_inverse_wishart };

// Conjugate baseline posterior with exact closed-form updates and
// predictives. A value type: `updated` returns a new posterior.
//
// `param_log_density` evaluates the posterior over the matching natural
// parameterisation, up to an additive constant, for learning-rate
// calibration. The bijections used are:
//   known variance:  theta = m / var_obs                (p = 1)
//   NIG:             theta = (m / s2, 1 / s2)           (p = 2)
//   NIW (diagonal):  per coordinate i, (m_i / s2_i, 1 / s2_i), i.e. the NIW
//                    density restricted to diagonal covariance matrices.
// Each map contributes its log-Jacobian (|det| = s2^3 per coordinate pair).
class StandardBayesPosterior {
 public:
  static StandardBayesPosterior known_variance(double mean0, double var0, double obs_var) {
    if (!(var0 > 0.0) || !(obs_var > 0.0))
      throw std::invalid_argument("known_variance: variances must be > 0");
    StandardBayesPosterior p(BayesFamily::normal_known_variance, 1);
    p.kv_mean_ = mean0;
    p.kv_var_ = var0;
    p.kv_obs_var_ = obs_var;
    return p;
  }

  static StandardBayesPosterior nig(double mu0, double nu, double alpha, double beta) {
    if (!(nu > 0.0) || !(alpha > 0.0) || !(beta > 0.0))
      throw std::invalid_argument("nig: nu, alpha, beta must be > 0");
    StandardBayesPosterior p(BayesFamily::normal_inverse_gamma, 1);
    p.nig_mu0_ = mu0;
    p.nig_nu_ = nu;
    p.nig_alpha_ = alpha;
    p.nig_beta_ = beta;
    return p;
  }

  static StandardBayesPosterior niw(Vector mu0, double kappa, double dof, Matrix psi) {
    const Index d = mu0.size();
    if (psi.rows() != d || psi.cols() != d) throw std::invalid_argument("niw: psi shape");
    if (!(kappa > 0.0)) throw std::invalid_argument("niw: kappa must be > 0");
    if (!(dof > d - 1)) throw std::invalid_argument("niw: dof must exceed d - 1");
    Eigen::LLT<Matrix> llt(psi);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("niw: psi must be positive definite");
    StandardBayesPosterior p(BayesFamily::normal_inverse_wishart, d);
    p.niw_mu0_ = std::move(mu0);
    p.niw_kappa_ = kappa;
    p.niw_dof_ = dof;
    p.niw_psi_ = std::move(psi);
    return p;
  }

  BayesFamily family() const { return family_; }
  Index data_dim() const { return data_dim_; }

  StandardBayesPosterior updated(const Eigen::Ref<const Vector>& x) const {
    if (x.size() != data_dim_)
      throw std::invalid_argument("update: observation dimension mismatch");
    StandardBayesPosterior p = *this;
    switch (family_) {
      case BayesFamily::normal_known_variance: {
        const double prec = 1.0 / kv_var_ + 1.0 / kv_obs_var_;
        p.kv_var_ = 1.0 / prec;
        p.kv_mean_ = p.kv_var_ * (kv_mean_ / kv_var_ + x(0) / kv_obs_var_);
        break;
      }
      case BayesFamily::normal_inverse_gamma: {
        const double d0 = x(0) - nig_mu0_;
        p.nig_mu0_ = (nig_nu_ * nig_mu0_ + x(0)) / (nig_nu_ + 1.0);
        p.nig_nu_ = nig_nu_ + 1.0;
        p.nig_alpha_ = nig_alpha_ + 0.5;
        p.nig_beta_ = nig_beta_ + 0.5 * nig_nu_ * d0 * d0 / (nig_nu_ + 1.0);
        break;
      }
      case BayesFamily::normal_inverse_wishart: {
        const Vector d0 = x - niw_mu0_;
        p.niw_mu0_ = (niw_kappa_ * niw_mu0_ + x) / (niw_kappa_ + 1.0);
        p.niw_kappa_ = niw_kappa_ + 1.0;
        p.niw_dof_ = niw_dof_ + 1.0;
        p.niw_psi_ = niw_psi_ + (niw_kappa_ / (niw_kappa_ + 1.0)) * (d0 * d0.transpose());
        break;
      }
    }
    return p;
  }

  // Exact log posterior-predictive density: Gaussian for known variance,
  // Student-t otherwise.
  double log_predictive(const Eigen::Ref<const Vector>& x) const {
    if (x.size() != data_dim_)
      throw std::invalid_argument("log_predictive: observation dimension mismatch");
    switch (family_) {
      case BayesFamily::normal_known_variance:
        return normal_log_pdf(x(0), kv_mean_, kv_var_ + kv_obs_var_);
      case BayesFamily::normal_inverse_gamma: {
        const double scale_sq = nig_beta_ * (nig_nu_ + 1.0) / (nig_alpha_ * nig_nu_);
        return student_t_log_pdf(x(0), 2.0 * nig_alpha_, nig_mu0_, scale_sq);
      }
      case BayesFamily::normal_inverse_wishart: {
        const double d = static_cast<double>(data_dim_);
        const double dof = niw_dof_ - d + 1.0;
        const Matrix S = niw_psi_ * ((niw_kappa_ + 1.0) / (niw_kappa_ * dof));
        Eigen::LLT<Matrix> llt(S);
        const Vector z = x - niw_mu0_;
        const Vector w = llt.matrixL().solve(z);
        double logdet = 0.0;
        for (Index i = 0; i < data_dim_; ++i)
          logdet += 2.0 * std::log(Matrix(llt.matrixL())(i, i));
        return std::lgamma(0.5 * (dof + d)) - std::lgamma(0.5 * dof) -
               0.5 * d * std::log(dof * M_PI) - 0.5 * logdet -
               0.5 * (dof + d) * std::log1p(w.squaredNorm() / dof);
      }
    }
    return kNegInf;
  }

  // log pi(theta | data) + const over the natural parameterisation above.
  double param_log_density(const Eigen::Ref<const Vector>& theta) const {
    switch (family_) {
      case BayesFamily::normal_known_variance: {
        if (theta.size() != 1) throw std::domain_error("param_log_density: expected p = 1");
        const double m = kv_obs_var_ * theta(0);
        return -0.5 * (m - kv_mean_) * (m - kv_mean_) / kv_var_;
      }
      case BayesFamily::normal_inverse_gamma: {
        if (theta.size() != 2) throw std::domain_error("param_log_density: expected p = 2");
        if (!(theta(1) > 0.0))
          throw std::domain_error("param_log_density: non-positive precision coordinate");
        const double t1 = theta(0), t2 = theta(1);
        return (nig_alpha_ - 1.5) * std::log(t2) - nig_beta_ * t2 -
               0.5 * nig_nu_ * (t1 - nig_mu0_ * t2) * (t1 - nig_mu0_ * t2) / t2;
      }
      case BayesFamily::normal_inverse_wishart: {
        if (theta.size() != 2 * data_dim_)
          throw std::domain_error("param_log_density: expected p = 2d");
        const double d = static_cast<double>(data_dim_);
        Vector m(data_dim_), s2(data_dim_);
        for (Index i = 0; i < data_dim_; ++i) {
          const double t1 = theta(2 * i), t2 = theta(2 * i + 1);
          if (!(t2 > 0.0))
            throw std::domain_error("param_log_density: non-positive precision coordinate");
          s2(i) = 1.0 / t2;
          m(i) = t1 / t2;
        }
        const Vector z = m - niw_mu0_;
        double logdet = s2.array().log().sum();
        double tr = 0.0, quad = 0.0;
        for (Index i = 0; i < data_dim_; ++i) {
          tr += niw_psi_(i, i) / s2(i);
          quad += z(i) * z(i) / s2(i);
        }
        // Restriction of the NIW density to diagonal covariances, plus the
        // per-coordinate log-Jacobian 3*log(s2_i).
        return -0.5 * (niw_dof_ + d + 2.0) * logdet - 0.5 * tr - 0.5 * niw_kappa_ * quad +
               3.0 * logdet;
      }
    }
    return kNegInf;
  }

  // Family-specific accessors used by tests and presets.
  double kv_mean() const { return kv_mean_; }
  double kv_var() const { return kv_var_; }
  double kv_obs_var() const { return kv_obs_var_; }
  double nig_mu0() const { return nig_mu0_; }
  double nig_nu() const { return nig_nu_; }
  double nig_alpha() const { return nig_alpha_; }
  double nig_beta() const { return nig_beta_; }
  const Vector& niw_mu0() const { return niw_mu0_; }
  double niw_kappa() const { return niw_kappa_; }
  double niw_dof() const { return niw_dof_; }
  const Matrix& niw_psi() const { return niw_psi_; }

 private:
  StandardBayesPosterior(BayesFamily f, Index d) : family_(f), data_dim_(d) {}

  BayesFamily family_;
  Index data_dim_;
  double kv_mean_ = 0, kv_var_ = 1, kv_obs_var_ = 1;
  double nig_mu0_ = 0, nig_nu_ = 1, nig_alpha_ = 1, nig_beta_ = 1;
  Vector niw_mu0_;
  double niw_kappa_ = 1, niw_dof_ = 1;
  Matrix niw_psi_;
};

}  // namespace dsmbocd
