#pragma once

#include <functional>

#include "dsmbocd/dsm_posterior.hpp"
#include "dsmbocd/standard_bayes.hpp"

namespace dsmbocd {

// Log-density of the calibration reference, evaluable up to an additive
// constant (the constant shifts the objective without moving its argmin).
using ParamLogDensity = std::function<double(const Vector&)>;

struct CalibrationOptions {
  double omega_min = 1e-8;
  double omega_max = 1e2;
  double log_tol = 1e-3;     // termination width in log(omega)
  int samples = 2048;        // common-random-number sample count
  std::uint64_t seed = 20240101;
};

struct CalibrationResult {
  double omega = 0.0;
  double objective = 0.0;    // K(omega*) up to the reference's constant
  bool at_lower_bound = false;
  bool at_upper_bound = false;
};

namespace detail {

inline Matrix standard_normal_draws(Index n, Index p, std::uint64_t seed) {
  RngStream rng(seed);
  Matrix z(n, p);
  for (Index s = 0; s < n; ++s)
    for (Index i = 0; i < p; ++i) z(s, i) = rng.normal();
  return z;
}

}  // namespace detail

// Monte Carlo estimate of K(w) = E_q[log q_w(theta) - log ref(theta)] with
// theta_s = mu_w + L_w z_s. The z block is held fixed across evaluations so
// that different w values see common random numbers.
inline double calibration_objective(const NaturalExpFamilyModel& model,
                                    const DiffusionSpec& spec,
                                    const Eigen::Ref<const Vector>& prior_mean,
                                    const Eigen::Ref<const Matrix>& prior_cov,
                                    const ParamLogDensity& ref, double omega,
                                    const Eigen::Ref<const Matrix>& calib_data,
                                    const Eigen::Ref<const Matrix>& z) {
  const auto post = batch_posterior(model, spec, prior_mean, prior_cov, omega, calib_data);
  const Matrix L = post.chol_covariance();
  double log_det = 0.0;
  for (Index i = 0; i < post.dim(); ++i) log_det += 2.0 * std::log(L(i, i));
  const double entropy_const = -0.5 * post.dim() * std::log(2.0 * M_PI) - 0.5 * log_det;

  double acc = 0.0;
  for (Index s = 0; s < z.rows(); ++s) {
    const Vector theta = post.mean + L * z.row(s).transpose();
    const double log_q = entropy_const - 0.5 * z.row(s).squaredNorm();
    const double log_ref = ref(theta);
    if (std::isnan(log_ref))
      throw std::runtime_error(
          "calibrate_omega: reference log-density is NaN at a sampled theta");
    // A vanishing reference where q_w has mass makes this w infinitely bad;
    // report that so the search steers away rather than aborting.
    if (log_ref == kNegInf) return kInf;
    acc += log_q - log_ref;
  }
  return acc / static_cast<double>(z.rows());
}

// Learning-rate selection by matching the generalised posterior to the
// standard Bayes reference on a data prefix: golden-section search for the
// minimum of K over log(omega).
inline CalibrationResult calibrate_omega(const NaturalExpFamilyModel& model,
                                         const DiffusionSpec& spec,
                                         const Eigen::Ref<const Vector>& prior_mean,
                                         const Eigen::Ref<const Matrix>& prior_cov,
                                         const ParamLogDensity& ref,
                                         const Eigen::Ref<const Matrix>& calib_data,
                                         const CalibrationOptions& opts = {}) {
  if (calib_data.rows() < 2)
    throw std::invalid_argument("calibrate_omega: need at least 2 calibration observations");
  if (!(opts.omega_min > 0.0) || opts.omega_min > opts.omega_max)
    throw std::invalid_argument("calibrate_omega: invalid bracket");

  const Matrix z = detail::standard_normal_draws(opts.samples, model.param_dim(), opts.seed);
  auto K = [&](double log_omega) {
    return calibration_objective(model, spec, prior_mean, prior_cov, ref,
                                 std::exp(log_omega), calib_data, z);
  };

  double a = std::log(opts.omega_min), b = std::log(opts.omega_max);
  CalibrationResult result;
  if (a == b) {  // degenerate bracket
    result.omega = opts.omega_min;
    result.objective = K(a);
    return result;
  }

  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - invphi * (b - a);
  double d = a + invphi * (b - a);
  double fc = K(c), fd = K(d);
  while (b - a > opts.log_tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - invphi * (b - a);
      fc = K(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + invphi * (b - a);
      fd = K(d);
    }
  }
  const double u = 0.5 * (a + b);
  result.omega = std::exp(u);
  result.objective = fc < fd ? fc : fd;
  if (result.objective == kInf)
    throw std::runtime_error(
        "calibrate_omega: reference log-density non-finite at sampled theta for every "
        "candidate omega");
  result.at_lower_bound = u - std::log(opts.omega_min) < 4.0 * opts.log_tol;
  result.at_upper_bound = std::log(opts.omega_max) - u < 4.0 * opts.log_tol;
  return result;
}

inline CalibrationResult calibrate_omega(const NaturalExpFamilyModel& model,
                                         const DiffusionSpec& spec,
                                         const Eigen::Ref<const Vector>& prior_mean,
                                         const Eigen::Ref<const Matrix>& prior_cov,
                                         const StandardBayesPosterior& reference,
                                         const Eigen::Ref<const Matrix>& calib_data,
                                         const CalibrationOptions& opts = {}) {
  ParamLogDensity ref = [&reference](const Vector& theta) {
    try {
      return reference.param_log_density(theta);
    } catch (const std::domain_error&) {
      return kNegInf;  // reported as non-finite by the objective
    }
  };
  return calibrate_omega(model, spec, prior_mean, prior_cov, ref, calib_data, opts);
}

// Closed-form KL(N(mu0, S0) || N(mu1, S1)) for tests and Gaussian references.
inline double gaussian_kl(const Vector& mu0, const Matrix& S0, const Vector& mu1,
                          const Matrix& S1) {
  const Index p = mu0.size();
  Eigen::LLT<Matrix> llt1(S1);
  const Matrix S1inv = llt1.solve(Matrix::Identity(p, p));
  const Vector dm = mu1 - mu0;
  const double tr = (S1inv * S0).trace();
  const double quad = dm.dot(S1inv * dm);
  const double logdet0 = Eigen::LLT<Matrix>(S0).matrixLLT().diagonal().array().log().sum() * 2.0;
  const double logdet1 = llt1.matrixLLT().diagonal().array().log().sum() * 2.0;
  return 0.5 * (tr + quad - p + logdet1 - logdet0);
}

}  // namespace dsmbocd
