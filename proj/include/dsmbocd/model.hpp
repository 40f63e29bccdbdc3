#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dsmbocd/common.hpp"
#include "dsmbocd/special.hpp"

namespace dsmbocd {

enum class DataSupport { all_reals, positive_orthant, product_of_supports };

// Derivative blocks of a natural exponential family at a single point x.
// jacobian(i,j)    = d r_j / d x_i                (d x p)
// second_diag(i,j) = d^2 r_j / d x_i^2            (d x p)
// base_grad(i)     = d b / d x_i                  (d)
// Only the diagonal-in-x second partials are carried; that is all a diagonal
// diffusion matrix ever needs.
struct SuffStatDerivatives {
  Matrix jacobian;
  Matrix second_diag;
  Vector base_grad;
};

// Natural-form exponential family log p_theta(x) = theta'r(x) - a(theta) + b(x).
// Implementations are immutable after construction and freely shareable
// across threads; every operation is a pure function of its inputs.
class NaturalExpFamilyModel {
 public:
  virtual ~NaturalExpFamilyModel() = default;

  virtual Index data_dim() const = 0;
  virtual Index param_dim() const = 0;
  virtual const Box& param_domain() const = 0;
  virtual DataSupport data_support() const = 0;
  virtual std::string name() const = 0;

  bool in_support(const Eigen::Ref<const Vector>& x) const {
    if (x.size() != data_dim()) return false;
    return check_support(x);
  }

  Vector suff_stat(const Eigen::Ref<const Vector>& x) const {
    require_support(x, "suff_stat");
    return eval_suff_stat(x);
  }

  SuffStatDerivatives derivatives(const Eigen::Ref<const Vector>& x) const {
    require_support(x, "derivatives");
    return eval_derivatives(x);
  }

  // b(x)
  double base_log_density(const Eigen::Ref<const Vector>& x) const {
    require_support(x, "base_log_density");
    return eval_base_log_density(x);
  }

  // a(theta); finite exactly on param_domain.
  double log_normalizer(const Eigen::Ref<const Vector>& theta) const {
    if (theta.size() != param_dim() || !param_domain().contains(theta))
      throw std::domain_error(cat(name(), ": theta outside parameter domain"));
    return eval_log_normalizer(theta);
  }

  // Natural-parameter maximum likelihood on rows of `data` (T x d).
  Vector mle(const Eigen::Ref<const Matrix>& data) const {
    if (data.rows() == 0) throw std::invalid_argument(cat(name(), ": mle on empty data"));
    if (data.cols() != data_dim())
      throw std::invalid_argument(cat(name(), ": mle data has dimension ", data.cols(),
                                      ", expected ", data_dim()));
    for (Index t = 0; t < data.rows(); ++t)
      require_support(data.row(t).transpose(), "mle");
    return eval_mle(data);
  }

 protected:
  virtual bool check_support(const Eigen::Ref<const Vector>& x) const = 0;
  virtual Vector eval_suff_stat(const Eigen::Ref<const Vector>& x) const = 0;
  virtual SuffStatDerivatives eval_derivatives(const Eigen::Ref<const Vector>& x) const = 0;
  virtual double eval_base_log_density(const Eigen::Ref<const Vector>& x) const = 0;
  virtual double eval_log_normalizer(const Eigen::Ref<const Vector>& theta) const = 0;
  virtual Vector eval_mle(const Eigen::Ref<const Matrix>& data) const = 0;

  void require_support(const Eigen::Ref<const Vector>& x, const char* op) const {
    if (!in_support(x))
      throw std::domain_error(cat(name(), "::", op, ": observation outside data support"));
  }
};

using ModelPtr = std::shared_ptr<const NaturalExpFamilyModel>;

// theta'r(x) + b(x); the normalizer a(theta) is deliberately omitted.
inline double log_density_unnorm(const NaturalExpFamilyModel& model,
                                 const Eigen::Ref<const Vector>& theta,
                                 const Eigen::Ref<const Vector>& x) {
  if (theta.size() != model.param_dim() || !model.param_domain().contains(theta))
    throw std::domain_error(cat(model.name(), ": theta outside parameter domain"));
  return theta.dot(model.suff_stat(x)) + model.base_log_density(x);
}

// Fully normalized log-density theta'r(x) - a(theta) + b(x).
inline double log_density(const NaturalExpFamilyModel& model,
                          const Eigen::Ref<const Vector>& theta,
                          const Eigen::Ref<const Vector>& x) {
  return log_density_unnorm(model, theta, x) - model.log_normalizer(theta);
}

// ----------------------------------------------------------------------------
// Univariate Gaussian in natural form: theta = (mu/var, 1/var),
// r(x) = (x, -x^2/2), b = 0, a(theta) = theta1^2/(2 theta2) - log(theta2)/2
// + log(2 pi)/2. Domain theta1 in R, theta2 > 0.

class GaussianModel final : public NaturalExpFamilyModel {
 public:
  GaussianModel() : domain_(make_domain()) {}

  Index data_dim() const override { return 1; }
  Index param_dim() const override { return 2; }
  const Box& param_domain() const override { return domain_; }
  DataSupport data_support() const override { return DataSupport::all_reals; }
  std::string name() const override { return "gaussian"; }

  static Vector natural_from_moments(double mean, double var) {
    Vector theta(2);
    theta << mean / var, 1.0 / var;
    return theta;
  }

 protected:
  bool check_support(const Eigen::Ref<const Vector>&) const override { return true; }

  Vector eval_suff_stat(const Eigen::Ref<const Vector>& x) const override {
    Vector r(2);
    r << x(0), -0.5 * x(0) * x(0);
    return r;
  }

  SuffStatDerivatives eval_derivatives(const Eigen::Ref<const Vector>& x) const override {
    SuffStatDerivatives d;
    d.jacobian.resize(1, 2);
    d.jacobian << 1.0, -x(0);
    d.second_diag.resize(1, 2);
    d.second_diag << 0.0, -1.0;
    d.base_grad = Vector::Zero(1);
    return d;
  }

  double eval_base_log_density(const Eigen::Ref<const Vector>&) const override { return 0.0; }

  double eval_log_normalizer(const Eigen::Ref<const Vector>& theta) const override {
    return 0.5 * theta(0) * theta(0) / theta(1) - 0.5 * std::log(theta(1)) +
           0.5 * std::log(2.0 * M_PI);
  }

  Vector eval_mle(const Eigen::Ref<const Matrix>& data) const override {
    const double mean = data.col(0).mean();
    const double var = (data.col(0).array() - mean).square().mean();
    if (!(var > 1e-12 * (1.0 + mean * mean)))
      throw DegenerateDataError("gaussian mle: zero sample variance");
    return natural_from_moments(mean, var);
  }

 private:
  static Box make_domain() {
    Vector lo(2), hi(2);
    lo << kNegInf, 0.0;
    hi << kInf, kInf;
    return Box(lo, hi);
  }
  Box domain_;
};

// ----------------------------------------------------------------------------
// Univariate Gaussian with fixed observation variance: theta = mu/var,
// r(x) = x, b(x) = -x^2/(2 var) - log(2 pi var)/2, a(theta) = var theta^2 / 2.
// The one exponential family here whose standard Bayes posterior over theta is
// exactly normal, which makes it the reference case for learning-rate checks.

class FixedVarGaussianModel final : public NaturalExpFamilyModel {
 public:
  explicit FixedVarGaussianModel(double var)
      : var_(var), domain_(Box::unbounded(1)) {
    if (!(var > 0.0)) throw std::invalid_argument("gaussian_fixed_var: var must be > 0");
  }

  Index data_dim() const override { return 1; }
  Index param_dim() const override { return 1; }
  const Box& param_domain() const override { return domain_; }
  DataSupport data_support() const override { return DataSupport::all_reals; }
  std::string name() const override { return "gaussian_fixed_var"; }
  double variance() const { return var_; }

 protected:
  bool check_support(const Eigen::Ref<const Vector>&) const override { return true; }

  Vector eval_suff_stat(const Eigen::Ref<const Vector>& x) const override {
    return Vector::Constant(1, x(0));
  }

  SuffStatDerivatives eval_derivatives(const Eigen::Ref<const Vector>& x) const override {
    SuffStatDerivatives d;
    d.jacobian = Matrix::Constant(1, 1, 1.0);
    d.second_diag = Matrix::Zero(1, 1);
    d.base_grad = Vector::Constant(1, -x(0) / var_);
    return d;
  }

  double eval_base_log_density(const Eigen::Ref<const Vector>& x) const override {
    return -0.5 * x(0) * x(0) / var_ - 0.5 * std::log(2.0 * M_PI * var_);
  }

  double eval_log_normalizer(const Eigen::Ref<const Vector>& theta) const override {
    return 0.5 * var_ * theta(0) * theta(0);
  }

  Vector eval_mle(const Eigen::Ref<const Matrix>& data) const override {
    return Vector::Constant(1, data.col(0).mean() / var_);
  }

 private:
  double var_;
  Box domain_;
};

// ----------------------------------------------------------------------------
// Exponential with rate theta > 0: r(x) = -x, b = 0, a(theta) = -log(theta),
// support (0, inf).

class ExponentialModel final : public NaturalExpFamilyModel {
 public:
  ExponentialModel() : domain_(Vector::Zero(1), Vector::Constant(1, kInf)) {}

  Index data_dim() const override { return 1; }
  Index param_dim() const override { return 1; }
  const Box& param_domain() const override { return domain_; }
  DataSupport data_support() const override { return DataSupport::positive_orthant; }
  std::string name() const override { return "exponential"; }

 protected:
  bool check_support(const Eigen::Ref<const Vector>& x) const override { return x(0) > 0.0; }

  Vector eval_suff_stat(const Eigen::Ref<const Vector>& x) const override {
    return Vector::Constant(1, -x(0));
  }

  SuffStatDerivatives eval_derivatives(const Eigen::Ref<const Vector>&) const override {
    SuffStatDerivatives d;
    d.jacobian = Matrix::Constant(1, 1, -1.0);
    d.second_diag = Matrix::Zero(1, 1);
    d.base_grad = Vector::Zero(1);
    return d;
  }

  double eval_base_log_density(const Eigen::Ref<const Vector>&) const override { return 0.0; }

  double eval_log_normalizer(const Eigen::Ref<const Vector>& theta) const override {
    return -std::log(theta(0));
  }

  Vector eval_mle(const Eigen::Ref<const Matrix>& data) const override {
    const double mean = data.col(0).mean();
    if (!(mean > 0.0) || !std::isfinite(mean))
      throw DegenerateDataError("exponential mle: non-positive sample mean");
    return Vector::Constant(1, 1.0 / mean);
  }

 private:
  Box domain_;
};

// ----------------------------------------------------------------------------
// Gamma with shape alpha = theta1 + 1 and rate theta2: r(x) = (log x, -x),
// b = 0, a(theta) = lgamma(theta1 + 1) - (theta1 + 1) log(theta2).
// Domain theta1 > -1, theta2 > 0; support (0, inf).

class GammaModel final : public NaturalExpFamilyModel {
 public:
  GammaModel() : domain_(make_domain()) {}

  Index data_dim() const override { return 1; }
  Index param_dim() const override { return 2; }
  const Box& param_domain() const override { return domain_; }
  DataSupport data_support() const override { return DataSupport::positive_orthant; }
  std::string name() const override { return "gamma"; }

 protected:
  bool check_support(const Eigen::Ref<const Vector>& x) const override { return x(0) > 0.0; }

  Vector eval_suff_stat(const Eigen::Ref<const Vector>& x) const override {
    Vector r(2);
    r << std::log(x(0)), -x(0);
    return r;
  }

  SuffStatDerivatives eval_derivatives(const Eigen::Ref<const Vector>& x) const override {
    SuffStatDerivatives d;
    d.jacobian.resize(1, 2);
    d.jacobian << 1.0 / x(0), -1.0;
    d.second_diag.resize(1, 2);
    d.second_diag << -1.0 / (x(0) * x(0)), 0.0;
    d.base_grad = Vector::Zero(1);
    return d;
  }

  double eval_base_log_density(const Eigen::Ref<const Vector>&) const override { return 0.0; }

  double eval_log_normalizer(const Eigen::Ref<const Vector>& theta) const override {
    const double shape = theta(0) + 1.0;
    return std::lgamma(shape) - shape * std::log(theta(1));
  }

  // Newton iteration on the shape: solve log(alpha) - digamma(alpha) = s with
  // s = log(mean) - mean(log x); tolerance 1e-10, at most 100 iterations.
  Vector eval_mle(const Eigen::Ref<const Matrix>& data) const override {
    const double mean = data.col(0).mean();
    const double mean_log = data.col(0).array().log().mean();
    const double s = std::log(mean) - mean_log;
    if (!(s > 1e-12) || !std::isfinite(s))
      throw DegenerateDataError("gamma mle: degenerate sample (log-mean gap <= 0)");
    double alpha = (3.0 - s + std::sqrt((s - 3.0) * (s - 3.0) + 24.0 * s)) / (12.0 * s);
    for (int it = 0; it < 100; ++it) {
      const double f = std::log(alpha) - digamma(alpha) - s;
      const double fp = 1.0 / alpha - trigamma(alpha);
      const double step = f / fp;
      alpha -= step;
      if (!(alpha > 0.0)) throw DegenerateDataError("gamma mle: Newton left the domain");
      if (std::abs(step) < 1e-10 * (1.0 + std::abs(alpha))) break;
    }
    Vector theta(2);
    theta << alpha - 1.0, alpha / mean;
    return theta;
  }

 private:
  static Box make_domain() {
    Vector lo(2), hi(2);
    lo << -1.0, 0.0;
    hi << kInf, kInf;
    return Box(lo, hi);
  }
  Box domain_;
};

// ----------------------------------------------------------------------------
// Product of independent factors; data and parameter blocks are concatenated
// and all derivative blocks assemble block-diagonally.

class ProductModel final : public NaturalExpFamilyModel {
 public:
  explicit ProductModel(std::vector<ModelPtr> factors) : factors_(std::move(factors)) {
    if (factors_.empty()) throw std::invalid_argument("product model: no factors");
    data_dim_ = 0;
    param_dim_ = 0;
    domain_ = factors_[0]->param_domain();
    support_ = factors_[0]->data_support();
    for (std::size_t k = 0; k < factors_.size(); ++k) {
      data_off_.push_back(data_dim_);
      param_off_.push_back(param_dim_);
      data_dim_ += factors_[k]->data_dim();
      param_dim_ += factors_[k]->param_dim();
      if (k > 0) {
        domain_ = Box::concat(domain_, factors_[k]->param_domain());
        if (factors_[k]->data_support() != support_)
          support_ = DataSupport::product_of_supports;
      }
    }
  }

  Index data_dim() const override { return data_dim_; }
  Index param_dim() const override { return param_dim_; }
  const Box& param_domain() const override { return domain_; }
  DataSupport data_support() const override { return support_; }
  std::string name() const override {
    std::string n = "product:";
    for (std::size_t k = 0; k < factors_.size(); ++k)
      n += (k ? "," : "") + factors_[k]->name();
    return n;
  }

  const std::vector<ModelPtr>& factors() const { return factors_; }

 protected:
  bool check_support(const Eigen::Ref<const Vector>& x) const override {
    for (std::size_t k = 0; k < factors_.size(); ++k)
      if (!factors_[k]->in_support(x.segment(data_off_[k], factors_[k]->data_dim())))
        return false;
    return true;
  }

  Vector eval_suff_stat(const Eigen::Ref<const Vector>& x) const override {
    Vector r(param_dim_);
    for (std::size_t k = 0; k < factors_.size(); ++k)
      r.segment(param_off_[k], factors_[k]->param_dim()) =
          factors_[k]->suff_stat(x.segment(data_off_[k], factors_[k]->data_dim()));
    return r;
  }

  SuffStatDerivatives eval_derivatives(const Eigen::Ref<const Vector>& x) const override {
    SuffStatDerivatives d;
    d.jacobian = Matrix::Zero(data_dim_, param_dim_);
    d.second_diag = Matrix::Zero(data_dim_, param_dim_);
    d.base_grad = Vector::Zero(data_dim_);
    for (std::size_t k = 0; k < factors_.size(); ++k) {
      const Index dd = factors_[k]->data_dim(), pp = factors_[k]->param_dim();
      auto fd = factors_[k]->derivatives(x.segment(data_off_[k], dd));
      d.jacobian.block(data_off_[k], param_off_[k], dd, pp) = fd.jacobian;
      d.second_diag.block(data_off_[k], param_off_[k], dd, pp) = fd.second_diag;
      d.base_grad.segment(data_off_[k], dd) = fd.base_grad;
    }
    return d;
  }

  double eval_base_log_density(const Eigen::Ref<const Vector>& x) const override {
    double b = 0.0;
    for (std::size_t k = 0; k < factors_.size(); ++k)
      b += factors_[k]->base_log_density(x.segment(data_off_[k], factors_[k]->data_dim()));
    return b;
  }

  double eval_log_normalizer(const Eigen::Ref<const Vector>& theta) const override {
    double a = 0.0;
    for (std::size_t k = 0; k < factors_.size(); ++k)
      a += factors_[k]->log_normalizer(theta.segment(param_off_[k], factors_[k]->param_dim()));
    return a;
  }

  Vector eval_mle(const Eigen::Ref<const Matrix>& data) const override {
    Vector theta(param_dim_);
    for (std::size_t k = 0; k < factors_.size(); ++k) {
      try {
        theta.segment(param_off_[k], factors_[k]->param_dim()) =
            factors_[k]->mle(data.middleCols(data_off_[k], factors_[k]->data_dim()));
      } catch (const DegenerateDataError& e) {
        throw DegenerateDataError(cat("product factor ", k, ": ", e.what()));
      }
    }
    return theta;
  }

 private:
  std::vector<ModelPtr> factors_;
  std::vector<Index> data_off_, param_off_;
  Index data_dim_ = 0, param_dim_ = 0;
  Box domain_;
  DataSupport support_ = DataSupport::all_reals;
};

// d independent Gaussian coordinates, each with its own (mean, variance).
inline ModelPtr make_diag_gaussian(Index d) {
  std::vector<ModelPtr> f;
  for (Index i = 0; i < d; ++i) f.push_back(std::make_shared<GaussianModel>());
  return std::make_shared<ProductModel>(std::move(f));
}

// Model selection by identifier: "gaussian", "diag_gaussian:<d>",
// "exponential", "gamma", "gaussian_fixed_var:<var>", "product:<a,b,...>".
ModelPtr make_model(const std::string& id);

namespace detail {
inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto next = s.find(sep, pos);
    if (next == std::string::npos) {
      out.push_back(s.substr(pos));
      break;
    }
    out.push_back(s.substr(pos, next - pos));
    pos = next + 1;
  }
  return out;
}
}  // namespace detail

inline ModelPtr make_model(const std::string& id) {
  if (id == "gaussian") return std::make_shared<GaussianModel>();
  if (id == "exponential") return std::make_shared<ExponentialModel>();
  if (id == "gamma") return std::make_shared<GammaModel>();
  if (id.rfind("gaussian_fixed_var:", 0) == 0)
    return std::make_shared<FixedVarGaussianModel>(std::stod(id.substr(19)));
  if (id.rfind("diag_gaussian:", 0) == 0)
    return make_diag_gaussian(std::stol(id.substr(14)));
  if (id.rfind("product:", 0) == 0) {
    std::vector<ModelPtr> factors;
    for (const auto& part : detail::split(id.substr(8), ','))
      factors.push_back(make_model(part));
    return std::make_shared<ProductModel>(std::move(factors));
  }
  throw std::invalid_argument(cat("unknown model identifier: ", id));
}

}  // namespace dsmbocd
