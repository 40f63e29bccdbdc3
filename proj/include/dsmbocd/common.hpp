#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

namespace dsmbocd {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Eigen::Index;

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Thrown when a model cannot be fit (e.g. zero sample variance).
class DegenerateDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Stable log(sum(exp(v))); -inf for empty or all -inf input.
template <class Derived>
double logsumexp(const Eigen::DenseBase<Derived>& v) {
  if (v.size() == 0) return kNegInf;
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;  // all -inf (or nan propagates)
  double acc = 0.0;
  for (Index i = 0; i < v.size(); ++i) acc += std::exp(v(i) - m);
  return m + std::log(acc);
}

inline double logsumexp2(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Open axis-aligned box; used both as a parameter domain and as the
// truncation region of a posterior. Infinite bounds are allowed.
struct Box {
  Vector lo;
  Vector hi;

  Box() = default;
  Box(Vector l, Vector h) : lo(std::move(l)), hi(std::move(h)) {
    if (lo.size() != hi.size()) throw std::invalid_argument("Box: bound size mismatch");
    for (Index i = 0; i < lo.size(); ++i)
      if (!(lo(i) < hi(i))) throw std::invalid_argument("Box: empty interval");
  }

  static Box unbounded(Index p) {
    return Box(Vector::Constant(p, kNegInf), Vector::Constant(p, kInf));
  }

  Index dim() const { return lo.size(); }

  bool contains(const Eigen::Ref<const Vector>& x) const {
    for (Index i = 0; i < lo.size(); ++i)
      if (!(x(i) > lo(i) && x(i) < hi(i))) return false;
    return true;
  }

  bool is_unbounded() const {
    return (lo.array() == kNegInf).all() && (hi.array() == kInf).all();
  }

  // Concatenation, for product-structured parameter spaces.
  static Box concat(const Box& a, const Box& b) {
    Vector l(a.dim() + b.dim()), h(a.dim() + b.dim());
    l << a.lo, b.lo;
    h << a.hi, b.hi;
    return Box(std::move(l), std::move(h));
  }
};

template <class... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

}  // namespace dsmbocd
