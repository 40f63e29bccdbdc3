#pragma once

#include <cstdint>
#include <random>

#include "dsmbocd/common.hpp"
#include "dsmbocd/special.hpp"

namespace dsmbocd {

// splitmix64 finalizer; used for seed mixing and substream keys.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Explicitly seeded stream with hand-rolled variate transforms, so that a
// given seed produces the same draws on every platform and every call site.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : gen_(mix64(seed)) {}

  // Independent substream for a (t, r) cell: the value depends only on the
  // key, never on how many draws other cells consumed.
  static RngStream keyed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
    return RngStream(mix64(mix64(base ^ mix64(a)) ^ mix64(~b)));
  }

  std::uint64_t raw() { return gen_(); }

  // Uniform on the open interval (0,1).
  double uniform() { return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    const double u1 = uniform(), u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double exponential(double rate) { return -std::log(uniform()) / rate; }

  // One-dimensional truncated normal by CDF inversion.
  double truncated_normal(double mean, double sd, double lo, double hi) {
    const double a = (lo - mean) / sd, b = (hi - mean) / sd;
    const double Fa = (a == kNegInf) ? 0.0 : normal_cdf(a);
    const double Fb = (b == kInf) ? 1.0 : normal_cdf(b);
    double u = Fa + (Fb - Fa) * uniform();
    u = std::min(std::max(u, 1e-300), 1.0 - 1e-16);
    double z = normal_quantile(u);
    z = std::min(std::max(z, a), b);
    return mean + sd * z;
  }

  // Marsaglia-Tsang for shape >= 1, boosted for shape < 1.
  double gamma(double shape, double rate) {
    if (shape < 1.0) {
      const double u = uniform();
      return gamma(shape + 1.0, rate) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / rate;
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace dsmbocd
