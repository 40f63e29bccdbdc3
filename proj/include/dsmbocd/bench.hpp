#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "dsmbocd/bocd.hpp"
#include "dsmbocd/io.hpp"

namespace dsmbocd {

struct BenchRow {
  std::string label;
  long T = 0;
  Index d = 1;
  double total_ms = 0.0;
  double early_step_ns = 0.0;  // median per-step time near t = 100
  double late_step_ns = 0.0;   // median per-step time near the end
};

struct BenchSlope {
  std::string label;
  double slope = 0.0;  // least-squares slope of log(total) vs log(T)
};

struct BenchReport {
  std::vector<BenchRow> rows;
  std::vector<BenchSlope> slopes;
};

namespace detail {

inline double median_window(const std::vector<long long>& v, std::size_t center,
                            std::size_t half_width) {
  if (v.empty()) return 0.0;
  const std::size_t lo = center > half_width ? center - half_width : 0;
  const std::size_t hi = std::min(v.size(), center + half_width);
  std::vector<long long> w(v.begin() + lo, v.begin() + hi);
  std::sort(w.begin(), w.end());
  return static_cast<double>(w[w.size() / 2]);
}

// Gaussian stream with one mean shift halfway through, at the requested size.
inline Matrix bench_stream(long T, Index d, std::uint64_t seed) {
  StreamSpec spec;
  spec.length = T;
  spec.dim = d;
  spec.seed = seed;
  SegmentSpec s1, s2;
  s1.start = 1;
  s2.start = std::max<long>(2, T / 2);
  for (Index i = 0; i < d; ++i) {
    s1.dims.push_back(DistSpec{DistSpec::Kind::normal, 0.0, 1.0});
    s2.dims.push_back(DistSpec{DistSpec::Kind::normal, 3.0, 1.0});
  }
  spec.segments = {s1, s2};
  return generate_stream(spec).data;
}

}  // namespace detail

// Wall-time table over stream lengths and data dimensions, plus the log-log
// scaling exponent in T per configuration. Configurations must be usable for
// any d in the grid only if the d grid has more than the model's dimension;
// callers pass model-consistent grids.
inline BenchReport bench_complexity(
    const std::vector<std::pair<std::string, DetectorConfig>>& configs,
    const std::vector<long>& T_grid, const std::vector<Index>& d_grid,
    std::uint64_t seed = 1234) {
  BenchReport report;
  if (configs.empty() || T_grid.empty() || d_grid.empty()) return report;

  for (const auto& [label, cfg] : configs) {
    std::vector<double> log_T, log_ms;
    for (long T : T_grid) {
      const Matrix data = detail::bench_stream(T, d_grid.front(), seed);
      // Repeat short runs and keep the fastest to tame timer noise.
      const int reps = T <= 300 ? 3 : 1;
      SegmentationResult best;
      for (int rep = 0; rep < reps; ++rep) {
        auto res = run_detector(cfg, data);
        if (!res.ok) throw std::runtime_error(cat("bench: ", label, ": ", res.error));
        if (rep == 0 || res.total_ms < best.total_ms) best = std::move(res);
      }
      BenchRow row;
      row.label = label;
      row.T = T;
      row.d = d_grid.front();
      row.total_ms = best.total_ms;
      row.early_step_ns = detail::median_window(best.per_step_nanos, 100, 20);
      row.late_step_ns =
          detail::median_window(best.per_step_nanos, best.per_step_nanos.size() - 21, 20);
      report.rows.push_back(row);
      log_T.push_back(std::log(static_cast<double>(T)));
      log_ms.push_back(std::log(best.total_ms));
    }
    // Least-squares slope of log(total time) against log(T).
    const double n = static_cast<double>(log_T.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < log_T.size(); ++i) {
      sx += log_T[i];
      sy += log_ms[i];
      sxx += log_T[i] * log_T[i];
      sxy += log_T[i] * log_ms[i];
    }
    BenchSlope s;
    s.label = label;
    s.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    report.slopes.push_back(s);

    // Dimension sweep at the smallest T (wall time only).
    for (std::size_t di = 1; di < d_grid.size(); ++di) {
      DetectorConfig dcfg = cfg;
      const Index d = d_grid[di];
      if (dcfg.method == "dsm") {
        dcfg.model_id = cat("diag_gaussian:", d);
        Vector mean(2 * d), cov(2 * d);
        for (Index i = 0; i < d; ++i) {
          mean(2 * i) = 0.0;
          mean(2 * i + 1) = 1.0;
          cov(2 * i) = 10.0;
          cov(2 * i + 1) = 1.0;
        }
        dcfg.prior_mean = mean;
        dcfg.prior_cov_diag = cov;
      } else {
        Vector params(2 + 2 * d);
        params(0) = 1.0;
        params(1) = d + 2.0;
        params.segment(2, d).setZero();
        params.tail(d).setOnes();
        dcfg.baseline_family = "niw";
        dcfg.baseline_params = params;
      }
      const Matrix data = detail::bench_stream(T_grid.front(), d, seed);
      auto res = run_detector(dcfg, data);
      if (!res.ok) throw std::runtime_error(cat("bench: ", label, ": ", res.error));
      BenchRow row;
      row.label = label;
      row.T = T_grid.front();
      row.d = d;
      row.total_ms = res.total_ms;
      row.early_step_ns = detail::median_window(res.per_step_nanos, 100, 20);
      row.late_step_ns =
          detail::median_window(res.per_step_nanos, res.per_step_nanos.size() - 21, 20);
      report.rows.push_back(row);
    }
  }
  return report;
}

}  // namespace dsmbocd
