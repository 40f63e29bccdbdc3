#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dsmbocd/bocd.hpp"
#include "dsmbocd/rng.hpp"

namespace dsmbocd {

// ---------------------------------------------------------------------------
// CSV

struct CsvOptions {
  enum class Header { auto_detect, yes, no };
  Header header = Header::auto_detect;
  char delimiter = ',';
  std::vector<Index> columns;  // empty = all columns
};

namespace detail {

inline std::optional<double> parse_double(std::string_view sv) {
  while (!sv.empty() && (sv.front() == ' ' || sv.front() == '\t')) sv.remove_prefix(1);
  while (!sv.empty() && (sv.back() == ' ' || sv.back() == '\t' || sv.back() == '\r'))
    sv.remove_suffix(1);
  if (sv.empty()) return std::nullopt;
  double value = 0.0;
  const auto* end = sv.data() + sv.size();
  const auto res = std::from_chars(sv.data(), end, value);
  if (res.ec != std::errc() || res.ptr != end) return std::nullopt;
  if (std::isnan(value)) return std::nullopt;
  return value;
}

inline std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> cells;
  std::size_t pos = 0;
  while (true) {
    const auto next = line.find(delim, pos);
    if (next == std::string::npos) {
      cells.push_back(line.substr(pos));
      break;
    }
    cells.push_back(line.substr(pos, next - pos));
    pos = next + 1;
  }
  if (!cells.empty() && !cells.back().empty() && cells.back().back() == '\r')
    cells.back().pop_back();
  return cells;
}

}  // namespace detail

// Loads a numeric matrix; row order preserved. Errors cite the offending
// physical line and column (1-based). Blank or non-numeric cells are
// rejected rather than imputed.
inline Matrix load_csv(const std::string& path, const CsvOptions& options = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(cat("load_csv: cannot open ", path));

  std::vector<std::vector<double>> rows;
  std::string line;
  long line_no = 0;
  bool header_pending = options.header != CsvOptions::Header::no;
  Index width = -1;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = detail::split_line(line, options.delimiter);
    if (!options.columns.empty()) {
      std::vector<std::string> picked;
      for (Index c : options.columns) {
        if (c < 0 || c >= static_cast<Index>(cells.size()))
          throw std::runtime_error(
              cat("load_csv: row ", line_no, " has no column ", c, " (", path, ")"));
        picked.push_back(cells[c]);
      }
      cells = std::move(picked);
    }
    std::vector<double> vals;
    vals.reserve(cells.size());
    bool numeric = true;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto v = detail::parse_double(cells[c]);
      if (!v) {
        if (header_pending && line_no == 1) {
          numeric = false;
          break;
        }
        throw std::runtime_error(cat("load_csv: non-numeric cell at row ", line_no,
                                     ", column ", c + 1, " (", path, ")"));
      }
      vals.push_back(*v);
    }
    if (!numeric) {  // consumed a header line
      header_pending = false;
      continue;
    }
    if (header_pending && options.header == CsvOptions::Header::yes && line_no == 1) {
      header_pending = false;
      continue;
    }
    header_pending = false;
    if (width < 0)
      width = static_cast<Index>(vals.size());
    else if (width != static_cast<Index>(vals.size()))
      throw std::runtime_error(cat("load_csv: row ", line_no, " has ", vals.size(),
                                   " cells, expected ", width, " (", path, ")"));
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw std::runtime_error(cat("load_csv: no data rows in ", path));

  Matrix out(static_cast<Index>(rows.size()), width);
  for (Index t = 0; t < out.rows(); ++t)
    for (Index c = 0; c < width; ++c) out(t, c) = rows[t][c];
  return out;
}

// 17 significant digits: doubles round-trip bit-exactly through the file.
inline void write_csv(const std::string& path, const Eigen::Ref<const Matrix>& data,
                      const std::string& header = "") {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(cat("write_csv: cannot open ", path));
  if (!header.empty()) out << header << "\n";
  char buf[40];
  for (Index t = 0; t < data.rows(); ++t) {
    for (Index c = 0; c < data.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", data(t, c));
      out << (c ? "," : "") << buf;
    }
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// Synthetic streams

struct DistSpec {
  enum class Kind { normal, exponential, gamma_dist };
  Kind kind = Kind::normal;
  double a = 0.0;  // normal: mean;   exponential: rate; gamma: shape
  double b = 1.0;  // normal: stddev;                    gamma: rate

  double draw(RngStream& rng) const {
    switch (kind) {
      case Kind::normal:
        return a + b * rng.normal();
      case Kind::exponential:
        return rng.exponential(a);
      case Kind::gamma_dist:
        return rng.gamma(a, b);
    }
    return 0.0;
  }

  // "normal(m,sd)" | "exponential(rate)" | "gamma(shape,rate)"
  static DistSpec parse(const std::string& text);
};

struct SegmentSpec {
  long start = 1;               // 1-based first time index of the segment
  std::vector<DistSpec> dims;   // one generator per data dimension
};

struct ContaminationSpec {
  double rate = 0.0;  // epsilon in [0,1)
  enum class Kind { none, delta, normal } kind = Kind::none;
  Vector value;   // delta: replacement row (scalar broadcasts)
  double mean = 0.0, sd = 1.0;  // normal outliers
};

struct StreamSpec {
  long length = 0;
  Index dim = 1;
  std::vector<SegmentSpec> segments;
  ContaminationSpec contamination;
  std::uint64_t seed = 1;
};

struct GeneratedStream {
  Matrix data;                      // length x dim
  std::vector<long> changepoints;   // segment starts after the first
  std::vector<long> contaminated;   // rows that were replaced (1-based)
};

inline GeneratedStream generate_stream(const StreamSpec& spec) {
  if (spec.length <= 0) throw std::invalid_argument("generate: length must be positive");
  if (spec.segments.empty() || spec.segments.front().start != 1)
    throw std::invalid_argument("generate: segments must tile [1, T] starting at 1");
  for (std::size_t k = 0; k < spec.segments.size(); ++k) {
    if (static_cast<Index>(spec.segments[k].dims.size()) != spec.dim)
      throw std::invalid_argument(cat("generate: segment ", k + 1, " defines ",
                                      spec.segments[k].dims.size(), " dims, expected ",
                                      spec.dim));
    if (k > 0 && spec.segments[k].start <= spec.segments[k - 1].start)
      throw std::invalid_argument("generate: segment starts must be strictly increasing");
    if (spec.segments[k].start > spec.length)
      throw std::invalid_argument("generate: segment start beyond stream length");
  }
  if (!(spec.contamination.rate >= 0.0 && spec.contamination.rate < 1.0))
    throw std::invalid_argument("generate: contamination rate must be in [0,1)");

  GeneratedStream out;
  out.data.resize(spec.length, spec.dim);
  RngStream rng(spec.seed);
  std::size_t seg = 0;
  for (long t = 1; t <= spec.length; ++t) {
    while (seg + 1 < spec.segments.size() && spec.segments[seg + 1].start == t) {
      ++seg;
      out.changepoints.push_back(t);
    }
    for (Index i = 0; i < spec.dim; ++i)
      out.data(t - 1, i) = spec.segments[seg].dims[i].draw(rng);
  }
  if (spec.contamination.kind != ContaminationSpec::Kind::none &&
      spec.contamination.rate > 0.0) {
    for (long t = 0; t < spec.length; ++t) {
      if (rng.uniform() >= spec.contamination.rate) continue;
      out.contaminated.push_back(t + 1);
      for (Index i = 0; i < spec.dim; ++i) {
        if (spec.contamination.kind == ContaminationSpec::Kind::delta) {
          out.data(t, i) = spec.contamination.value.size() == 1
                               ? spec.contamination.value(0)
                               : spec.contamination.value(i);
        } else {
          out.data(t, i) = spec.contamination.mean + spec.contamination.sd * rng.normal();
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Flat key = value configuration files

inline std::map<std::string, std::string> parse_config_text(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  long line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(cat("config: line ", line_no, " is not 'key = value'"));
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(cat("config: cannot open ", path));
  return parse_config_text(in);
}

namespace detail {

inline Vector parse_vector(const std::string& text) {
  if (text.empty()) return Vector();
  const auto parts = dsmbocd::detail::split(text, ',');
  Vector v(static_cast<Index>(parts.size()));
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto d = parse_double(parts[i]);
    if (!d) throw std::runtime_error(cat("config: bad number '", parts[i], "'"));
    v(static_cast<Index>(i)) = *d;
  }
  return v;
}

inline std::string get_or(const std::map<std::string, std::string>& kv, const std::string& key,
                          const std::string& fallback) {
  const auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

}  // namespace detail

inline DistSpec DistSpec::parse(const std::string& text) {
  const auto open = text.find('(');
  const auto close = text.rfind(')');
  if (open == std::string::npos || close == std::string::npos || close < open)
    throw std::runtime_error(cat("bad distribution spec: ", text));
  const std::string name = text.substr(0, open);
  const Vector args = detail::parse_vector(text.substr(open + 1, close - open - 1));
  DistSpec d;
  if (name == "normal") {
    if (args.size() != 2) throw std::runtime_error("normal(mean,sd) expects 2 arguments");
    d.kind = Kind::normal;
    d.a = args(0);
    d.b = args(1);
  } else if (name == "exponential") {
    if (args.size() != 1) throw std::runtime_error("exponential(rate) expects 1 argument");
    d.kind = Kind::exponential;
    d.a = args(0);
  } else if (name == "gamma") {
    if (args.size() != 2) throw std::runtime_error("gamma(shape,rate) expects 2 arguments");
    d.kind = Kind::gamma_dist;
    d.a = args(0);
    d.b = args(1);
  } else {
    throw std::runtime_error(cat("unknown distribution: ", name));
  }
  return d;
}

// Stream spec keys: length, dim, seed, segment.<k>.start, segment.<k>.dims
// (pipe-separated distribution specs), contamination.{rate,kind,value,mean,sd}.
inline StreamSpec stream_spec_from(const std::map<std::string, std::string>& kv) {
  StreamSpec spec;
  spec.length = std::stol(detail::get_or(kv, "length", "0"));
  spec.dim = std::stol(detail::get_or(kv, "dim", "1"));
  spec.seed = std::stoull(detail::get_or(kv, "seed", "1"));
  for (long k = 1;; ++k) {
    const auto start_key = cat("segment.", k, ".start");
    const auto it = kv.find(start_key);
    if (it == kv.end()) break;
    SegmentSpec seg;
    seg.start = std::stol(it->second);
    const auto dims_it = kv.find(cat("segment.", k, ".dims"));
    if (dims_it == kv.end()) throw std::runtime_error(cat("missing segment.", k, ".dims"));
    for (auto& part : dsmbocd::detail::split(dims_it->second, '|')) {
      const auto b = part.find_first_not_of(" \t");
      if (b == std::string::npos)
        throw std::runtime_error(cat("empty distribution in segment.", k, ".dims"));
      const auto e = part.find_last_not_of(" \t");
      seg.dims.push_back(DistSpec::parse(part.substr(b, e - b + 1)));
    }
    spec.segments.push_back(std::move(seg));
  }
  const auto rate = detail::get_or(kv, "contamination.rate", "0");
  spec.contamination.rate = std::stod(rate);
  const auto kind = detail::get_or(kv, "contamination.kind", "none");
  if (spec.contamination.rate > 0.0 && kind != "none") {
    if (kind == "delta") {
      spec.contamination.kind = ContaminationSpec::Kind::delta;
      spec.contamination.value = detail::parse_vector(detail::get_or(kv, "contamination.value", "0"));
    } else if (kind == "normal") {
      spec.contamination.kind = ContaminationSpec::Kind::normal;
      spec.contamination.mean = std::stod(detail::get_or(kv, "contamination.mean", "0"));
      spec.contamination.sd = std::stod(detail::get_or(kv, "contamination.sd", "1"));
    } else {
      throw std::runtime_error(cat("unknown contamination kind: ", kind));
    }
  }
  return spec;
}

// Detector config keys, all flat:
//   method, model, prior.mean, prior.cov_diag, diffusion.kind,
//   diffusion.anchor_policy, diffusion.anchor_prefix, omega,
//   calibration.samples, calibration.bracket, predictive.samples,
//   baseline.family, baseline.params, hazard.h, prune.k, seed
inline DetectorConfig detector_config_from(const std::map<std::string, std::string>& kv) {
  DetectorConfig cfg;
  cfg.method = detail::get_or(kv, "method", "dsm");
  cfg.model_id = detail::get_or(kv, "model", "gaussian");
  cfg.prior_mean = detail::parse_vector(detail::get_or(kv, "prior.mean", ""));
  cfg.prior_cov_diag = detail::parse_vector(detail::get_or(kv, "prior.cov_diag", ""));

  const auto kind = detail::get_or(kv, "diffusion.kind", "robust");
  if (kind == "identity")
    cfg.diffusion_kind = DiffusionKind::identity;
  else if (kind == "robust")
    cfg.diffusion_kind = DiffusionKind::robust;
  else
    throw std::runtime_error(cat("unknown diffusion.kind: ", kind));

  const auto anchor = detail::get_or(kv, "diffusion.anchor_policy", "prefix_mle");
  if (anchor == "full_data_mle")
    cfg.anchor_policy = AnchorPolicy::full_data_mle;
  else if (anchor == "prefix_mle")
    cfg.anchor_policy = AnchorPolicy::prefix_mle;
  else if (anchor.rfind("explicit:", 0) == 0) {
    cfg.anchor_policy = AnchorPolicy::explicit_vector;
    cfg.anchor_value = detail::parse_vector(anchor.substr(9));
  } else {
    throw std::runtime_error(cat("unknown diffusion.anchor_policy: ", anchor));
  }
  cfg.anchor_prefix = std::stol(detail::get_or(kv, "diffusion.anchor_prefix", "100"));

  const auto omega = detail::get_or(kv, "omega", "fixed:0.1");
  if (omega.rfind("auto:", 0) == 0) {
    cfg.omega.auto_calibrate = true;
    cfg.omega.tstar = std::stol(omega.substr(5));
  } else if (omega.rfind("fixed:", 0) == 0) {
    cfg.omega.auto_calibrate = false;
    cfg.omega.fixed = std::stod(omega.substr(6));
  } else {
    throw std::runtime_error(cat("omega must be auto:<tstar> or fixed:<value>, got ", omega));
  }

  cfg.calibration.samples = std::stoi(detail::get_or(kv, "calibration.samples", "2048"));
  const auto bracket = detail::parse_vector(detail::get_or(kv, "calibration.bracket", "1e-8,100"));
  if (bracket.size() != 2) throw std::runtime_error("calibration.bracket expects lo,hi");
  cfg.calibration.omega_min = bracket(0);
  cfg.calibration.omega_max = bracket(1);

  cfg.predictive_mode = detail::get_or(kv, "predictive.mode", "monte_carlo");
  cfg.mc_samples = std::stol(detail::get_or(kv, "predictive.samples", "1000"));
  cfg.baseline_family = detail::get_or(kv, "baseline.family", "nig");
  cfg.baseline_params = detail::parse_vector(detail::get_or(kv, "baseline.params", ""));
  cfg.hazard.h = std::stod(detail::get_or(kv, "hazard.h", "0.01"));
  cfg.prune_k = std::stol(detail::get_or(kv, "prune.k", "50"));
  cfg.seed = std::stoull(detail::get_or(kv, "seed", "1"));
  return cfg;
}

// ---------------------------------------------------------------------------
// Detector artifacts: plot-ready CSV/JSON emitted by the CLI and tests.

inline void write_runlength_trace(const std::string& path,
                                  const std::vector<StepRecord>& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(cat("cannot open ", path));
  out << "t,r,log_prob\n";
  char buf[40];
  for (std::size_t t = 0; t < trace.size(); ++t) {
    for (std::size_t i = 0; i < trace[t].r.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", trace[t].log_prob[i]);
      out << (t + 1) << "," << trace[t].r[i] << "," << buf << "\n";
    }
  }
}

inline std::string changepoints_json(const std::vector<long>& cps) {
  std::string s = "[";
  for (std::size_t i = 0; i < cps.size(); ++i) s += (i ? "," : "") + std::to_string(cps[i]);
  return s + "]";
}

}  // namespace dsmbocd
