// Command-line front end: detect / generate / calibrate / bench.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "dsmbocd/bench.hpp"
#include "dsmbocd/io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace dsmbocd;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(cat("cannot open ", path.string()));
  out << text << "\n";
}

json timing_json(const SegmentationResult& res) {
  json j;
  j["per_step_nanos"] = res.per_step_nanos;
  j["total_ms"] = res.total_ms;
  return j;
}

int cmd_detect(const std::string& data_path, const std::string& config_path,
               const std::string& out_dir, long seed_override) {
  auto cfg = detector_config_from(parse_config_file(config_path));
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  const Matrix data = load_csv(data_path);
  fs::create_directories(out_dir);

  const auto res = run_detector(cfg, data);
  write_runlength_trace((fs::path(out_dir) / "runlength_trace.csv").string(), res.trace);
  write_text(fs::path(out_dir) / "map_changepoints.json",
             changepoints_json(res.map_changepoints));
  write_text(fs::path(out_dir) / "modal_changepoints.json",
             changepoints_json(res.modal_changepoints));
  write_text(fs::path(out_dir) / "timing.json", timing_json(res).dump(2));

  if (!std::isnan(res.omega_used)) {
    std::printf("omega_used = %.17g\n", res.omega_used);
    if (res.calibration_boundary)
      std::fprintf(stderr,
                   "warning: calibrated omega sits at the search boundary; widen "
                   "calibration.bracket\n");
  }
  std::printf("map_changepoints = %s\n", changepoints_json(res.map_changepoints).c_str());
  if (!res.ok) {
    json err;
    err["error"] = res.error;
    err["steps_completed"] = res.steps_completed;
    write_text(fs::path(out_dir) / "error.json", err.dump(2));
    std::fprintf(stderr, "error: %s (partial results written)\n", res.error.c_str());
    return 1;
  }
  return 0;
}

int cmd_generate(const std::string& spec_path, const std::string& out_path) {
  const auto spec = stream_spec_from(parse_config_file(spec_path));
  const auto stream = generate_stream(spec);
  write_csv(out_path, stream.data);
  json truth;
  truth["changepoints"] = stream.changepoints;
  truth["contaminated_rows"] = stream.contaminated;
  write_text(out_path + ".truth.json", truth.dump(2));
  std::printf("wrote %ld x %ld to %s (changepoints: %s)\n",
              static_cast<long>(stream.data.rows()), static_cast<long>(stream.data.cols()),
              out_path.c_str(), changepoints_json(stream.changepoints).c_str());
  return 0;
}

int cmd_calibrate(const std::string& data_path, const std::string& config_path) {
  auto cfg = detector_config_from(parse_config_file(config_path));
  const Matrix data = load_csv(data_path);
  if (!cfg.omega.auto_calibrate)
    throw std::runtime_error("calibrate: config must set omega = auto:<tstar>");

  auto model = make_model(cfg.model_id);
  const long tstar = std::min<Index>(cfg.omega.tstar, data.rows());
  DiffusionSpec spec = DiffusionSpec::identity();
  if (cfg.diffusion_kind == DiffusionKind::robust) {
    Vector anchor = cfg.anchor_policy == AnchorPolicy::explicit_vector
                        ? cfg.anchor_value
                        : model->mle(cfg.anchor_policy == AnchorPolicy::full_data_mle
                                         ? data
                                         : data.topRows(tstar));
    spec = DiffusionSpec::robust(std::move(anchor));
  }
  StandardBayesPosterior ref = make_baseline(cfg.baseline_family, cfg.baseline_params,
                                             data.cols());
  for (Index t = 0; t < tstar; ++t) ref = ref.updated(data.row(t).transpose());
  CalibrationOptions opts = cfg.calibration;
  opts.seed = mix64(cfg.seed ^ 0xca11b7a7ed5eedULL);
  const auto cal = calibrate_omega(*model, spec, cfg.prior_mean,
                                   Matrix(cfg.prior_cov_diag.asDiagonal()), ref,
                                   data.topRows(tstar), opts);
  std::printf("omega_star = %.17g\n", cal.omega);
  if (cal.at_lower_bound || cal.at_upper_bound)
    std::fprintf(stderr, "warning: minimizer at the %s search bound; widen the bracket\n",
                 cal.at_lower_bound ? "lower" : "upper");
  return 0;
}

int cmd_bench(const std::string& suite, const std::string& out_path) {
  if (suite != "complexity") throw std::runtime_error(cat("unknown bench suite: ", suite));

  DetectorConfig dsm;
  dsm.method = "dsm";
  dsm.model_id = "gaussian";
  dsm.prior_mean = Vector(2);
  dsm.prior_mean << 0.0, 1.0;
  dsm.prior_cov_diag = Vector(2);
  dsm.prior_cov_diag << 10.0, 1.0;
  dsm.anchor_policy = AnchorPolicy::full_data_mle;
  dsm.omega.fixed = 0.2;
  dsm.mc_samples = 128;
  dsm.prune_k = 50;

  DetectorConfig std_cfg;
  std_cfg.method = "standard";
  std_cfg.baseline_family = "nig";
  std_cfg.baseline_params = Vector(4);
  std_cfg.baseline_params << 0.0, 1.0, 2.0, 10.0;
  std_cfg.prune_k = 50;

  const auto report = bench_complexity({{"dsm_pruned", dsm}, {"standard_pruned", std_cfg}},
                                       {100, 1000, 10000}, {1, 2, 4});

  std::printf("%-18s %8s %4s %12s %14s %14s\n", "config", "T", "d", "total_ms",
              "early_step_ns", "late_step_ns");
  for (const auto& row : report.rows)
    std::printf("%-18s %8ld %4ld %12.2f %14.0f %14.0f\n", row.label.c_str(), row.T,
                static_cast<long>(row.d), row.total_ms, row.early_step_ns, row.late_step_ns);
  for (const auto& s : report.slopes)
    std::printf("slope[%s] = %.3f\n", s.label.c_str(), s.slope);

  if (!out_path.empty()) {
    json j;
    for (const auto& row : report.rows)
      j["rows"].push_back({{"config", row.label},
                           {"T", row.T},
                           {"d", row.d},
                           {"total_ms", row.total_ms},
                           {"early_step_ns", row.early_step_ns},
                           {"late_step_ns", row.late_step_ns}});
    for (const auto& s : report.slopes)
      j["slopes"].push_back({{"config", s.label}, {"slope", s.slope}});
    write_text(out_path, j.dump(2));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming Bayesian online changepoint detection with "
               "diffusion score-matching posteriors"};
  app.require_subcommand(1);

  std::string data_path, config_path, out_dir = "out", spec_path, out_path;
  long seed_override = -1;
  std::string suite = "complexity";

  auto* detect = app.add_subcommand("detect", "Run a detector over a CSV stream");
  detect->add_option("--data", data_path, "input CSV")->required();
  detect->add_option("--config", config_path, "detector config file")->required();
  detect->add_option("--out-dir", out_dir, "artifact directory");
  detect->add_option("--seed", seed_override, "override the config seed");

  auto* generate = app.add_subcommand("generate", "Generate a synthetic stream");
  generate->add_option("--spec", spec_path, "stream spec file")->required();
  generate->add_option("--out", out_path, "output CSV path")->required();

  auto* calibrate = app.add_subcommand("calibrate", "Calibrate the learning rate");
  calibrate->add_option("--data", data_path, "input CSV")->required();
  calibrate->add_option("--config", config_path, "detector config file")->required();

  auto* bench = app.add_subcommand("bench", "Run a benchmark suite");
  bench->add_option("--suite", suite, "suite name (complexity)");
  bench->add_option("--out", out_path, "optional JSON report path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (detect->parsed()) return cmd_detect(data_path, config_path, out_dir, seed_override);
    if (generate->parsed()) return cmd_generate(spec_path, out_path);
    if (calibrate->parsed()) return cmd_calibrate(data_path, config_path);
    if (bench->parsed()) return cmd_bench(suite, out_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
