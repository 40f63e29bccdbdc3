#pragma once

#include <algorithm>
#include <chrono>
#include <numeric>
#include <optional>
#include <vector>

#include "dsmbocd/calibration.hpp"
#include "dsmbocd/dsm_posterior.hpp"
#include "dsmbocd/standard_bayes.hpp"

namespace dsmbocd {

struct HazardSpec {
  double h = 0.01;  // constant hazard, in (0,1)

  void validate() const {
    if (!(h > 0.0 && h < 1.0)) throw std::invalid_argument("hazard h must be in (0,1)");
  }
};

// Monte Carlo posterior predictive log((1/S) sum_s p_theta_s(x)) with theta_s
// drawn from the (truncated) posterior. The stream must be keyed by (t, r) by
// the caller so the value is independent of evaluation order.
inline double dsm_log_predictive(const GaussianPosteriorParams& post,
                                 const NaturalExpFamilyModel& model,
                                 const Eigen::Ref<const Vector>& suff_stat,
                                 double base_log_density, Index samples, RngStream& stream) {
  const Matrix draws = sample(post, stream, samples);
  Vector logp(samples);
  for (Index s = 0; s < samples; ++s) {
    const Vector theta = draws.row(s).transpose();
    logp(s) = theta.dot(suff_stat) - model.log_normalizer(theta) + base_log_density;
  }
  const double v = logsumexp(logp) - std::log(static_cast<double>(samples));
  if (std::isnan(v))
    throw std::runtime_error("dsm_log_predictive: non-finite density under sampled parameters");
  return v;
}

inline double dsm_log_predictive(const GaussianPosteriorParams& post,
                                 const NaturalExpFamilyModel& model,
                                 const Eigen::Ref<const Vector>& x, Index samples,
                                 RngStream& stream) {
  return dsm_log_predictive(post, model, model.suff_stat(x), model.base_log_density(x),
                            samples, stream);
}

// ---------------------------------------------------------------------------
// Segment policies: what the filter needs from a per-segment posterior.

class DsmSegmentPolicy {
 public:
  using Posterior = GaussianPosteriorParams;

  struct Prepared {
    Matrix J;          // diag(m(x)) grad_r(x), d x p
    Vector nu;         // nu(x)
    Vector suff_stat;  // r(x)
    double base_log_density;
  };

  DsmSegmentPolicy(ModelPtr model, DiffusionSpec spec, double omega, Index mc_samples,
                   std::uint64_t seed, const Eigen::Ref<const Vector>& prior_mean,
                   const Eigen::Ref<const Matrix>& prior_cov)
      : model_(std::move(model)),
        spec_(std::move(spec)),
        omega_(omega),
        mc_samples_(mc_samples),
        seed_(seed),
        prior_(make_prior(*model_, prior_mean, prior_cov)) {
    if (!(omega_ >= 0.0)) throw std::invalid_argument("omega must be >= 0");
    if (mc_samples_ <= 0) throw std::invalid_argument("mc_samples must be > 0");
    spec_.validate(*model_);
  }

  const NaturalExpFamilyModel& model() const { return *model_; }
  double omega() const { return omega_; }
  const Posterior& prior() const { return prior_; }

  // All per-observation summaries, computed once per filter step and shared
  // by every run-length hypothesis.
  Prepared prepare(const Eigen::Ref<const Vector>& x) const {
    Prepared p;
    const auto der = model_->derivatives(x);
    Vector m_sq, dm_sq;
    detail::diffusion_sq(spec_, der, m_sq, dm_sq);
    p.J = m_sq.array().sqrt().matrix().asDiagonal() * der.jacobian;
    const auto s = loss_summary_from(spec_, der);
    p.nu = s.nu;
    p.suff_stat = model_->suff_stat(x);
    p.base_log_density = model_->base_log_density(x);
    return p;
  }

  // The stream is keyed by (t, count of the conditioning segment). Within a
  // step the count identifies the predicting posterior, so hypotheses that
  // condition on the same data (the r = 0 and r = 1 branches at t = 1, the
  // two oldest run lengths in general) share one estimate and the predictive
  // factor cancels exactly where it should.
  double log_predictive(const Posterior& post, const Prepared& prep, long t, long) const {
    RngStream stream = RngStream::keyed(seed_, static_cast<std::uint64_t>(t),
                                        static_cast<std::uint64_t>(post.count));
    return dsm_log_predictive(post, *model_, prep.suff_stat, prep.base_log_density,
                              mc_samples_, stream);
  }

  Posterior updated(const Posterior& post, const Prepared& prep) const {
    Posterior next = post;
    online_update(next, prep.J, prep.nu, omega_);
    return next;
  }

 private:
  ModelPtr model_;
  DiffusionSpec spec_;
  double omega_;
  Index mc_samples_;
  std::uint64_t seed_;
  Posterior prior_;
};

class StandardSegmentPolicy {
 public:
  using Posterior = StandardBayesPosterior;

  struct Prepared {
    Vector x;
  };

  explicit StandardSegmentPolicy(StandardBayesPosterior prior) : prior_(std::move(prior)) {}

  const Posterior& prior() const { return prior_; }

  Prepared prepare(const Eigen::Ref<const Vector>& x) const { return Prepared{x}; }

  double log_predictive(const Posterior& post, const Prepared& prep, long, long) const {
    return post.log_predictive(prep.x);
  }

  Posterior updated(const Posterior& post, const Prepared& prep) const {
    return post.updated(prep.x);
  }

 private:
  Posterior prior_;
};

// ---------------------------------------------------------------------------
// Run-length filter.

// Per-step record, sufficient both for emitting the run-length posterior
// trace and for the max-a-posteriori recursion afterwards.
struct StepRecord {
  std::vector<long> r;                // surviving run lengths, ascending
  std::vector<double> log_prob;       // normalized log p(r_t | x_{1:t})
  std::vector<double> growth_score;   // log_pred + log(1-h) into entry r (r>=1)
  double cp_score = kNegInf;          // log_pred_prior + log(h) into r = 0
};

template <class Policy>
class RunLengthFilter {
 public:
  struct Entry {
    long r;
    double log_joint;  // log p(r_t, x_{1:t})
    typename Policy::Posterior post;
  };

  // prune_k <= 0 keeps every run length (exact filter).
  RunLengthFilter(Policy policy, HazardSpec hazard, long prune_k)
      : policy_(std::move(policy)), hazard_(hazard), prune_k_(prune_k) {
    hazard_.validate();
    entries_.push_back(Entry{0, 0.0, policy_.prior()});
  }

  long time() const { return time_; }
  double log_evidence() const { return log_evidence_; }
  const std::vector<Entry>& entries() const { return entries_; }
  const std::vector<StepRecord>& trace() const { return trace_; }
  const std::vector<long long>& per_step_nanos() const { return per_step_nanos_; }
  const Policy& policy() const { return policy_; }

  void step(const Eigen::Ref<const Vector>& x) {
    const auto t_start = std::chrono::steady_clock::now();
    const long t = time_ + 1;
    const auto prep = policy_.prepare(x);

    const double log_h = std::log(hazard_.h);
    const double log_1mh = std::log1p(-hazard_.h);

    const double lp_prior = policy_.log_predictive(policy_.prior(), prep, t, 0);
    std::vector<double> lp_growth(entries_.size());
    double best = lp_prior;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      lp_growth[i] = policy_.log_predictive(entries_[i].post, prep, t, entries_[i].r + 1);
      best = std::max(best, lp_growth[i]);
    }
    if (best == kNegInf)
      throw std::runtime_error(cat("step t=", t, ": observation has zero predictive density"));

    struct Cand {
      Entry entry;
      double growth_score;  // NaN for the r = 0 candidate
    };
    std::vector<Cand> cand;
    cand.reserve(entries_.size() + 1);

    // Changepoint branch: every previous hypothesis feeds r = 0 through the
    // hazard; the fresh segment predicts from the prior alone.
    Vector prev(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i) prev(i) = entries_[i].log_joint;
    const double cp_mass = logsumexp(prev) + log_h + lp_prior;
    cand.push_back(Cand{Entry{0, cp_mass, policy_.updated(policy_.prior(), prep)},
                        std::numeric_limits<double>::quiet_NaN()});

    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const double score = lp_growth[i] + log_1mh;
      cand.push_back(Cand{Entry{entries_[i].r + 1, entries_[i].log_joint + score,
                                policy_.updated(entries_[i].post, prep)},
                          score});
    }

    // Keep the k most probable run lengths; r = 0 always survives.
    if (prune_k_ > 0 && static_cast<long>(cand.size()) > prune_k_) {
      std::vector<std::size_t> order(cand.size());
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return cand[a].entry.log_joint > cand[b].entry.log_joint;
      });
      order.resize(prune_k_);
      if (std::find(order.begin(), order.end(), 0u) == order.end()) order.back() = 0;
      std::sort(order.begin(), order.end());  // candidate index order == r order
      std::vector<Cand> kept;
      kept.reserve(order.size());
      for (auto idx : order) kept.push_back(std::move(cand[idx]));
      cand = std::move(kept);
    }

    entries_.clear();
    StepRecord rec;
    rec.cp_score = log_h + lp_prior;
    Vector joints(cand.size());
    for (std::size_t i = 0; i < cand.size(); ++i) joints(i) = cand[i].entry.log_joint;
    log_evidence_ = logsumexp(joints);
    for (auto& c : cand) {
      rec.r.push_back(c.entry.r);
      rec.log_prob.push_back(c.entry.log_joint - log_evidence_);
      rec.growth_score.push_back(c.growth_score);
      entries_.push_back(std::move(c.entry));
    }
    trace_.push_back(std::move(rec));
    time_ = t;
    per_step_nanos_.push_back(std::chrono::duration_cast<std::chrono::nanoseconds>(
                                  std::chrono::steady_clock::now() - t_start)
                                  .count());
  }

 private:
  Policy policy_;
  HazardSpec hazard_;
  long prune_k_;
  long time_ = 0;
  double log_evidence_ = 0.0;
  std::vector<Entry> entries_;
  std::vector<StepRecord> trace_;
  std::vector<long long> per_step_nanos_;
};

// ---------------------------------------------------------------------------
// Point estimates from the recorded trace.

namespace detail {

inline std::optional<std::size_t> find_r(const StepRecord& rec, long r) {
  const auto it = std::lower_bound(rec.r.begin(), rec.r.end(), r);
  if (it == rec.r.end() || *it != r) return std::nullopt;
  return static_cast<std::size_t>(it - rec.r.begin());
}

}  // namespace detail

// Viterbi recursion over the run-length lattice. Growth links each surviving
// r >= 1 to r - 1 at the previous step; the r = 0 node links to the best
// predecessor. Returns the times at which the best path restarts a segment.
inline std::vector<long> map_segmentation(const std::vector<StepRecord>& trace) {
  const std::size_t T = trace.size();
  if (T == 0) return {};
  std::vector<std::vector<double>> v(T);
  std::vector<long> cp_parent(T, 0);  // argmax predecessor of the r = 0 node

  for (std::size_t t = 0; t < T; ++t) {
    const auto& rec = trace[t];
    v[t].assign(rec.r.size(), kNegInf);
    for (std::size_t i = 0; i < rec.r.size(); ++i) {
      const long r = rec.r[i];
      if (r == 0) {
        if (t == 0) {
          v[t][i] = rec.cp_score;
        } else {
          double best = kNegInf;
          long best_r = 0;
          for (std::size_t j = 0; j < trace[t - 1].r.size(); ++j) {
            if (v[t - 1][j] > best) {
              best = v[t - 1][j];
              best_r = trace[t - 1].r[j];
            }
          }
          v[t][i] = best + rec.cp_score;
          cp_parent[t] = best_r;
        }
      } else if (t == 0) {
        if (r == 1) v[t][i] = rec.growth_score[i];  // grew out of the empty state
      } else {
        const auto j = detail::find_r(trace[t - 1], r - 1);
        if (j) v[t][i] = v[t - 1][*j] + rec.growth_score[i];
      }
    }
  }

  // Backtrack from the best terminal run length.
  long r = 0;
  double best = kNegInf;
  for (std::size_t i = 0; i < trace[T - 1].r.size(); ++i) {
    if (v[T - 1][i] > best) {
      best = v[T - 1][i];
      r = trace[T - 1].r[i];
    }
  }
  std::vector<long> cps;
  for (std::size_t t = T; t-- > 0;) {
    if (r == 0) {
      cps.push_back(static_cast<long>(t) + 1);
      r = (t > 0) ? cp_parent[t] : 0;
    } else {
      --r;
    }
  }
  std::reverse(cps.begin(), cps.end());
  return cps;
}

inline std::vector<long> modal_run_lengths(const std::vector<StepRecord>& trace) {
  std::vector<long> modal(trace.size());
  for (std::size_t t = 0; t < trace.size(); ++t) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < trace[t].r.size(); ++i)
      if (trace[t].log_prob[i] > trace[t].log_prob[arg]) arg = i;
    modal[t] = trace[t].r[arg];
  }
  return modal;
}

// Times at which the most likely run length drops; a cheap companion estimate
// to the Viterbi segmentation.
inline std::vector<long> modal_changepoints(const std::vector<StepRecord>& trace) {
  const auto modal = modal_run_lengths(trace);
  std::vector<long> cps;
  for (std::size_t t = 1; t < modal.size(); ++t)
    if (modal[t] < modal[t - 1]) cps.push_back(static_cast<long>(t) + 1);
  return cps;
}

// ---------------------------------------------------------------------------
// Detector orchestration.

enum class AnchorPolicy { full_data_mle, prefix_mle, explicit_vector };

struct OmegaPolicy {
  bool auto_calibrate = false;
  double fixed = 0.1;
  long tstar = 50;  // calibration window for auto mode
};

struct DetectorConfig {
  std::string method = "dsm";  // "dsm" | "standard"

  // dsm method
  std::string model_id = "gaussian";
  Vector prior_mean;
  Vector prior_cov_diag;
  DiffusionKind diffusion_kind = DiffusionKind::robust;
  AnchorPolicy anchor_policy = AnchorPolicy::prefix_mle;
  Vector anchor_value;      // explicit anchor
  long anchor_prefix = 100;  // prefix_mle window when omega is fixed
  OmegaPolicy omega;
  CalibrationOptions calibration;
  // Generalised-posterior predictives are sampled; no model registers a
  // closed form, and asking for one is an error.
  std::string predictive_mode = "monte_carlo";
  Index mc_samples = 1000;

  // standard method; also the calibration reference for auto omega.
  // Layouts: known_variance = [mean0, var0, obs_var]; nig = [mu0, nu, alpha,
  // beta]; niw = [kappa, dof, mu0 x d, psi_diag x d].
  std::string baseline_family = "nig";
  Vector baseline_params;

  HazardSpec hazard{0.01};
  long prune_k = 50;
  std::uint64_t seed = 1;
};

inline StandardBayesPosterior make_baseline(const std::string& family,
                                            const Eigen::Ref<const Vector>& params,
                                            Index data_dim) {
  if (family == "known_variance") {
    if (params.size() != 3)
      throw std::invalid_argument("known_variance baseline expects [mean0, var0, obs_var]");
    return StandardBayesPosterior::known_variance(params(0), params(1), params(2));
  }
  if (family == "nig") {
    if (params.size() != 4)
      throw std::invalid_argument("nig baseline expects [mu0, nu, alpha, beta]");
    return StandardBayesPosterior::nig(params(0), params(1), params(2), params(3));
  }
  if (family == "niw") {
    if (params.size() != 2 + 2 * data_dim)
      throw std::invalid_argument("niw baseline expects [kappa, dof, mu0 x d, psi_diag x d]");
    Vector mu0 = params.segment(2, data_dim);
    Matrix psi = params.tail(data_dim).asDiagonal();
    return StandardBayesPosterior::niw(std::move(mu0), params(0), params(1), std::move(psi));
  }
  throw std::invalid_argument(cat("unknown baseline family: ", family));
}

struct SegmentationResult {
  std::vector<StepRecord> trace;
  std::vector<long> map_changepoints;
  std::vector<long> modal_changepoints;
  std::vector<long long> per_step_nanos;
  double total_ms = 0.0;
  double log_evidence = kNegInf;
  double omega_used = std::numeric_limits<double>::quiet_NaN();
  bool calibration_boundary = false;
  long steps_completed = 0;
  bool ok = true;
  std::string error;  // set when the stream aborted; fields above hold partials
};

namespace detail {

template <class Policy>
void drive_filter(RunLengthFilter<Policy>& filter, const Matrix& data,
                  SegmentationResult& result) {
  const auto start = std::chrono::steady_clock::now();
  for (Index t = 0; t < data.rows(); ++t) {
    try {
      filter.step(data.row(t).transpose());
    } catch (const std::exception& e) {
      result.ok = false;
      result.error = cat("aborted at t=", t + 1, ": ", e.what());
      break;
    }
    ++result.steps_completed;
  }
  result.total_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - start)
                        .count();
  result.trace = filter.trace();
  result.per_step_nanos = filter.per_step_nanos();
  result.log_evidence = filter.log_evidence();
  result.map_changepoints = map_segmentation(result.trace);
  result.modal_changepoints = modal_changepoints(result.trace);
}

}  // namespace detail

inline SegmentationResult run_detector(const DetectorConfig& cfg, const Matrix& data) {
  SegmentationResult result;
  cfg.hazard.validate();

  if (cfg.method == "standard") {
    auto prior = make_baseline(cfg.baseline_family, cfg.baseline_params, data.cols());
    if (prior.data_dim() != data.cols())
      throw std::invalid_argument("baseline dimension does not match data");
    RunLengthFilter<StandardSegmentPolicy> filter(StandardSegmentPolicy(std::move(prior)),
                                                  cfg.hazard, cfg.prune_k);
    detail::drive_filter(filter, data, result);
    return result;
  }
  if (cfg.method != "dsm")
    throw std::invalid_argument(cat("unknown detector method: ", cfg.method));

  // A bare "diag_gaussian" takes its dimension from the stream.
  ModelPtr model = cfg.model_id == "diag_gaussian" ? make_diag_gaussian(data.cols())
                                                   : make_model(cfg.model_id);
  if (cfg.predictive_mode != "monte_carlo")
    throw std::invalid_argument(
        cat("no closed-form predictive is registered for model ", cfg.model_id,
            "; use predictive.mode = monte_carlo"));
  if (model->data_dim() != data.cols())
    throw std::invalid_argument(cat("model ", cfg.model_id, " expects d=", model->data_dim(),
                                    ", data has d=", data.cols()));
  if (cfg.prior_mean.size() != model->param_dim() ||
      cfg.prior_cov_diag.size() != model->param_dim())
    throw std::invalid_argument("prior dimensions do not match the model");
  const Matrix prior_cov = cfg.prior_cov_diag.asDiagonal();

  // Resolve the diffusion anchor.
  DiffusionSpec spec = DiffusionSpec::identity();
  if (cfg.diffusion_kind == DiffusionKind::robust) {
    Vector anchor;
    switch (cfg.anchor_policy) {
      case AnchorPolicy::explicit_vector:
        anchor = cfg.anchor_value;
        break;
      case AnchorPolicy::full_data_mle:
        anchor = model->mle(data);
        break;
      case AnchorPolicy::prefix_mle: {
        const long window = cfg.omega.auto_calibrate ? cfg.omega.tstar : cfg.anchor_prefix;
        anchor = model->mle(data.topRows(std::min<Index>(data.rows(), window)));
        break;
      }
    }
    spec = DiffusionSpec::robust(std::move(anchor));
  }

  // Resolve the learning rate; auto mode calibrates on the first t* rows,
  // which are then replayed through the filter like any other data.
  double omega = cfg.omega.fixed;
  if (cfg.omega.auto_calibrate) {
    const long tstar = std::min<Index>(cfg.omega.tstar, data.rows());
    if (tstar < 2) throw std::invalid_argument("auto omega: need tstar >= 2 observations");
    StandardBayesPosterior ref = make_baseline(cfg.baseline_family, cfg.baseline_params,
                                               data.cols());
    for (Index t = 0; t < tstar; ++t) ref = ref.updated(data.row(t).transpose());
    CalibrationOptions opts = cfg.calibration;
    opts.seed = mix64(cfg.seed ^ 0xca11b7a7ed5eedULL);
    const auto cal = calibrate_omega(*model, spec, cfg.prior_mean, prior_cov, ref,
                                     data.topRows(tstar), opts);
    omega = cal.omega;
    result.calibration_boundary = cal.at_lower_bound || cal.at_upper_bound;
  }
  result.omega_used = omega;

  DsmSegmentPolicy policy(model, spec, omega, cfg.mc_samples, cfg.seed, cfg.prior_mean,
                          prior_cov);
  RunLengthFilter<DsmSegmentPolicy> filter(std::move(policy), cfg.hazard, cfg.prune_k);
  detail::drive_filter(filter, data, result);
  return result;
}

}  // namespace dsmbocd
