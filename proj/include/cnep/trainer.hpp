#pragma once

// End-to-end training for both model kinds, reconstruction validation, and
// paired multi-seed comparisons under parameter parity.

#include <atomic>
#include <chrono>
#include <cmath>
#include <concepts>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "cnep/dataset_io.hpp"
#include "cnep/model_cnep.hpp"
#include "cnep/model_cnmp.hpp"
#include "cnep/optimizer.hpp"
#include "cnep/rng.hpp"
#include "cnep/stats.hpp"
#include "cnep/trajectory.hpp"

namespace cnep {

struct TrainConfig {
  Index batch_size = 4;
  int epochs = 2000;
  Index n_max = 5;
  Index m_max = 5;
  LossWeights alphas{1.0, -1.0, 1.0};
  double learning_rate = 3e-4;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::uint64_t seed = 0;
  int validation_every = 100;
  // Time of the single conditioning point used for validation rollouts.
  double validation_time = 0.27;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (n_max < 1 || m_max < 1) throw ConfigError("n_max and m_max must be at least 1");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
    if (validation_every < 1) throw ConfigError("validation_every must be at least 1");
    if (!(validation_time >= 0.0 && validation_time <= 1.0))
      throw ConfigError("validation_time must lie in [0, 1]");
  }
};

struct ValidationRecord {
  int epoch = 0;
  double mse = 0.0;

  friend bool operator==(const ValidationRecord&, const ValidationRecord&) = default;
};

struct TrainReport {
  std::vector<LossBreakdown> epochs;  // mean over the epoch's batches
  std::vector<ValidationRecord> validation;
  double wall_seconds = 0.0;
  std::size_t parameter_count = 0;
  std::optional<std::size_t> cnmp_parameter_count;
  std::optional<std::size_t> cnep_parameter_count;

  std::optional<double> final_validation_mse() const {
    if (validation.empty()) return std::nullopt;
    return validation.back().mse;
  }

  /// Equality of the deterministic content; wall time is ignored.
  friend bool operator==(const TrainReport& a, const TrainReport& b) {
    return a.epochs == b.epochs && a.validation == b.validation && a.parameter_count == b.parameter_count &&
           a.cnmp_parameter_count == b.cnmp_parameter_count && a.cnep_parameter_count == b.cnep_parameter_count;
  }
};

/// CSV with columns epoch,rec,batch_entropy,ind_entropy,total,val_mse.
/// val_mse is empty on epochs without a validation pass.
inline void write_report_csv(const TrainReport& report, std::ostream& out) {
  out << "epoch,rec,batch_entropy,ind_entropy,total,val_mse\n";
  std::size_t v = 0;
  for (std::size_t e = 0; e < report.epochs.size(); ++e) {
    const auto& lb = report.epochs[e];
    out << e << ',' << detail::format_real(lb.rec) << ',' << detail::format_real(lb.batch_entropy) << ','
        << detail::format_real(lb.ind_entropy) << ',' << detail::format_real(lb.total) << ',';
    if (v < report.validation.size() && report.validation[v].epoch == static_cast<int>(e)) {
      out << detail::format_real(report.validation[v].mse);
      ++v;
    }
    out << '\n';
  }
}

template <class M>
concept TrainableModel = requires(M m, const M cm, const Batch& batch, const ObservationSet& obs, const Vector& t) {
  { m.forward_loss(batch) } -> std::same_as<LossBreakdown>;
  m.backward();
  { m.parameters() } -> std::same_as<std::vector<ParamTensor*>>;
  { cm.generate(obs, t) };
  { cm.dm() } -> std::convertible_to<Index>;
  { cm.parameter_count() } -> std::convertible_to<std::size_t>;
};

/// Mean over trajectories of the rollout MSE when conditioning on the single
/// sample nearest to `conditioning_time`.
template <TrainableModel Model>
double validate(const Model& model, const Dataset& ds, double conditioning_time) {
  validate_dataset(ds);
  double total = 0.0;
  for (const auto& tr : ds.trajectories) {
    const Index c = nearest_index(tr.times, conditioning_time);
    const auto obs = ObservationSet::single(tr.times(c), tr.sm.row(c).transpose());
    const auto pred = model.generate(obs, tr.times);
    total += (pred.mean - tr.sm).squaredNorm() / static_cast<double>(tr.sm.size());
  }
  return total / static_cast<double>(ds.size());
}

template <TrainableModel Model>
double validate(const Model& model, const Dataset& ds) {
  return validate(model, ds, TrainConfig{}.validation_time);
}

namespace detail {

inline void check_finite_loss(const LossBreakdown& lb, int epoch) {
  const std::pair<const char*, double> parts[] = {
      {"rec", lb.rec}, {"batch_entropy", lb.batch_entropy}, {"ind_entropy", lb.ind_entropy}, {"total", lb.total}};
  for (const auto& [name, value] : parts)
    if (!std::isfinite(value))
      throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " in component " + name);
}

}  // namespace detail

/// One epoch is a shuffled pass over the dataset in batches of batch_size
/// (the last batch may be smaller). n and m are drawn once per batch.
template <TrainableModel Model>
TrainReport train(Model& model, const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  validate_dataset(ds);
  if (ds.dm != model.dm()) throw ConfigError("model dm does not match the dataset");
  if (cfg.n_max > ds.length() || cfg.m_max > ds.length())
    throw ConfigError("n_max and m_max must not exceed the trajectory length");
  if constexpr (requires { model.set_alphas(cfg.alphas); }) model.set_alphas(cfg.alphas);

  const auto start = std::chrono::steady_clock::now();
  Rng rng(derive_seed(cfg.seed, 0x7A11));
  Optimizer opt(cfg.optimizer, cfg.learning_rate, model.parameters());
  TrainReport report;
  report.parameter_count = model.parameter_count();
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto b = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    LossBreakdown acc;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < order.size(); s += b) {
      const Index n = rng.uniform_int(1, cfg.n_max);
      const Index m = rng.uniform_int(1, cfg.m_max);
      Batch batch;
      for (std::size_t i = s; i < std::min(s + b, order.size()); ++i)
        batch.push_back(sample_example(ds.trajectories[order[i]], n, m, rng));
      const LossBreakdown lb = model.forward_loss(batch);
      detail::check_finite_loss(lb, epoch);
      model.backward();
      opt.step();
      acc.rec += lb.rec;
      acc.batch_entropy += lb.batch_entropy;
      acc.ind_entropy += lb.ind_entropy;
      acc.total += lb.total;
      acc.nll += lb.nll;
      acc.alphas = lb.alphas;
      ++batches;
    }
    const double inv = 1.0 / static_cast<double>(batches);
    acc.rec *= inv;
    acc.batch_entropy *= inv;
    acc.ind_entropy *= inv;
    acc.total *= inv;
    acc.nll *= inv;
    report.epochs.push_back(acc);
    if ((epoch + 1) % cfg.validation_every == 0 || epoch + 1 == cfg.epochs)
      report.validation.push_back({epoch, validate(model, ds, cfg.validation_time)});
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

/// First epoch at which the trailing `window`-epoch mean of the
/// reconstruction NLL drops below `threshold`; epochs.size() if never.
inline std::size_t convergence_epoch(const TrainReport& report, double threshold, std::size_t window) {
  if (window == 0) throw UsageError("smoothing window must be positive");
  double running = 0.0;
  for (std::size_t e = 0; e < report.epochs.size(); ++e) {
    running += report.epochs[e].nll;
    if (e >= window) running -= report.epochs[e - window].nll;
    const double count = static_cast<double>(std::min(e + 1, window));
    if (e + 1 >= window && running / count < threshold) return e;
  }
  return report.epochs.size();
}

// ---------------------------------------------------------------------------
// Paired comparison

struct SeedOutcome {
  std::uint64_t seed = 0;
  double cnmp_mse = 0.0;
  double cnep_mse = 0.0;
  TrainReport cnmp_report;
  TrainReport cnep_report;
  std::map<std::string, double> cnmp_metrics;  // filled by the per-seed hook
  std::map<std::string, double> cnep_metrics;
};

struct ComparisonResult {
  std::vector<SeedOutcome> runs;  // seed order
  std::size_t cnmp_parameters = 0;
  std::size_t cnep_parameters = 0;
  double cnmp_median = 0.0;
  double cnep_median = 0.0;
  double cnmp_mean = 0.0;
  double cnep_mean = 0.0;
  double p_value = 1.0;  // two-sided Wilcoxon signed-rank on paired MSEs

  std::vector<double> cnmp_mses() const {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(r.cnmp_mse);
    return v;
  }
  std::vector<double> cnep_mses() const {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(r.cnep_mse);
    return v;
  }
  bool significant(double alpha = 0.05) const { return p_value < alpha; }
};

/// Called on the worker thread after both models of one seed are trained.
using SeedHook = std::function<void(const CnmpModel&, const CnepModel&, SeedOutcome&)>;

/// Trains a CNEP and its parameter-matched CNMP per seed on the same data.
/// Runs may execute in parallel; results are returned in seed order.
inline ComparisonResult comparison_run(const Dataset& ds, const TrainConfig& cfg, const CnepConfig& cnep_cfg,
                                       std::span<const std::uint64_t> seeds, const SeedHook& hook = {},
                                       unsigned threads = 0) {
  if (seeds.size() < 2) throw ConfigError("comparison_run needs at least two seeds");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("comparison_run seeds must be distinct");
  cfg.validate();
  CnepConfig cnep_model_cfg = cnep_cfg;
  cnep_model_cfg.dm = ds.dm;
  cnep_model_cfg.alphas = cfg.alphas;
  const CnmpConfig cnmp_model_cfg = parity_cnmp_config(cnep_model_cfg);

  ComparisonResult result;
  result.cnep_parameters = CnepModel(cnep_model_cfg, 0).parameter_count();
  result.cnmp_parameters = CnmpModel(cnmp_model_cfg, 0).parameter_count();
  assert_parameter_parity(result.cnmp_parameters, result.cnep_parameters);

  result.runs.resize(seeds.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  const auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      try {
        SeedOutcome& out = result.runs[i];
        out.seed = seeds[i];
        TrainConfig run_cfg = cfg;
        run_cfg.seed = seeds[i];
        CnmpModel cnmp(cnmp_model_cfg, derive_seed(seeds[i], 1));
        CnepModel cnep(cnep_model_cfg, derive_seed(seeds[i], 2));
        out.cnmp_report = train(cnmp, ds, run_cfg);
        out.cnep_report = train(cnep, ds, run_cfg);
        out.cnmp_report.cnmp_parameter_count = out.cnep_report.cnmp_parameter_count = result.cnmp_parameters;
        out.cnmp_report.cnep_parameter_count = out.cnep_report.cnep_parameter_count = result.cnep_parameters;
        out.cnmp_mse = out.cnmp_report.final_validation_mse().value_or(validate(cnmp, ds, cfg.validation_time));
        out.cnep_mse = out.cnep_report.final_validation_mse().value_or(validate(cnep, ds, cfg.validation_time));
        if (hook) hook(cnmp, cnep, out);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  unsigned workers = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(seeds.size()));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);

  const auto a = result.cnmp_mses();
  const auto c = result.cnep_mses();
  result.cnmp_median = median_of(a);
  result.cnep_median = median_of(c);
  result.cnmp_mean = mean_of(a);
  result.cnep_mean = mean_of(c);
  result.p_value = wilcoxon_signed_rank_p(a, c);
  return result;
}

/// Seeds cfg.seed, cfg.seed + 1, ..., cfg.seed + num_seeds - 1.
inline ComparisonResult comparison_run(const Dataset& ds, const TrainConfig& cfg, const CnepConfig& cnep_cfg,
                                       int num_seeds, const SeedHook& hook = {}, unsigned threads = 0) {
  if (num_seeds < 2) throw ConfigError("comparison_run needs at least two seeds");
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < num_seeds; ++i) seeds.push_back(cfg.seed + static_cast<std::uint64_t>(i));
  return comparison_run(ds, cfg, cnep_cfg, std::span<const std::uint64_t>(seeds), hook, threads);
}

}  // namespace cnep
