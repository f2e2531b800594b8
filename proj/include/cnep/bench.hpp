#pragma once

// Benchmark scenarios comparing CNEP with its parameter-matched CNMP, and
// long-format CSV / JSON export of the results.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <json.hpp>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cnep/config.hpp"
#include "cnep/metrics.hpp"
#include "cnep/pid.hpp"
#include "cnep/stats.hpp"
#include "cnep/trainer.hpp"

namespace cnep {

inline const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> names = {"sines-1", "sines-2", "sines-3", "sines-4", "intersecting", "obstacle"};
  return names;
}

inline bool is_scenario(const std::string& name) {
  for (const auto& n : scenario_names())
    if (n == name) return true;
  return false;
}

inline std::string scenario_list() {
  std::string s;
  for (const auto& n : scenario_names()) s += (s.empty() ? "" : ", ") + n;
  return s;
}

/// Settings a scenario runs with unless a config file overrides them.
inline AppConfig scenario_defaults(const std::string& name) {
  if (!is_scenario(name)) throw UsageError("unknown scenario '" + name + "' (expected one of: " + scenario_list() + ")");
  AppConfig c;
  c.model.latent_width = 32;
  c.model.encoder_hidden = {32, 32};
  c.model.query_hidden = {32, 32};
  c.model.gate_hidden = {16};
  c.train.learning_rate = 1e-3;
  c.train.alphas = {1.0, -0.1, 0.01};
  c.train.validation_time = 0.27;
  if (name.rfind("sines-", 0) == 0) {
    const int k = name.back() - '0';
    c.data.kind = DataKind::sines;
    c.data.modes = k;
    c.model.experts = std::max(2, k);
    c.train.epochs = 2000;
    if (k >= 3) {
      // the higher modes need many more updates; larger batches make them cheap
      c.train.batch_size = 16;
      c.train.epochs = 10000;
      c.train.alphas = {1.0, -1.0, 0.1};
    }
  } else if (name == "intersecting") {
    c.data.kind = DataKind::intersecting;
    c.model.experts = 4;
    c.train.epochs = 60000;
    c.train.m_max = 50;
    c.train.alphas = {1.0, -0.1, 0.05};
  } else {
    c.data.kind = DataKind::obstacle;
    c.model.experts = 2;
    c.train.epochs = 10000;
    c.train.learning_rate = 3e-3;
    // with only two demos the gate collapses onto one expert unless the
    // entropy terms outweigh the NLL
    c.train.alphas = {1.0, -10.0, 1.0};
  }
  c.train.validation_every = std::max(1, c.train.epochs / 20);
  return c;
}

struct BenchSettings {
  AppConfig config;
  std::vector<std::uint64_t> seeds;
  double convergence_threshold = 0.0;  // trailing-mean NLL level
  std::size_t convergence_window = 25;
  double common_window = 0.02;
  double collision_margin = 0.0;  // inflates the box for a conservative check
  unsigned threads = 0;
};

struct BenchResult {
  std::string scenario;
  std::vector<std::uint64_t> seeds;
  // model -> metric -> one value per seed, in seed order
  std::map<std::string, std::map<std::string, std::vector<double>>> metrics;
  std::optional<double> p_value;  // paired rank test on val_mse
  std::size_t cnmp_parameters = 0;
  std::size_t cnep_parameters = 0;

  const std::vector<double>& values(const std::string& model, const std::string& metric) const {
    const auto m = metrics.find(model);
    if (m == metrics.end()) throw UsageError("no results for model '" + model + "'");
    const auto v = m->second.find(metric);
    if (v == m->second.end()) throw UsageError("no metric '" + metric + "' for model '" + model + "'");
    return v->second;
  }

  double median(const std::string& model, const std::string& metric) const { return median_of(values(model, metric)); }

  friend bool operator==(const BenchResult&, const BenchResult&) = default;
};

namespace detail {

inline double round6(double v) {
  if (!std::isfinite(v)) return v;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return std::strtod(buf, nullptr);
}

inline std::string format6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace detail

/// The result with every value at the precision the exporters print.
inline BenchResult rounded(BenchResult r) {
  for (auto& [model, m] : r.metrics)
    for (auto& [name, v] : m)
      for (double& x : v) x = detail::round6(x);
  if (r.p_value) r.p_value = detail::round6(*r.p_value);
  return r;
}

/// Trains both models per seed on the scenario's dataset and evaluates the
/// scenario metrics.
inline BenchResult run_scenario(const std::string& name, const BenchSettings& s) {
  if (!is_scenario(name)) throw UsageError("unknown scenario '" + name + "' (expected one of: " + scenario_list() + ")");
  const ObstacleSpec box = s.config.obstacle;
  const Dataset ds = make_dataset(s.config.data);
  const bool sines = name.rfind("sines-", 0) == 0;
  const bool intersecting = name == "intersecting";
  const bool obstacle = name == "obstacle";
  const auto cases = intersecting ? common_point_conditions(ds, s.common_window)
                     : obstacle   ? midpoint_conditions(ds)
                                  : std::vector<ObservationSet>{};
  const Vector grid = ds.trajectories.front().times;

  const SeedHook hook = [&](const CnmpModel& cnmp, const CnepModel& cnep, SeedOutcome& out) {
    if (sines) {
      out.cnmp_metrics["convergence_epoch"] =
          static_cast<double>(convergence_epoch(out.cnmp_report, s.convergence_threshold, s.convergence_window));
      out.cnep_metrics["convergence_epoch"] =
          static_cast<double>(convergence_epoch(out.cnep_report, s.convergence_threshold, s.convergence_window));
    }
    if (intersecting) {
      double fa = 0.0, fc = 0.0, gate = 0.0;
      for (const auto& obs : cases) {
        fa += mode_fidelity(cnmp.generate(obs, grid).mean, ds);
        const auto g = cnep.generate(obs, grid);
        fc += mode_fidelity(g.mean, ds);
        gate += g.gate.maxCoeff();
      }
      const double n = static_cast<double>(cases.size());
      out.cnmp_metrics["mode_fidelity"] = fa / n;
      out.cnep_metrics["mode_fidelity"] = fc / n;
      out.cnep_metrics["gate_max_p"] = gate / n;
    }
    if (obstacle) {
      double ha = 0.0, hc = 0.0;
      for (const auto& obs : cases) {
        ha += collision_check(refine(cnmp.generate(obs, grid).mean, obs, s.config.pid), box, s.collision_margin).collided ? 1.0 : 0.0;
        hc += collision_check(refine(cnep.generate(obs, grid).mean, obs, s.config.pid), box, s.collision_margin).collided ? 1.0 : 0.0;
      }
      out.cnmp_metrics["collision_rate"] = ha / static_cast<double>(cases.size());
      out.cnep_metrics["collision_rate"] = hc / static_cast<double>(cases.size());
    }
  };

  CnepConfig cnep_cfg = s.config.model;
  const auto cmp = comparison_run(ds, s.config.train, cnep_cfg, std::span<const std::uint64_t>(s.seeds), hook, s.threads);

  BenchResult r;
  r.scenario = name;
  r.seeds = s.seeds;
  r.cnmp_parameters = cmp.cnmp_parameters;
  r.cnep_parameters = cmp.cnep_parameters;
  r.p_value = cmp.p_value;
  for (const auto& run : cmp.runs) {
    r.metrics["cnmp"]["val_mse"].push_back(run.cnmp_mse);
    r.metrics["cnep"]["val_mse"].push_back(run.cnep_mse);
    for (const auto& [k, v] : run.cnmp_metrics) r.metrics["cnmp"][k].push_back(v);
    for (const auto& [k, v] : run.cnep_metrics) r.metrics["cnep"][k].push_back(v);
  }
  return r;
}

/// Bench settings for a scenario: its default config, seeds 0..9 and the
/// convergence threshold the sine scenarios are judged against.
inline BenchSettings default_bench_settings(const std::string& name) {
  BenchSettings s;
  s.config = scenario_defaults(name);
  for (std::uint64_t i = 0; i < 10; ++i) s.seeds.push_back(i);
  s.convergence_threshold = 0.5;
  return s;
}

struct Expectation {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace detail {

inline std::size_t count_if_seeds(std::size_t n, const std::function<bool(std::size_t)>& pred) {
  std::size_t c = 0;
  for (std::size_t i = 0; i < n; ++i) c += pred(i) ? 1 : 0;
  return c;
}

inline std::string count_text(std::size_t k, std::size_t n) { return std::to_string(k) + "/" + std::to_string(n); }

}  // namespace detail

/// The orderings each scenario is expected to show. Counting claims scale
/// with the number of seeds (7 and 8 of 10).
inline std::vector<Expectation> expectations(const BenchResult& r) {
  std::vector<Expectation> out;
  const std::size_t n = r.seeds.size();
  const auto& sc = r.scenario;
  if (sc == "sines-1") {
    const double a = r.median("cnmp", "val_mse"), c = r.median("cnep", "val_mse");
    std::vector<double> pooled = r.values("cnmp", "val_mse");
    const auto& cv = r.values("cnep", "val_mse");
    pooled.insert(pooled.end(), cv.begin(), cv.end());
    const double iqr = iqr_of(pooled);
    out.push_back({"parity", std::abs(a - c) < iqr && a < 0.05 && c < 0.05,
                   "median cnmp " + detail::format6(a) + ", cnep " + detail::format6(c) + ", pooled IQR " +
                       detail::format6(iqr)});
  } else if (sc.rfind("sines-", 0) == 0) {
    const double a = r.median("cnmp", "val_mse"), c = r.median("cnep", "val_mse");
    const double p = r.p_value.value_or(1.0);
    out.push_back({"advantage", c < a && p < 0.05,
                   "median cnmp " + detail::format6(a) + ", cnep " + detail::format6(c) + ", p " + detail::format6(p)});
    const auto& ea = r.values("cnmp", "convergence_epoch");
    const auto& ec = r.values("cnep", "convergence_epoch");
    const std::size_t k = detail::count_if_seeds(n, [&](std::size_t i) { return ec[i] <= ea[i]; });
    out.push_back({"convergence", 10 * k >= 7 * n, "cnep converged no later in " + detail::count_text(k, n) + " seeds"});
  } else if (sc == "intersecting") {
    const auto& fa = r.values("cnmp", "mode_fidelity");
    const auto& fc = r.values("cnep", "mode_fidelity");
    const auto& g = r.values("cnep", "gate_max_p");
    const std::size_t k1 = detail::count_if_seeds(n, [&](std::size_t i) { return fc[i] < 0.05 && g[i] > 0.9; });
    const std::size_t k2 = detail::count_if_seeds(n, [&](std::size_t i) { return fa[i] > fc[i]; });
    out.push_back({"commitment", 10 * k1 >= 8 * n && 10 * k2 >= 8 * n,
                   "cnep committed in " + detail::count_text(k1, n) + " seeds, cnmp worse in " +
                       detail::count_text(k2, n)});
  } else if (sc == "obstacle") {
    const auto& ha = r.values("cnmp", "collision_rate");
    const auto& hc = r.values("cnep", "collision_rate");
    const double ma = mean_of(ha), mc = mean_of(hc);
    const bool clear = std::all_of(hc.begin(), hc.end(), [](double h) { return h == 0.0; });
    out.push_back({"avoidance", clear && ma >= 0.5,
                   "collision rate cnmp " + detail::format6(ma) + ", cnep " + detail::format6(mc)});
  }
  return out;
}

/// All of a scenario's expectations, joined.
inline Expectation check_expectation(const BenchResult& r) {
  Expectation all{r.scenario, true, ""};
  for (const auto& e : expectations(r)) {
    all.passed = all.passed && e.passed;
    all.detail += (all.detail.empty() ? "" : "; ") + e.name + (e.passed ? " ok (" : " failed (") + e.detail + ")";
  }
  return all;
}

// ---------------------------------------------------------------------------
// Export

enum class ExportFormat { csv, json };

inline ExportFormat export_format_from_string(const std::string& s) {
  if (s == "csv") return ExportFormat::csv;
  if (s == "json") return ExportFormat::json;
  throw UsageError("unknown format '" + s + "' (valid formats: csv, json)");
}

/// Long format: scenario,model,seed,metric,value. The paired p-value is a
/// row with model "paired" and seed "all".
inline void write_bench_csv(const BenchResult& r, std::ostream& out) {
  out << "scenario,model,seed,metric,value\n";
  for (const auto& [model, m] : r.metrics)
    for (const auto& [metric, v] : m)
      for (std::size_t i = 0; i < v.size(); ++i)
        out << r.scenario << ',' << model << ',' << r.seeds.at(i) << ',' << metric << ',' << detail::format6(v[i])
            << '\n';
  if (r.p_value) out << r.scenario << ",paired,all,p_value," << detail::format6(*r.p_value) << '\n';
  out << r.scenario << ",cnmp,all,parameters," << r.cnmp_parameters << '\n';
  out << r.scenario << ",cnep,all,parameters," << r.cnep_parameters << '\n';
}

inline nlohmann::json bench_to_json(const BenchResult& r) {
  nlohmann::json j;
  j["scenario"] = r.scenario;
  j["seeds"] = r.seeds;
  j["parameters"] = {{"cnmp", r.cnmp_parameters}, {"cnep", r.cnep_parameters}};
  j["p_value"] = r.p_value ? nlohmann::json(detail::round6(*r.p_value)) : nlohmann::json(nullptr);
  for (const auto& [model, m] : r.metrics) {
    for (const auto& [metric, v] : m) {
      std::vector<double> rv;
      for (double x : v) rv.push_back(detail::round6(x));
      j["metrics"][model][metric] = rv;
      j["median"][model][metric] = detail::round6(median_of(v));
    }
  }
  return j;
}

inline void write_bench_json(const BenchResult& r, std::ostream& out) { out << bench_to_json(r).dump(2) << '\n'; }

inline void write_bench(const BenchResult& r, ExportFormat f, std::ostream& out) {
  if (f == ExportFormat::csv)
    write_bench_csv(r, out);
  else
    write_bench_json(r, out);
}

inline void export_bench(const BenchResult& r, ExportFormat f, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_bench(r, f, out);
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline BenchResult parse_bench_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "scenario,model,seed,metric,value")
    throw ParseError("bench CSV: missing header");
  BenchResult r;
  std::map<std::string, std::map<std::string, std::map<std::uint64_t, double>>> by_seed;
  std::vector<std::uint64_t> seeds;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = detail::split_commas(line);
    if (cells.size() != 5) throw ParseError("bench CSV row " + std::to_string(row) + ": expected 5 columns");
    const std::string scenario(cells[0]), model(cells[1]), seed(cells[2]), metric(cells[3]), value(cells[4]);
    if (r.scenario.empty()) r.scenario = scenario;
    if (scenario != r.scenario) throw ParseError("bench CSV row " + std::to_string(row) + ": mixed scenarios");
    char* end = nullptr;
    const double v = std::strtod(value.c_str(), &end);
    if (end == value.c_str() || *end != '\0') throw ParseError("bench CSV row " + std::to_string(row) + ": bad value");
    if (seed == "all") {
      if (metric == "p_value") r.p_value = v;
      else if (metric == "parameters" && model == "cnmp") r.cnmp_parameters = static_cast<std::size_t>(v);
      else if (metric == "parameters" && model == "cnep") r.cnep_parameters = static_cast<std::size_t>(v);
      else throw ParseError("bench CSV row " + std::to_string(row) + ": unknown summary row");
      continue;
    }
    const auto sd = static_cast<std::uint64_t>(std::stoull(seed));
    if (std::find(seeds.begin(), seeds.end(), sd) == seeds.end()) seeds.push_back(sd);
    by_seed[model][metric][sd] = v;
  }
  r.seeds = seeds;
  for (const auto& [model, m] : by_seed)
    for (const auto& [metric, per] : m)
      for (std::uint64_t sd : seeds) {
        const auto it = per.find(sd);
        if (it == per.end()) throw ParseError("bench CSV: metric '" + metric + "' lacks seed " + std::to_string(sd));
        r.metrics[model][metric].push_back(it->second);
      }
  return r;
}

inline BenchResult parse_bench_json(std::istream& in) {
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bench JSON: ") + e.what());
  }
  BenchResult r;
  try {
    r.scenario = j.at("scenario").get<std::string>();
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    r.cnmp_parameters = j.at("parameters").at("cnmp").get<std::size_t>();
    r.cnep_parameters = j.at("parameters").at("cnep").get<std::size_t>();
    if (!j.at("p_value").is_null()) r.p_value = j.at("p_value").get<double>();
    for (const auto& [model, m] : j.at("metrics").items())
      for (const auto& [metric, v] : m.items()) r.metrics[model][metric] = v.get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bench JSON: ") + e.what());
  }
  return r;
}

}  // namespace cnep
