#pragma once

// The cnep command line: gen-data, train, eval, bench, generate, refine.
//
// Exit codes: 0 ok, 1 metric assertion failed, 2 usage or configuration
// error, 3 I/O or file-format error.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "cnep/cnep.hpp"

namespace cnep::cli {

enum ExitCode { kOk = 0, kAssertionFailed = 1, kUsage = 2, kIo = 3 };

inline std::string num(double v) { return detail::format6(v); }

inline nlohmann::json jnum(double v) { return detail::round6(v); }

/// "t:v[:v...][,t:v...]" into an observation set of the given dimension.
inline ObservationSet parse_conditions(const std::string& text, Index dm) {
  std::vector<std::pair<double, std::vector<double>>> points;
  for (const auto& item : detail::split_commas(text)) {
    const std::string s(detail::trim(item));
    if (s.empty()) continue;
    std::vector<double> fields;
    std::size_t start = 0;
    while (true) {
      const auto colon = s.find(':', start);
      const std::string f = s.substr(start, colon == std::string::npos ? std::string::npos : colon - start);
      char* end = nullptr;
      const double v = std::strtod(f.c_str(), &end);
      if (f.empty() || *end != '\0' || !std::isfinite(v)) throw UsageError("bad --condition entry '" + s + "'");
      fields.push_back(v);
      if (colon == std::string::npos) break;
      start = colon + 1;
    }
    if (!(fields[0] >= 0.0 && fields[0] <= 1.0)) throw UsageError("--condition time " + num(fields[0]) + " is outside [0, 1]");
    if (static_cast<Index>(fields.size()) != dm + 1)
      throw UsageError("--condition entry '" + s + "' needs a time and " + std::to_string(dm) + " value(s)");
    points.emplace_back(fields[0], std::vector<double>(fields.begin() + 1, fields.end()));
  }
  if (points.empty()) throw UsageError("--condition needs at least one t:v point");
  ObservationSet obs;
  obs.times.resize(static_cast<Index>(points.size()));
  obs.values.resize(static_cast<Index>(points.size()), dm);
  for (std::size_t i = 0; i < points.size(); ++i) {
    obs.times(static_cast<Index>(i)) = points[i].first;
    for (Index k = 0; k < dm; ++k) obs.values(static_cast<Index>(i), k) = points[i].second[static_cast<std::size_t>(k)];
  }
  return obs;
}

/// Trajectory table: first column time, then one column per dimension.
/// Columns named std_* are skipped so generate output can be fed back in.
inline std::pair<Vector, Matrix> read_table(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("trajectory table is empty");
  const auto header = detail::split_commas(detail::trim(line));
  std::vector<std::size_t> keep;
  for (std::size_t c = 1; c < header.size(); ++c)
    if (detail::trim(header[c]).rfind("std_", 0) != 0) keep.push_back(c);
  if (header.size() < 2 || keep.empty()) throw ParseError("trajectory table needs a time column and a value column");
  std::vector<double> times;
  std::vector<std::vector<double>> rows;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_commas(detail::trim(line));
    if (cells.size() != header.size()) throw ParseError("trajectory table row " + std::to_string(row) + " is ragged");
    std::vector<double> vals;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const std::string s(detail::trim(cells[c]));
      char* end = nullptr;
      const double v = std::strtod(s.c_str(), &end);
      if (s.empty() || *end != '\0' || !std::isfinite(v))
        throw ParseError("trajectory table row " + std::to_string(row) + ", column " + std::to_string(c + 1) +
                         " is not a finite number");
      vals.push_back(v);
    }
    times.push_back(vals[0]);
    std::vector<double> r;
    for (std::size_t c : keep) r.push_back(vals[c]);
    rows.push_back(std::move(r));
  }
  if (rows.size() < 2) throw ParseError("trajectory table needs at least two rows");
  Vector t(static_cast<Index>(times.size()));
  Matrix x(static_cast<Index>(rows.size()), static_cast<Index>(keep.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    t(static_cast<Index>(i)) = times[i];
    for (std::size_t k = 0; k < keep.size(); ++k) x(static_cast<Index>(i), static_cast<Index>(k)) = rows[i][k];
  }
  return {t, x};
}

class App {
 public:
  App(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  int run(int argc, const char* const* argv) {
    CLI::App app{"Conditional neural expert processes: training, evaluation and benchmarks"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "cnep 0.1.0");

    auto shared = [this](CLI::App* sub) {
      sub->add_option("--config", config_path_, "INI configuration file");
      sub->add_option("--seed", seed_, "random seed (overrides the config)");
      sub->add_option("--out", out_path_, "output file (default: standard output)");
      sub->add_option("--format", format_, "output format: csv or json")->default_val("csv");
    };

    auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
    shared(gen);
    gen->add_option("--scenario", scenario_, "take the dataset of a benchmark scenario");
    gen->add_option("--kind", kind_, "sines, intersecting or obstacle");
    gen->add_option("--modes", modes_, "number of sine modes (1-4)");
    gen->add_option("--length", length_, "samples per trajectory");

    auto* train = app.add_subcommand("train", "train one model and save a checkpoint");
    shared(train);
    train->add_option("--model", model_, "cnep or cnmp")->default_val("cnep");
    train->add_option("--scenario", scenario_, "start from a benchmark scenario's settings");
    train->add_option("--data", data_path_, "dataset CSV (overrides [data])");
    train->add_option("--epochs", epochs_, "training epochs");
    train->add_option("--experts", experts_, "number of experts");
    train->add_option("--report", report_path_, "write the per-epoch training report here");

    auto* eval = app.add_subcommand("eval", "validation error of a checkpoint");
    shared(eval);
    eval->add_option("--checkpoint", checkpoint_, "checkpoint file")->required();
    eval->add_option("--scenario", scenario_, "evaluate on a benchmark scenario's dataset");
    eval->add_option("--data", data_path_, "dataset CSV (overrides [data])");
    eval->add_option("--max-mse", max_mse_, "fail with exit code 1 above this validation MSE");

    auto* bench = app.add_subcommand("bench", "paired CNEP / CNMP comparison over seeds");
    shared(bench);
    bench->add_option("--scenario", scenario_, "one of: " + scenario_list())->required();
    bench->add_option("--seeds", num_seeds_, "number of seeds")->default_val(10);
    bench->add_option("--epochs", epochs_, "training epochs");
    bench->add_option("--threads", threads_, "worker threads (0: one per core)");
    bench->add_option("--threshold", threshold_, "convergence threshold on the smoothed training NLL");
    bench->add_option("--margin", margin_, "inflate the obstacle by this much when checking collisions");
    bench->add_flag("--assert", assert_, "exit with code 1 unless the scenario's expected ordering holds");

    auto* generate = app.add_subcommand("generate", "generate a trajectory from conditioning points");
    shared(generate);
    generate->add_option("--checkpoint", checkpoint_, "checkpoint file")->required();
    generate->add_option("--condition", condition_, "t:v[,t:v...]; several values per point for dm > 1")->required();
    generate->add_option("--length", length_, "number of output samples")->default_val(200);
    generate->add_flag("--pid", pid_, "pass the generated means through the PID refinement");

    auto* refine_cmd = app.add_subcommand("refine", "pull a trajectory through conditioning points");
    shared(refine_cmd);
    refine_cmd->add_option("--input", input_path_, "trajectory CSV: t, then one column per dimension")->required();
    refine_cmd->add_option("--condition", condition_, "t:v[,t:v...]")->required();

    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      out_ << app.help();
      return kOk;
    } catch (const CLI::CallForVersion&) {
      out_ << "cnep 0.1.0\n";
      return kOk;
    } catch (const CLI::ParseError& e) {
      err_ << "error: " << e.what() << "\n";
      return kUsage;
    }

    try {
      if (format_ != "csv" && format_ != "json") throw UsageError("unknown format '" + format_ + "' (valid formats: csv, json)");
      if (*gen) return gen_data();
      if (*train) return train_model();
      if (*eval) return evaluate();
      if (*bench) return run_bench();
      if (*generate) return generate_trajectory();
      if (*refine_cmd) return refine_trajectory();
    } catch (const UsageError& e) {
      err_ << "error: " << e.what() << "\n";
      return kUsage;
    } catch (const ConfigError& e) {
      err_ << "error: " << e.what() << "\n";
      return kUsage;
    } catch (const IoError& e) {
      err_ << "error: " << e.what() << "\n";
      return kIo;
    } catch (const LoadError& e) {
      err_ << "error: " << e.what() << "\n";
      return kIo;
    } catch (const ParseError& e) {
      err_ << "error: " << e.what() << "\n";
      return kIo;
    } catch (const TrainingError& e) {
      err_ << "error: " << e.what() << "\n";
      return kAssertionFailed;
    }
    return kUsage;
  }

 private:
  bool json() const { return format_ == "json"; }

  AppConfig base_config() const {
    AppConfig cfg = scenario_.empty() ? AppConfig{} : scenario_defaults(scenario_);
    if (!config_path_.empty()) cfg = load_config(config_path_, cfg);
    if (kind_) cfg.data.kind = data_kind_from_string(*kind_);
    if (modes_) cfg.data.modes = *modes_;
    if (length_ && !generating_) cfg.data.length = *length_;
    if (epochs_) cfg.train.epochs = *epochs_;
    if (experts_) cfg.model.experts = *experts_;
    if (!data_path_.empty()) {
      cfg.data.kind = DataKind::csv;
      cfg.data.path = data_path_;
    }
    return cfg;
  }

  // Writes to --out or standard output.
  template <class F>
  void emit(F&& write) {
    if (out_path_.empty()) {
      write(out_);
      return;
    }
    std::ofstream f(out_path_, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + out_path_ + "' for writing");
    write(f);
    if (!f) throw IoError("failed writing '" + out_path_ + "'");
  }

  int gen_data() {
    AppConfig cfg = base_config();
    if (seed_) cfg.data.seed = *seed_;
    const Dataset ds = make_dataset(cfg.data);
    emit([&](std::ostream& o) {
      if (!json()) {
        write_dataset(ds, o, 6);
        return;
      }
      nlohmann::json j;
      j["dm"] = ds.dm;
      j["trajectories"] = nlohmann::json::array();
      for (const auto& tr : ds.trajectories) {
        nlohmann::json t;
        t["id"] = tr.id;
        for (Index i = 0; i < tr.length(); ++i) {
          t["t"].push_back(jnum(tr.times(i)));
          std::vector<nlohmann::json> row;
          for (Index k = 0; k < ds.dm; ++k) row.push_back(jnum(tr.sm(i, k)));
          t["sm"].push_back(row);
        }
        j["trajectories"].push_back(t);
      }
      o << j.dump(2) << "\n";
    });
    return kOk;
  }

  int train_model() {
    AppConfig cfg = base_config();
    if (seed_) cfg.train.seed = *seed_;
    if (model_ != "cnep" && model_ != "cnmp") throw UsageError("--model must be cnep or cnmp");
    if (out_path_.empty()) throw UsageError("train needs --out for the checkpoint");
    const Dataset ds = make_dataset(cfg.data);
    CnepConfig cc = cfg.model;
    cc.dm = ds.dm;
    cc.alphas = cfg.train.alphas;
    TrainReport report;
    std::size_t params = 0;
    if (model_ == "cnep") {
      CnepModel m(cc, derive_seed(cfg.train.seed, 2));
      report = train(m, ds, cfg.train);
      params = m.parameter_count();
      save_checkpoint(m, out_path_);
    } else {
      CnmpModel m(parity_cnmp_config(cc), derive_seed(cfg.train.seed, 1));
      report = train(m, ds, cfg.train);
      params = m.parameter_count();
      save_checkpoint(m, out_path_);
    }
    if (!report_path_.empty()) {
      std::ofstream f(report_path_, std::ios::binary | std::ios::trunc);
      if (!f) throw IoError("cannot open '" + report_path_ + "' for writing");
      write_report(report, f);
    }
    const double mse = report.final_validation_mse().value_or(std::nan(""));
    if (json()) {
      out_ << nlohmann::json{{"model", model_}, {"parameters", params}, {"epochs", cfg.train.epochs},
                             {"val_mse", jnum(mse)}, {"checkpoint", out_path_}}
                  .dump(2)
           << "\n";
    } else {
      out_ << "model,parameters,epochs,val_mse\n"
           << model_ << ',' << params << ',' << cfg.train.epochs << ',' << num(mse) << "\n";
    }
    return kOk;
  }

  void write_report(const TrainReport& r, std::ostream& o) const {
    if (!json()) {
      // Same columns as write_report_csv, at CLI precision.
      std::map<int, double> val;
      for (const auto& v : r.validation) val[v.epoch] = v.mse;
      o << "epoch,rec,batch_entropy,ind_entropy,total,val_mse\n";
      for (std::size_t e = 0; e < r.epochs.size(); ++e) {
        const auto& lb = r.epochs[e];
        o << e << ',' << num(lb.rec) << ',' << num(lb.batch_entropy) << ',' << num(lb.ind_entropy) << ','
          << num(lb.total) << ',';
        if (const auto it = val.find(static_cast<int>(e)); it != val.end()) o << num(it->second);
        o << "\n";
      }
      return;
    }
    nlohmann::json j;
    for (const auto& lb : r.epochs)
      j["epochs"].push_back({{"rec", jnum(lb.rec)},
                             {"batch_entropy", jnum(lb.batch_entropy)},
                             {"ind_entropy", jnum(lb.ind_entropy)},
                             {"total", jnum(lb.total)}});
    for (const auto& v : r.validation) j["validation"].push_back({{"epoch", v.epoch}, {"mse", jnum(v.mse)}});
    o << j.dump(2) << "\n";
  }

  int evaluate() {
    AppConfig cfg = base_config();
    const Dataset ds = make_dataset(cfg.data);
    const AnyModel model = load_any_checkpoint(checkpoint_);
    const double mse = std::visit(
        [&](const auto& m) {
          if (m.dm() != ds.dm) throw UsageError("checkpoint dm does not match the dataset");
          return validate(m, ds, cfg.train.validation_time);
        },
        model);
    const std::string kind = std::holds_alternative<CnmpModel>(model) ? "cnmp" : "cnep";
    emit([&](std::ostream& o) {
      if (json())
        o << nlohmann::json{{"model", kind}, {"val_mse", jnum(mse)}}.dump(2) << "\n";
      else
        o << "model,val_mse\n" << kind << ',' << num(mse) << "\n";
    });
    if (max_mse_ && !(mse <= *max_mse_)) {
      err_ << "assertion failed: val_mse " << num(mse) << " > " << num(*max_mse_) << "\n";
      return kAssertionFailed;
    }
    return kOk;
  }

  int run_bench() {
    if (!is_scenario(scenario_)) throw UsageError("unknown scenario '" + scenario_ + "' (expected one of: " + scenario_list() + ")");
    if (num_seeds_ < 2) throw UsageError("--seeds must be at least 2");
    BenchSettings s = default_bench_settings(scenario_);
    s.config = base_config();
    const std::uint64_t base = seed_.value_or(s.config.train.seed);
    s.seeds.clear();
    for (int i = 0; i < num_seeds_; ++i) s.seeds.push_back(base + static_cast<std::uint64_t>(i));
    s.threads = threads_;
    if (threshold_) s.convergence_threshold = *threshold_;
    if (margin_) s.collision_margin = *margin_;
    const BenchResult r = run_scenario(scenario_, s);
    if (out_path_.empty())
      write_bench(r, json() ? ExportFormat::json : ExportFormat::csv, out_);
    else
      export_bench(r, json() ? ExportFormat::json : ExportFormat::csv, out_path_);
    if (assert_) {
      const auto verdict = check_expectation(r);
      err_ << (verdict.passed ? "PASS " : "FAIL ") << scenario_ << ": " << verdict.detail << "\n";
      if (!verdict.passed) return kAssertionFailed;
    }
    return kOk;
  }

  int generate_trajectory() {
    AppConfig cfg = base_config();
    const AnyModel model = load_any_checkpoint(checkpoint_);
    const Index T = length_.value_or(200);
    if (T < 2) throw UsageError("--length must be at least 2");
    const Vector times = unit_grid(T);
    const Index dm = std::visit([](const auto& m) { return m.dm(); }, model);
    const ObservationSet obs = parse_conditions(condition_, dm);
    Prediction pred;
    std::optional<Index> expert;
    Vector gate;
    if (const auto* m = std::get_if<CnepModel>(&model)) {
      const auto g = m->generate(obs, times);
      pred = g;
      expert = g.expert;
      gate = g.gate;
    } else {
      pred = std::get<CnmpModel>(model).generate(obs, times);
    }
    Matrix mean = pred.mean;
    if (pid_) mean = refine(mean, obs, cfg.pid);
    emit([&](std::ostream& o) {
      if (json()) {
        nlohmann::json j;
        for (Index i = 0; i < T; ++i) {
          j["t"].push_back(jnum(times(i)));
          std::vector<nlohmann::json> mu, sd;
          for (Index k = 0; k < dm; ++k) {
            mu.push_back(jnum(mean(i, k)));
            sd.push_back(jnum(pred.stddev(i, k)));
          }
          j["mean"].push_back(mu);
          j["std"].push_back(sd);
        }
        if (expert) {
          j["expert"] = *expert;
          for (Index e = 0; e < gate.size(); ++e) j["gate"].push_back(jnum(gate(e)));
        }
        j["refined"] = pid_;
        o << j.dump(2) << "\n";
        return;
      }
      if (expert) {
        o << "# expert " << *expert << " gate";
        for (Index e = 0; e < gate.size(); ++e) o << ' ' << num(gate(e));
        o << "\n";
      }
      o << "t";
      for (Index k = 0; k < dm; ++k) o << ",mean_" << k;
      for (Index k = 0; k < dm; ++k) o << ",std_" << k;
      o << "\n";
      for (Index i = 0; i < T; ++i) {
        o << num(times(i));
        for (Index k = 0; k < dm; ++k) o << ',' << num(mean(i, k));
        for (Index k = 0; k < dm; ++k) o << ',' << num(pred.stddev(i, k));
        o << "\n";
      }
    });
    return kOk;
  }

  int refine_trajectory() {
    AppConfig cfg = base_config();
    std::ifstream in(input_path_);
    if (!in) throw IoError("cannot open '" + input_path_ + "' for reading");
    std::stringstream body;
    std::string line;
    while (std::getline(in, line))
      if (line.rfind('#', 0) != 0) body << line << "\n";
    const auto [times, traj] = read_table(body);
    const Vector grid = unit_grid(traj.rows());
    for (Index i = 0; i < times.size(); ++i)
      if (std::abs(times(i) - grid(i)) > 1e-6) throw ParseError("trajectory times must form a uniform grid on [0, 1]");
    const ObservationSet obs = parse_conditions(condition_, traj.cols());
    const Matrix out = refine(traj, obs, cfg.pid);
    emit([&](std::ostream& o) {
      if (json()) {
        nlohmann::json j;
        for (Index i = 0; i < out.rows(); ++i) {
          j["t"].push_back(jnum(times(i)));
          std::vector<nlohmann::json> row;
          for (Index k = 0; k < out.cols(); ++k) row.push_back(jnum(out(i, k)));
          j["sm"].push_back(row);
        }
        o << j.dump(2) << "\n";
        return;
      }
      o << "t";
      for (Index k = 0; k < out.cols(); ++k) o << ",sm_" << k;
      o << "\n";
      for (Index i = 0; i < out.rows(); ++i) {
        o << num(times(i));
        for (Index k = 0; k < out.cols(); ++k) o << ',' << num(out(i, k));
        o << "\n";
      }
    });
    return kOk;
  }

  std::ostream& out_;
  std::ostream& err_;
  bool generating_ = false;

  std::string config_path_;
  std::optional<std::uint64_t> seed_;
  std::string out_path_;
  std::string format_ = "csv";
  std::string scenario_;
  std::optional<std::string> kind_;
  std::optional<int> modes_;
  std::optional<Index> length_;
  std::string model_ = "cnep";
  std::string data_path_;
  std::optional<int> epochs_;
  std::optional<Index> experts_;
  std::string report_path_;
  std::string checkpoint_;
  std::optional<double> max_mse_;
  int num_seeds_ = 10;
  unsigned threads_ = 0;
  std::optional<double> threshold_;
  std::optional<double> margin_;
  bool assert_ = false;
  std::string condition_;
  bool pid_ = false;
  std::string input_path_;
};

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return App(out, err).run(argc, argv);
}

}  // namespace cnep::cli
