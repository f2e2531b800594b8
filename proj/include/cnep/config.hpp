#pragma once

// INI configuration: [model], [train], [data], [pid], [obstacle].
//
//   [model]  experts, latent_width, encoder_hidden, query_hidden, gate_hidden, activation
//   [train]  batch_size, epochs, n_max, m_max, alpha_rec, alpha_batch, alpha_ind,
//            learning_rate, optimizer, seed, validation_every, validation_time
//   [data]   kind (sines|intersecting|obstacle|csv), modes, samples_per_mode, length, seed, path
//   [pid]    kp, ki, kd, decay_window, dt
//   [obstacle] center_x, center_y, half_w, half_h
//
// Layer lists are comma separated ("128,128"). Unknown sections or keys are
// rejected so typos do not silently fall back to defaults.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <string>

#include "cnep/dataset_io.hpp"
#include "cnep/errors.hpp"
#include "cnep/generators.hpp"
#include "cnep/geometry.hpp"
#include "cnep/model_cnep.hpp"
#include "cnep/pid.hpp"
#include "cnep/trainer.hpp"

namespace cnep {

enum class DataKind { sines, intersecting, obstacle, csv };

inline std::string to_string(DataKind k) {
  switch (k) {
    case DataKind::sines: return "sines";
    case DataKind::intersecting: return "intersecting";
    case DataKind::obstacle: return "obstacle";
    case DataKind::csv: return "csv";
  }
  return "?";
}

inline DataKind data_kind_from_string(const std::string& s) {
  if (s == "sines") return DataKind::sines;
  if (s == "intersecting") return DataKind::intersecting;
  if (s == "obstacle") return DataKind::obstacle;
  if (s == "csv") return DataKind::csv;
  throw ConfigError("unknown data kind '" + s + "' (expected sines, intersecting, obstacle or csv)");
}

struct DataConfig {
  DataKind kind = DataKind::sines;
  int modes = 2;
  int samples_per_mode = 20;
  Index length = 200;
  std::uint64_t seed = 0;
  std::string path;
};

struct AppConfig {
  CnepConfig model;
  TrainConfig train;
  DataConfig data;
  PidConfig pid;
  ObstacleSpec obstacle;
};

namespace detail {

inline std::string trimmed(const std::string& s) { return std::string(trim(s)); }

inline std::vector<Index> parse_widths(const std::string& text, const std::string& key) {
  std::vector<Index> out;
  for (const auto& cell : split_commas(text)) {
    const std::string s(trim(cell));
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (s.empty() || used != s.size() || v < 1) throw ConfigError("'" + key + "' must be a list of positive integers");
    out.push_back(static_cast<Index>(v));
  }
  if (out.empty()) throw ConfigError("'" + key + "' must list at least one width");
  return out;
}

inline std::string join_widths(const std::vector<Index>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

template <class T>
T parse_scalar(const std::string& text, const std::string& key) {
  std::istringstream in(trimmed(text));
  T v{};
  in >> v;
  if (!in || !(in >> std::ws).eof()) throw ConfigError("'" + key + "' has an invalid value '" + text + "'");
  return v;
}

using KeyHandler = std::function<void(AppConfig&, const std::string&)>;

inline const std::map<std::string, std::map<std::string, KeyHandler>>& config_keys() {
  using S = const std::string&;
  static const std::map<std::string, std::map<std::string, KeyHandler>> keys = {
      {"model",
       {{"experts", [](AppConfig& c, S v) { c.model.experts = parse_scalar<Index>(v, "model.experts"); }},
        {"latent_width", [](AppConfig& c, S v) { c.model.latent_width = parse_scalar<Index>(v, "model.latent_width"); }},
        {"encoder_hidden", [](AppConfig& c, S v) { c.model.encoder_hidden = parse_widths(v, "model.encoder_hidden"); }},
        {"query_hidden", [](AppConfig& c, S v) { c.model.query_hidden = parse_widths(v, "model.query_hidden"); }},
        {"gate_hidden", [](AppConfig& c, S v) { c.model.gate_hidden = parse_widths(v, "model.gate_hidden"); }},
        {"activation", [](AppConfig& c, S v) { c.model.activation = activation_from_string(trimmed(v)); }}}},
      {"train",
       {{"batch_size", [](AppConfig& c, S v) { c.train.batch_size = parse_scalar<Index>(v, "train.batch_size"); }},
        {"epochs", [](AppConfig& c, S v) { c.train.epochs = parse_scalar<int>(v, "train.epochs"); }},
        {"n_max", [](AppConfig& c, S v) { c.train.n_max = parse_scalar<Index>(v, "train.n_max"); }},
        {"m_max", [](AppConfig& c, S v) { c.train.m_max = parse_scalar<Index>(v, "train.m_max"); }},
        {"alpha_rec", [](AppConfig& c, S v) { c.train.alphas.rec = parse_scalar<double>(v, "train.alpha_rec"); }},
        {"alpha_batch", [](AppConfig& c, S v) { c.train.alphas.batch = parse_scalar<double>(v, "train.alpha_batch"); }},
        {"alpha_ind", [](AppConfig& c, S v) { c.train.alphas.ind = parse_scalar<double>(v, "train.alpha_ind"); }},
        {"learning_rate", [](AppConfig& c, S v) { c.train.learning_rate = parse_scalar<double>(v, "train.learning_rate"); }},
        {"optimizer", [](AppConfig& c, S v) { c.train.optimizer = optimizer_from_string(trimmed(v)); }},
        {"seed", [](AppConfig& c, S v) { c.train.seed = parse_scalar<std::uint64_t>(v, "train.seed"); }},
        {"validation_every", [](AppConfig& c, S v) { c.train.validation_every = parse_scalar<int>(v, "train.validation_every"); }},
        {"validation_time", [](AppConfig& c, S v) { c.train.validation_time = parse_scalar<double>(v, "train.validation_time"); }}}},
      {"data",
       {{"kind", [](AppConfig& c, S v) { c.data.kind = data_kind_from_string(trimmed(v)); }},
        {"modes", [](AppConfig& c, S v) { c.data.modes = parse_scalar<int>(v, "data.modes"); }},
        {"samples_per_mode", [](AppConfig& c, S v) { c.data.samples_per_mode = parse_scalar<int>(v, "data.samples_per_mode"); }},
        {"length", [](AppConfig& c, S v) { c.data.length = parse_scalar<Index>(v, "data.length"); }},
        {"seed", [](AppConfig& c, S v) { c.data.seed = parse_scalar<std::uint64_t>(v, "data.seed"); }},
        {"path", [](AppConfig& c, S v) { c.data.path = trimmed(v); }}}},
      {"pid",
       {{"kp", [](AppConfig& c, S v) { c.pid.kp = parse_scalar<double>(v, "pid.kp"); }},
        {"ki", [](AppConfig& c, S v) { c.pid.ki = parse_scalar<double>(v, "pid.ki"); }},
        {"kd", [](AppConfig& c, S v) { c.pid.kd = parse_scalar<double>(v, "pid.kd"); }},
        {"decay_window", [](AppConfig& c, S v) { c.pid.decay_window = parse_scalar<Index>(v, "pid.decay_window"); }},
        {"dt", [](AppConfig& c, S v) { c.pid.dt = parse_scalar<double>(v, "pid.dt"); }}}},
      {"obstacle",
       {{"center_x", [](AppConfig& c, S v) { c.obstacle.center_x = parse_scalar<double>(v, "obstacle.center_x"); }},
        {"center_y", [](AppConfig& c, S v) { c.obstacle.center_y = parse_scalar<double>(v, "obstacle.center_y"); }},
        {"half_w", [](AppConfig& c, S v) { c.obstacle.half_w = parse_scalar<double>(v, "obstacle.half_w"); }},
        {"half_h", [](AppConfig& c, S v) { c.obstacle.half_h = parse_scalar<double>(v, "obstacle.half_h"); }}}},
  };
  return keys;
}

}  // namespace detail

/// Applies the INI text on top of `base`.
inline AppConfig parse_config(std::istream& in, AppConfig base = {}) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  const auto& keys = detail::config_keys();
  for (const auto& [section, body] : tree) {
    const auto sec = keys.find(section);
    if (sec == keys.end()) {
      if (body.empty()) throw ConfigError("config key '" + section + "' must appear inside a section");
      throw ConfigError("unknown config section [" + section + "]");
    }
    for (const auto& [key, value] : body) {
      const auto handler = sec->second.find(key);
      if (handler == sec->second.end()) throw ConfigError("unknown config key '" + section + "." + key + "'");
      handler->second(base, value.data());
    }
  }
  base.model.validate();
  base.train.validate();
  base.obstacle.validate();
  return base;
}

inline AppConfig load_config(const std::string& path, AppConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  return parse_config(in, std::move(base));
}

/// INI text that parse_config maps back to the same values.
inline std::string format_config(const AppConfig& c) {
  std::ostringstream o;
  const auto real = [](double v) { return detail::format_real(v); };
  o << "[model]\n"
    << "experts = " << c.model.experts << "\n"
    << "latent_width = " << c.model.latent_width << "\n"
    << "encoder_hidden = " << detail::join_widths(c.model.encoder_hidden) << "\n"
    << "query_hidden = " << detail::join_widths(c.model.query_hidden) << "\n"
    << "gate_hidden = " << detail::join_widths(c.model.gate_hidden) << "\n"
    << "activation = " << to_string(c.model.activation) << "\n\n"
    << "[train]\n"
    << "batch_size = " << c.train.batch_size << "\n"
    << "epochs = " << c.train.epochs << "\n"
    << "n_max = " << c.train.n_max << "\n"
    << "m_max = " << c.train.m_max << "\n"
    << "alpha_rec = " << real(c.train.alphas.rec) << "\n"
    << "alpha_batch = " << real(c.train.alphas.batch) << "\n"
    << "alpha_ind = " << real(c.train.alphas.ind) << "\n"
    << "learning_rate = " << real(c.train.learning_rate) << "\n"
    << "optimizer = " << to_string(c.train.optimizer) << "\n"
    << "seed = " << c.train.seed << "\n"
    << "validation_every = " << c.train.validation_every << "\n"
    << "validation_time = " << real(c.train.validation_time) << "\n\n"
    << "[data]\n"
    << "kind = " << to_string(c.data.kind) << "\n"
    << "modes = " << c.data.modes << "\n"
    << "samples_per_mode = " << c.data.samples_per_mode << "\n"
    << "length = " << c.data.length << "\n"
    << "seed = " << c.data.seed << "\n";
  if (!c.data.path.empty()) o << "path = " << c.data.path << "\n";
  o << "\n[pid]\n"
    << "kp = " << real(c.pid.kp) << "\n"
    << "ki = " << real(c.pid.ki) << "\n"
    << "kd = " << real(c.pid.kd) << "\n"
    << "decay_window = " << c.pid.decay_window << "\n";
  if (c.pid.dt) o << "dt = " << real(*c.pid.dt) << "\n";
  o << "\n[obstacle]\n"
    << "center_x = " << real(c.obstacle.center_x) << "\n"
    << "center_y = " << real(c.obstacle.center_y) << "\n"
    << "half_w = " << real(c.obstacle.half_w) << "\n"
    << "half_h = " << real(c.obstacle.half_h) << "\n";
  return o.str();
}

/// Builds the dataset named by [data]. The obstacle box comes from
/// [obstacle], whose defaults match the generator's.
inline Dataset make_dataset(const DataConfig& d) {
  switch (d.kind) {
    case DataKind::sines:
      if (d.modes < 1 || d.modes > 4) throw ConfigError("data.modes must be in 1..4");
      return gen_sines(d.modes, d.samples_per_mode, d.length, d.seed);
    case DataKind::intersecting: return gen_intersecting(d.length, d.seed);
    case DataKind::obstacle: return gen_obstacle_pair(d.length, d.seed).first;
    case DataKind::csv:
      if (d.path.empty()) throw ConfigError("data.path is required for kind = csv");
      return load_dataset(d.path);
  }
  throw ConfigError("unknown data kind");
}

}  // namespace cnep
