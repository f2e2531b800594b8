#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cnep/errors.hpp"
#include "cnep/nn.hpp"

namespace cnep {

enum class OptimizerKind { sgd, adam };

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam" || s == "adaptive-moments") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

/// First-order update over a fixed parameter list. Adam uses
/// beta1 = 0.9, beta2 = 0.999, eps = 1e-8 with bias correction.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, std::vector<ParamTensor*> params)
      : kind_(kind), lr_(learning_rate), params_(std::move(params)) {
    if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
    if (kind_ == OptimizerKind::adam) {
      for (const auto* p : params_) {
        first_.push_back(Vector::Zero(p->size()));
        second_.push_back(Vector::Zero(p->size()));
      }
    }
  }

  void step() {
    if (kind_ == OptimizerKind::sgd) {
      for (auto* p : params_) p->values -= lr_ * p->grad;
      return;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      ParamTensor& p = *params_[i];
      first_[i] = kBeta1 * first_[i] + (1.0 - kBeta1) * p.grad;
      second_[i] = kBeta2 * second_[i] + (1.0 - kBeta2) * p.grad.cwiseAbs2();
      p.values.array() -= lr_ * (first_[i].array() / c1) / ((second_[i].array() / c2).sqrt() + kEps);
    }
  }

  long steps() const { return t_; }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  OptimizerKind kind_;
  double lr_;
  std::vector<ParamTensor*> params_;
  std::vector<Vector> first_;
  std::vector<Vector> second_;
  long t_ = 0;
};

}  // namespace cnep
