#pragma once

// Post-generation PID correction that pulls a trajectory through conditioning
// points with corrections that fade out over a window of grid steps.

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "cnep/errors.hpp"
#include "cnep/nn.hpp"
#include "cnep/trajectory.hpp"

namespace cnep {

struct PidConfig {
  double kp = 1.0;
  double ki = 0.0;
  double kd = 0.1;
  Index decay_window = 20;
  std::optional<double> dt;  // defaults to 1/T

  void validate(Index T) const {
    if (!(kp >= 0.0) || !(ki >= 0.0) || !(kd >= 0.0)) throw ConfigError("PID gains must be non-negative");
    if (kp + ki + kd <= 0.0) throw ConfigError("at least one PID gain must be positive");
    if (decay_window < 1) throw ConfigError("decay_window must be at least 1");
    if (decay_window > T) throw ConfigError("decay_window exceeds trajectory length");
    if (dt && !(*dt > 0.0 && std::isfinite(*dt))) throw ConfigError("dt must be positive");
  }

  double step(Index T) const { return dt ? *dt : 1.0 / static_cast<double>(T); }

  friend bool operator==(const PidConfig&, const PidConfig&) = default;
};

/// Normalized correction shape phi[k] for offsets |k| < W; phi[0] = 1.
///
/// The error is ramped down linearly, w_k = 1 - k/W, and the controller runs
/// from the window edge back towards the conditioning index so every term
/// (proportional, accumulated integral, backward difference) shrinks with k.
inline Vector pid_profile(const PidConfig& cfg, Index T) {
  cfg.validate(T);
  const Index W = cfg.decay_window;
  const double dt = cfg.step(T);
  Vector w(W + 1);
  for (Index k = 0; k <= W; ++k) w(k) = 1.0 - static_cast<double>(k) / static_cast<double>(W);
  Vector g(W);
  double integral = 0.0;
  for (Index k = W - 1; k >= 0; --k) {
    integral += w(k) * dt;
    g(k) = cfg.kp * w(k) + cfg.ki * integral + cfg.kd * (w(k) - w(k + 1)) / dt;
  }
  Vector phi(W);
  for (Index k = 0; k < W; ++k) phi(k) = w(k) * g(k) / g(0);
  return phi;
}

namespace detail {

struct Anchor {
  Index index;
  Vector value;
};

inline std::vector<Anchor> snap_conditions(const ObservationSet& cond, const Vector& grid) {
  if (cond.times.size() != cond.values.rows()) throw UsageError("conditioning times and values differ in count");
  std::vector<Anchor> anchors;
  for (Index i = 0; i < cond.times.size(); ++i) {
    const double t = cond.times(i);
    if (!(t >= 0.0 && t <= 1.0)) throw UsageError("conditioning time outside [0, 1]");
    const Index c = nearest_index(grid, t);
    const Vector v = cond.values.row(i).transpose();
    auto same = std::find_if(anchors.begin(), anchors.end(), [&](const Anchor& a) { return a.index == c; });
    if (same == anchors.end()) {
      anchors.push_back({c, v});
    } else if (!equal_exact(same->value, v)) {
      throw UsageError("conflicting conditioning values at grid index " + std::to_string(c));
    }
  }
  std::sort(anchors.begin(), anchors.end(), [](const Anchor& a, const Anchor& b) { return a.index < b.index; });
  return anchors;
}

}  // namespace detail

/// Corrected copy of `traj` (T x dm, on the unit grid) that passes through
/// every conditioning point at its nearest grid index.
inline Matrix refine(const Matrix& traj, const ObservationSet& conditioning, const PidConfig& cfg = {}) {
  const Index T = traj.rows();
  if (T < 1) throw UsageError("empty trajectory");
  if (conditioning.values.cols() != traj.cols() && conditioning.times.size() > 0)
    throw UsageError("conditioning dimension does not match trajectory");
  const Vector phi = pid_profile(cfg, T);
  const auto anchors = detail::snap_conditions(conditioning, unit_grid(T));
  const Index n = static_cast<Index>(anchors.size());
  if (n == 0) return traj;

  Matrix err(n, traj.cols());
  bool satisfied = true;
  for (Index i = 0; i < n; ++i) {
    const auto& a = anchors[static_cast<std::size_t>(i)];
    err.row(i) = a.value.transpose() - traj.row(a.index);
    for (Index k = 0; k < traj.cols(); ++k)
      if (std::abs(err(i, k)) > 1e-12 * std::max(1.0, std::abs(a.value(k)))) satisfied = false;
  }
  if (satisfied) return traj;

  const Index W = phi.size();
  const auto shape = [&](Index from, Index to) {
    const Index k = std::abs(from - to);
    return k < W ? phi(k) : 0.0;
  };
  Matrix A(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) A(i, j) = shape(anchors[static_cast<std::size_t>(i)].index, anchors[static_cast<std::size_t>(j)].index);
  const Eigen::FullPivLU<Matrix> lu(A);
  if (!lu.isInvertible()) throw UsageError("conditioning points too close for the decay window");
  const Matrix amp = lu.solve(err);

  Matrix out = traj;
  for (Index j = 0; j < n; ++j) {
    const Index c = anchors[static_cast<std::size_t>(j)].index;
    const Index lo = std::max<Index>(0, c - W + 1);
    const Index hi = std::min<Index>(T - 1, c + W - 1);
    for (Index i = lo; i <= hi; ++i) out.row(i) += shape(i, c) * amp.row(j);
  }
  // Land exactly on the requested values; the solve leaves rounding residue.
  for (const auto& a : anchors) out.row(a.index) = a.value.transpose();
  return out;
}

}  // namespace cnep
