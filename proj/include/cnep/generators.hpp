#pragma once

// Synthetic demonstration families: sine modes of increasing frequency,
// four curves sharing common points, and a pair of arcs around a box.

#include <cmath>
#include <numbers>
#include <string>
#include <utility>

#include "cnep/geometry.hpp"
#include "cnep/rng.hpp"
#include "cnep/trajectory.hpp"

namespace cnep {

inline constexpr double kAmplitudeJitter = 0.02;

/// sin(pi * x), exactly zero at integer x.
inline double sin_pi(double x) {
  const double r = std::remainder(x, 2.0);  // in [-1, 1]
  if (r == 0.0 || std::abs(r) == 1.0) return 0.0;
  return std::sin(std::numbers::pi * r);
}

/// Mode k (1-based) of the sine family: sin(2*pi*k*t).
inline double sine_mode(int k, double t) { return sin_pi(2.0 * k * t); }

inline Dataset gen_sines(int num_modes, int samples_per_mode = 20, Index T = 200, std::uint64_t seed = 0) {
  if (num_modes < 1 || num_modes > 4) throw UsageError("gen_sines supports 1 to 4 modes");
  if (samples_per_mode < 1) throw UsageError("gen_sines needs at least one sample per mode");
  Rng rng(seed);
  const Vector t = unit_grid(T);
  Dataset ds;
  ds.dm = 1;
  ds.normalization = Normalization::identity(1);
  for (int k = 1; k <= num_modes; ++k) {
    for (int s = 0; s < samples_per_mode; ++s) {
      const double amp = 1.0 + rng.uniform(-kAmplitudeJitter, kAmplitudeJitter);
      Trajectory tr;
      tr.times = t;
      tr.sm.resize(T, 1);
      for (Index i = 0; i < T; ++i) tr.sm(i, 0) = amp * sine_mode(k, t(i));
      tr.id = "mode" + std::to_string(k) + "_" + std::to_string(s);
      ds.trajectories.push_back(std::move(tr));
    }
  }
  return ds;
}

/// Base curves of the intersecting family: sin(2 pi t), -sin(2 pi t),
/// sin(4 pi t), -sin(4 pi t).
inline double intersecting_curve(int index, double t) {
  switch (index) {
    case 0: return sin_pi(2.0 * t);
    case 1: return -sin_pi(2.0 * t);
    case 2: return sin_pi(4.0 * t);
    case 3: return -sin_pi(4.0 * t);
    default: throw UsageError("intersecting family has curves 0..3");
  }
}

inline constexpr int kIntersectingCurves = 4;

/// One jittered copy of each base curve. common_points lists the points all
/// four base curves share: (0, 0), (0.5, 0), (1, 0).
inline Dataset gen_intersecting(Index T = 200, std::uint64_t seed = 0) {
  Rng rng(seed);
  const Vector t = unit_grid(T);
  Dataset ds;
  ds.dm = 1;
  ds.normalization = Normalization::identity(1);
  for (int c = 0; c < kIntersectingCurves; ++c) {
    const double amp = 1.0 + rng.uniform(-kAmplitudeJitter, kAmplitudeJitter);
    Trajectory tr;
    tr.times = t;
    tr.sm.resize(T, 1);
    for (Index i = 0; i < T; ++i) tr.sm(i, 0) = amp * intersecting_curve(c, t(i));
    tr.id = "curve" + std::to_string(c);
    ds.trajectories.push_back(std::move(tr));
  }
  for (double tc : {0.0, 0.5, 1.0}) ds.common_points.push_back({tc, Vector::Zero(1)});
  return ds;
}

inline constexpr double kArcPeak = 0.4;

/// Planar arcs from (0, 0) to (1, 0): x = t, y = +-0.4 sin(pi t), amplitude
/// jittered. The returned box sits between them.
inline std::pair<Dataset, ObstacleSpec> gen_obstacle_pair(Index T = 200, std::uint64_t seed = 0) {
  Rng rng(seed);
  const Vector t = unit_grid(T);
  Dataset ds;
  ds.dm = 2;
  ds.normalization = Normalization::identity(2);
  const char* names[2] = {"upper", "lower"};
  for (int side = 0; side < 2; ++side) {
    const double sign = side == 0 ? 1.0 : -1.0;
    const double amp = kArcPeak * (1.0 + rng.uniform(-kAmplitudeJitter, kAmplitudeJitter));
    Trajectory tr;
    tr.times = t;
    tr.sm.resize(T, 2);
    for (Index i = 0; i < T; ++i) {
      tr.sm(i, 0) = t(i);
      tr.sm(i, 1) = sign * amp * sin_pi(t(i));
    }
    tr.id = names[side];
    ds.trajectories.push_back(std::move(tr));
  }
  return {std::move(ds), ObstacleSpec{}};
}

}  // namespace cnep
