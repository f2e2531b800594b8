#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "cnep/errors.hpp"
#include "cnep/nn.hpp"
#include "cnep/rng.hpp"

namespace cnep {

/// One demonstration: T strictly increasing times and a T x dm block of
/// sensorimotor values, one row per time.
struct Trajectory {
  Vector times;
  Matrix sm;
  std::string id;

  Index length() const { return times.size(); }
  Index dims() const { return sm.cols(); }

  friend bool operator==(const Trajectory& a, const Trajectory& b) {
    return a.id == b.id && equal_exact(a.times, b.times) && equal_exact(a.sm, b.sm);
  }
};

/// Per-dimension affine map: normalized = (raw - offset) / scale.
struct Normalization {
  Vector offset;
  Vector scale;

  static Normalization identity(Index dm) { return {Vector::Zero(dm), Vector::Ones(dm)}; }

  friend bool operator==(const Normalization& a, const Normalization& b) {
    return equal_exact(a.offset, b.offset) && equal_exact(a.scale, b.scale);
  }
};

/// A point every base curve of a generated family passes through.
struct CommonPoint {
  double t = 0.0;
  Vector value;
};

struct Dataset {
  std::vector<Trajectory> trajectories;
  Index dm = 1;
  Normalization normalization = Normalization::identity(1);
  std::vector<CommonPoint> common_points;

  std::size_t size() const { return trajectories.size(); }
  Index length() const { return trajectories.empty() ? 0 : trajectories.front().length(); }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.dm == b.dm && a.trajectories == b.trajectories && a.normalization == b.normalization;
  }
};

/// Conditioning tuples (t, SM(t)); row i of `values` belongs to times(i).
struct ObservationSet {
  Vector times;
  Matrix values;

  Index size() const { return times.size(); }

  static ObservationSet single(double t, const Vector& value) {
    ObservationSet obs;
    obs.times = Vector::Constant(1, t);
    obs.values = value.transpose();
    return obs;
  }
};

struct TargetSet {
  Vector times;

  Index size() const { return times.size(); }
};

/// One training item: conditioning points, query times and the ground truth
/// (targets.size() x dm) at those times.
struct Example {
  ObservationSet obs;
  TargetSet targets;
  Matrix truth;
};

using Batch = std::vector<Example>;

/// Checks the structural invariants shared by loaded and generated datasets.
inline void validate_dataset(const Dataset& ds) {
  if (ds.trajectories.empty()) throw UsageError("dataset has no trajectories");
  const Index T = ds.trajectories.front().length();
  for (const auto& tr : ds.trajectories) {
    if (tr.length() < 2) throw UsageError("trajectory '" + tr.id + "' has fewer than 2 samples");
    if (tr.length() != T) throw UsageError("trajectory '" + tr.id + "' length differs from the dataset");
    if (tr.dims() != ds.dm || tr.sm.rows() != T)
      throw UsageError("trajectory '" + tr.id + "' has the wrong SM width");
    for (Index i = 1; i < T; ++i)
      if (!(tr.times(i) > tr.times(i - 1)))
        throw UsageError("trajectory '" + tr.id + "' times are not strictly increasing");
    if (!tr.sm.allFinite() || !tr.times.allFinite())
      throw UsageError("trajectory '" + tr.id + "' contains non-finite values");
  }
}

/// Min/max scaling of every SM dimension into [-1, 1]. Constant dimensions
/// keep scale 1.
inline Normalization fit_normalization(const Dataset& ds) {
  validate_dataset(ds);
  Vector lo = Vector::Constant(ds.dm, std::numeric_limits<double>::infinity());
  Vector hi = -lo;
  for (const auto& tr : ds.trajectories) {
    lo = lo.cwiseMin(tr.sm.colwise().minCoeff().transpose());
    hi = hi.cwiseMax(tr.sm.colwise().maxCoeff().transpose());
  }
  Normalization n;
  n.offset = 0.5 * (lo + hi);
  n.scale = 0.5 * (hi - lo);
  for (Index k = 0; k < ds.dm; ++k)
    if (n.scale(k) <= 0.0) n.scale(k) = 1.0;
  return n;
}

/// Re-expresses `ds` under `target` normalization (from whatever it carries).
inline Dataset renormalized(const Dataset& ds, const Normalization& target) {
  Dataset out = ds;
  out.normalization = target;
  const Normalization& from = ds.normalization;
  for (auto& tr : out.trajectories) {
    for (Index k = 0; k < ds.dm; ++k) {
      auto col = tr.sm.col(k);
      const Vector raw = col.array() * from.scale(k) + from.offset(k);
      col = (raw.array() - target.offset(k)) / target.scale(k);
    }
  }
  return out;
}

inline Dataset normalized(const Dataset& ds) { return renormalized(ds, fit_normalization(ds)); }

inline Dataset denormalized(const Dataset& ds) {
  return renormalized(ds, Normalization::identity(ds.dm));
}

/// Index of the grid time nearest to t (lower index on ties).
inline Index nearest_index(const Vector& times, double t) {
  const auto* begin = times.data();
  const auto* end = begin + times.size();
  const auto* it = std::lower_bound(begin, end, t);
  if (it == begin) return 0;
  if (it == end) return times.size() - 1;
  const Index hi = it - begin;
  return (times(hi) - t < t - times(hi - 1)) ? hi : hi - 1;
}

/// Draws n observations and m targets (each without replacement from the
/// grid, independently of each other) with n and m given.
inline Example sample_example(const Trajectory& traj, Index n, Index m, Rng& rng) {
  const auto T = static_cast<std::size_t>(traj.length());
  if (n < 1 || m < 1 || static_cast<std::size_t>(n) > T || static_cast<std::size_t>(m) > T)
    throw UsageError("observation/target counts must lie in [1, T]");
  Example ex;
  const auto obs_idx = rng.sample_without_replacement(T, static_cast<std::size_t>(n));
  const auto tgt_idx = rng.sample_without_replacement(T, static_cast<std::size_t>(m));
  ex.obs.times.resize(n);
  ex.obs.values.resize(n, traj.dims());
  for (Index i = 0; i < n; ++i) {
    const auto row = static_cast<Index>(obs_idx[static_cast<std::size_t>(i)]);
    ex.obs.times(i) = traj.times(row);
    ex.obs.values.row(i) = traj.sm.row(row);
  }
  ex.targets.times.resize(m);
  ex.truth.resize(m, traj.dims());
  for (Index j = 0; j < m; ++j) {
    const auto row = static_cast<Index>(tgt_idx[static_cast<std::size_t>(j)]);
    ex.targets.times(j) = traj.times(row);
    ex.truth.row(j) = traj.sm.row(row);
  }
  return ex;
}

/// n ~ U{1..n_max}, m ~ U{1..m_max}, then sample_example.
inline Example sample_obs_targets(const Trajectory& traj, Index n_max, Index m_max, Rng& rng) {
  if (n_max < 1 || m_max < 1) throw UsageError("n_max and m_max must be at least 1");
  if (n_max > traj.length() || m_max > traj.length())
    throw UsageError("n_max and m_max must not exceed the trajectory length");
  const Index n = rng.uniform_int(1, n_max);
  const Index m = rng.uniform_int(1, m_max);
  return sample_example(traj, n, m, rng);
}

/// Uniform grid of T points on [0, 1] with exact endpoints.
inline Vector unit_grid(Index T) {
  if (T < 2) throw UsageError("trajectory length must be at least 2");
  Vector t(T);
  for (Index i = 0; i < T; ++i) t(i) = static_cast<double>(i) / static_cast<double>(T - 1);
  return t;
}

}  // namespace cnep
