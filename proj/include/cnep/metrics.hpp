#pragma once

// Scenario metrics and the conditioning sets they are evaluated on.

#include <limits>
#include <vector>

#include "cnep/geometry.hpp"
#include "cnep/trajectory.hpp"

namespace cnep {

/// Mean squared difference over all T x dm entries.
inline double pointwise_mse(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw UsageError("pointwise_mse shape mismatch");
  return (a - b).squaredNorm() / static_cast<double>(a.size());
}

/// Smallest MSE against any demonstration. Low only when the output commits
/// to one mode; an average of symmetric modes scores high.
inline double mode_fidelity(const Matrix& generated, const Dataset& demos) {
  validate_dataset(demos);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& tr : demos.trajectories) best = std::min(best, pointwise_mse(generated, tr.sm));
  return best;
}

/// Single-point conditioning sets drawn from the demonstrations at every grid
/// sample within `half_window` of a common point.
inline std::vector<ObservationSet> common_point_conditions(const Dataset& ds, double half_window = 0.02) {
  validate_dataset(ds);
  if (ds.common_points.empty()) throw UsageError("dataset records no common points");
  std::vector<ObservationSet> out;
  for (const auto& cp : ds.common_points) {
    for (const auto& tr : ds.trajectories) {
      for (Index i = 0; i < tr.length(); ++i) {
        if (std::abs(tr.times(i) - cp.t) <= half_window + 1e-12)
          out.push_back(ObservationSet::single(tr.times(i), tr.sm.row(i).transpose()));
      }
    }
  }
  return out;
}

/// Conditioning on the midpoint of the demonstrations' start samples.
inline std::vector<ObservationSet> midpoint_conditions(const Dataset& ds) {
  validate_dataset(ds);
  Vector start = Vector::Zero(ds.dm);
  for (const auto& tr : ds.trajectories) start += tr.sm.row(0).transpose();
  start /= static_cast<double>(ds.size());
  return {ObservationSet::single(ds.trajectories.front().times(0), start)};
}

}  // namespace cnep
