#pragma once

#include <algorithm>
#include <cmath>
#include <optional>

#include "cnep/errors.hpp"
#include "cnep/nn.hpp"

namespace cnep {

/// Axis-aligned box obstacle in the plane.
struct ObstacleSpec {
  double center_x = 0.5;
  double center_y = 0.0;
  double half_w = 0.1;
  double half_h = 0.15;

  void validate() const {
    if (!(half_w > 0.0) || !(half_h > 0.0)) throw ConfigError("obstacle half extents must be positive");
  }

  ObstacleSpec inflated(double margin) const {
    return {center_x, center_y, half_w + margin, half_h + margin};
  }

  ObstacleSpec translated(double dx, double dy) const {
    return {center_x + dx, center_y + dy, half_w, half_h};
  }

  /// Strict interior test; points on a face are outside.
  bool contains(double x, double y) const {
    return std::abs(x - center_x) < half_w && std::abs(y - center_y) < half_h;
  }

  friend bool operator==(const ObstacleSpec&, const ObstacleSpec&) = default;
};

struct CollisionResult {
  bool collided = false;
  std::optional<Index> first_index;  // first sample inside, or end sample of the first crossing segment
};

namespace detail {

// Liang-Barsky clip of segment a->b against the closed box; true when the
// clipped piece has a point in the open interior.
inline bool segment_enters_interior(double ax, double ay, double bx, double by, const ObstacleSpec& box) {
  double u0 = 0.0;
  double u1 = 1.0;
  const double dx = bx - ax;
  const double dy = by - ay;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {ax - (box.center_x - box.half_w), (box.center_x + box.half_w) - ax,
                       ay - (box.center_y - box.half_h), (box.center_y + box.half_h) - ay};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return false;
      continue;
    }
    const double r = q[i] / p[i];
    if (p[i] < 0.0) {
      u0 = std::max(u0, r);
    } else {
      u1 = std::min(u1, r);
    }
    if (u0 > u1) return false;
  }
  const double um = 0.5 * (u0 + u1);
  return box.contains(ax + um * dx, ay + um * dy);
}

}  // namespace detail

/// Samples are rows of a T x 2 path. A collision is any sample strictly inside
/// the box, or any segment between consecutive samples crossing its interior.
inline CollisionResult collision_check(const Matrix& path, const ObstacleSpec& obstacle, double margin = 0.0) {
  if (path.cols() != 2) throw UsageError("collision_check needs a planar (T x 2) path");
  const ObstacleSpec box = obstacle.inflated(margin);
  box.validate();
  for (Index i = 0; i < path.rows(); ++i) {
    if (box.contains(path(i, 0), path(i, 1))) return {true, i};
    if (i + 1 < path.rows() &&
        detail::segment_enters_interior(path(i, 0), path(i, 1), path(i + 1, 0), path(i + 1, 1), box))
      return {true, i + 1};
  }
  return {};
}

}  // namespace cnep
