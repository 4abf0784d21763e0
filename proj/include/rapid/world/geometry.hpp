#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include <Eigen/Core>

#include "rapid/core/error.hpp"

namespace rapid::world {

using Vec2 = Eigen::Vector2d;

/// Wraps to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  if (a <= -std::numbers::pi) a += 2.0 * std::numbers::pi;
  return a;
}

/// Position of a point relative to the centerline: arc length `s`, signed
/// lateral offset `d` (left positive) and the path heading at `s`.
struct Frenet {
  double s = 0.0;
  double d = 0.0;
  double heading = 0.0;
};

/// Piecewise-linear reference path with cumulative arc length. Queries past
/// either end extrapolate along the first/last segment.
class Centerline {
 public:
  Centerline() = default;

  explicit Centerline(std::vector<Vec2> points) : points_(std::move(points)) {
    require(points_.size() >= 2, errc::kDomain, "centerline needs at least two points");
    arc_.resize(points_.size());
    arc_[0] = 0.0;
    for (std::size_t i = 1; i < points_.size(); ++i) {
      const double seg = (points_[i] - points_[i - 1]).norm();
      require(std::isfinite(seg) && seg > 0.0, errc::kDomain, "centerline arc length must be strictly increasing");
      arc_[i] = arc_[i - 1] + seg;
    }
  }

  bool empty() const { return points_.size() < 2; }
  double length() const { return arc_.back(); }
  const std::vector<Vec2>& points() const { return points_; }
  const std::vector<double>& arc_lengths() const { return arc_; }

  Vec2 point_at(double s) const {
    const auto i = segment_for(s);
    const double t = (s - arc_[i]) / (arc_[i + 1] - arc_[i]);
    return points_[i] + t * (points_[i + 1] - points_[i]);
  }

  double heading_at(double s) const {
    const auto i = segment_for(s);
    const Vec2 d = points_[i + 1] - points_[i];
    return std::atan2(d.y(), d.x());
  }

  Vec2 normal_at(double s) const {
    const double h = heading_at(s);
    return {-std::sin(h), std::cos(h)};
  }

  Vec2 to_world(double s, double d) const { return point_at(s) + d * normal_at(s); }

  /// Signed curvature estimated from the heading change over +-`window` meters.
  double curvature_at(double s, double window = 5.0) const {
    return wrap_angle(heading_at(s + window) - heading_at(s - window)) / (2.0 * window);
  }

  Frenet project(const Vec2& p) const {
    double best = std::numeric_limits<double>::infinity();
    Frenet out;
    const std::size_t last = points_.size() - 2;
    for (std::size_t i = 0; i + 1 < points_.size(); ++i) {
      const Vec2 a = points_[i];
      const Vec2 ab = points_[i + 1] - a;
      const double len2 = ab.squaredNorm();
      double t = (p - a).dot(ab) / len2;
      if (i != 0) t = std::max(t, 0.0);
      if (i != last) t = std::min(t, 1.0);
      const Vec2 q = a + t * ab;
      const double dist2 = (p - q).squaredNorm();
      if (dist2 < best) {
        best = dist2;
        const double len = std::sqrt(len2);
        const Vec2 tangent = ab / len;
        const Vec2 rel = p - q;
        out.s = arc_[i] + t * len;
        out.d = tangent.x() * rel.y() - tangent.y() * rel.x();
        out.heading = std::atan2(ab.y(), ab.x());
      }
    }
    return out;
  }

 private:
  std::size_t segment_for(double s) const {
    if (s <= arc_.front()) return 0;
    if (s >= arc_.back()) return points_.size() - 2;
    const auto it = std::upper_bound(arc_.begin(), arc_.end(), s);
    return static_cast<std::size_t>(std::distance(arc_.begin(), it)) - 1;
  }

  std::vector<Vec2> points_;
  std::vector<double> arc_;
};

/// Road starting at (-20, 0) heading +x: straight until arc length `lead_in`,
/// then a constant-curvature arc.
inline Centerline make_road(double length, double curvature, double lead_in = 0.0, double spacing = 2.0) {
  std::vector<Vec2> pts;
  const int n = static_cast<int>(std::ceil(length / spacing));
  Vec2 p(-20.0, 0.0);
  double h = 0.0;
  pts.push_back(p);
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    const double k = s >= lead_in ? curvature : 0.0;
    const double dh = k * spacing;
    if (std::abs(dh) < 1e-12) {
      p += spacing * Vec2(std::cos(h), std::sin(h));
    } else {
      const double r = 1.0 / k;
      p += r * Vec2(std::sin(h + dh) - std::sin(h), std::cos(h) - std::cos(h + dh));
    }
    h += dh;
    s += spacing;
    pts.push_back(p);
  }
  return Centerline(std::move(pts));
}

}  // namespace rapid::world
