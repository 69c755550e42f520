#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "stepmppi/numerics.hpp"

namespace stepmppi {

/// Closed reference path sampled at uniform arc length. Headings are unwrapped
/// along one lap; queries past the lap end continue with heading + 2 pi * laps.
class TrackGeometry {
 public:
  struct Waypoint {
    double x, y, heading, speed;
  };
  /// c_right <= a x + b y <= c_left, (a, b) the left unit normal.
  struct HalfSpace {
    double a, b, c_left, c_right;
  };

  TrackGeometry(std::vector<Waypoint> points, double half_width)
      : pts_(std::move(points)), half_width_(half_width) {
    if (pts_.size() < 3) throw InvalidArgument("TrackGeometry: at least 3 waypoints required");
    if (!(half_width_ > 0.0)) throw InvalidArgument("TrackGeometry: half width must be positive");
    cum_.resize(pts_.size() + 1, 0.0);
    for (size_t i = 0; i < pts_.size(); ++i) {
      const auto& p = pts_[i];
      const auto& q = pts_[(i + 1) % pts_.size()];
      cum_[i + 1] = cum_[i] + std::hypot(q.x - p.x, q.y - p.y);
    }
    lap_turn_ = pts_.back().heading +
                std::remainder(pts_.front().heading - pts_.back().heading, 2.0 * std::numbers::pi) -
                pts_.front().heading;
  }

  /// Closed curve (ax cos t, by sin t + c sin(k t)) resampled to `count`
  /// equally spaced waypoints at constant speed.
  static TrackGeometry parametric(double ax, double by, double c, int k, int count, double speed,
                                  double half_width) {
    const int dense = count * 20;
    std::vector<double> xs(dense + 1), ys(dense + 1), s(dense + 1, 0.0);
    for (int i = 0; i <= dense; ++i) {
      const double t = 2.0 * std::numbers::pi * i / dense;
      xs[i] = ax * std::cos(t);
      ys[i] = by * std::sin(t) + c * std::sin(k * t);
      if (i > 0) s[i] = s[i - 1] + std::hypot(xs[i] - xs[i - 1], ys[i] - ys[i - 1]);
    }
    const double total = s[dense];
    std::vector<Waypoint> pts;
    pts.reserve(count);
    size_t seg = 0;
    double prev_heading = 0.0;
    for (int m = 0; m < count; ++m) {
      const double target = total * m / count;
      while (seg + 1 < s.size() - 1 && s[seg + 1] < target) ++seg;
      const double f = (target - s[seg]) / (s[seg + 1] - s[seg]);
      const double x = xs[seg] + f * (xs[seg + 1] - xs[seg]);
      const double y = ys[seg] + f * (ys[seg + 1] - ys[seg]);
      double hd = std::atan2(ys[seg + 1] - ys[seg], xs[seg + 1] - xs[seg]);
      if (m > 0) hd = prev_heading + std::remainder(hd - prev_heading, 2.0 * std::numbers::pi);
      prev_heading = hd;
      pts.push_back({x, y, hd, speed});
    }
    return TrackGeometry(std::move(pts), half_width);
  }

  double length() const { return cum_.back(); }
  double half_width() const { return half_width_; }
  const std::vector<Waypoint>& waypoints() const { return pts_; }
  /// Heading gained over one lap (+-2 pi for a simple closed curve).
  double lap_turn() const { return lap_turn_; }

  /// Interpolated waypoint at arc length s (any real s).
  Waypoint at(double s) const {
    const double len = length();
    const double laps = std::floor(s / len);
    double r = s - laps * len;
    if (r >= len) r = 0.0;
    size_t i = static_cast<size_t>(std::upper_bound(cum_.begin(), cum_.end(), r) - cum_.begin()) - 1;
    if (i >= pts_.size()) i = pts_.size() - 1;
    const double f = (r - cum_[i]) / (cum_[i + 1] - cum_[i]);
    const auto& p = pts_[i];
    const auto& q = pts_[(i + 1) % pts_.size()];
    double qh = q.heading;
    if (i + 1 == pts_.size()) qh = p.heading + std::remainder(q.heading - p.heading, 2.0 * std::numbers::pi);
    return {p.x + f * (q.x - p.x), p.y + f * (q.y - p.y),
            p.heading + f * (qh - p.heading) + laps * lap_turn(), p.speed + f * (q.speed - p.speed)};
  }

  HalfSpace half_space(double s) const {
    const auto w = at(s);
    const double a = -std::sin(w.heading), b = std::cos(w.heading);
    const double center = a * w.x + b * w.y;
    return {a, b, center + half_width_, center - half_width_};
  }

  struct Projection {
    double s;         ///< arc length of the nearest point
    double lateral;   ///< signed distance, positive to the left of travel
  };

  /// Nearest point over all segments.
  Projection project(double x, double y) const {
    Projection best{0.0, 0.0};
    double best_d2 = INFINITY;
    for (size_t i = 0; i < pts_.size(); ++i) {
      const auto& p = pts_[i];
      const auto& q = pts_[(i + 1) % pts_.size()];
      const double dx = q.x - p.x, dy = q.y - p.y;
      const double l2 = dx * dx + dy * dy;
      double f = ((x - p.x) * dx + (y - p.y) * dy) / l2;
      f = std::clamp(f, 0.0, 1.0);
      const double cx = p.x + f * dx, cy = p.y + f * dy;
      const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      if (d2 < best_d2) {
        best_d2 = d2;
        const double cross = dx * (y - p.y) - dy * (x - p.x);
        best = {cum_[i] + f * (cum_[i + 1] - cum_[i]), std::copysign(std::sqrt(d2), cross)};
      }
    }
    return best;
  }

 private:
  std::vector<Waypoint> pts_;
  std::vector<double> cum_;
  double half_width_;
  double lap_turn_ = 0.0;
};

}  // namespace stepmppi
