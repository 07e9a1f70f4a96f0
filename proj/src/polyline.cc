#include "lane3d/polyline.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace lane3d {

double distance_xy(const PlanePoint3& a, const PlanePoint3& b) {
  return std::hypot(b.x - a.x, b.y - a.y);
}

std::optional<std::pair<double, double>> clip_line_to_rect(
    const PlanePoint& a, const PlanePoint& direction, const PlaneRect& rect,
    double t_min, double t_max) {
  double t0 = t_min;
  double t1 = t_max;
  const double p[4] = {-direction.x, direction.x, -direction.y, direction.y};
  const double q[4] = {a.x - rect.x_lo, rect.x_hi - a.x, a.y - rect.y_lo,
                       rect.y_hi - a.y};
  for (int k = 0; k < 4; ++k) {
    if (p[k] == 0.0) {
      if (q[k] < 0.0) return std::nullopt;
      continue;
    }
    const double t = q[k] / p[k];
    if (p[k] < 0.0) {
      if (t > t1) return std::nullopt;
      if (t > t0) t0 = t;
    } else {
      if (t < t0) return std::nullopt;
      if (t < t1) t1 = t;
    }
  }
  return std::make_pair(t0, t1);
}

std::optional<std::pair<PlanePoint3, PlanePoint3>> clip_segment_to_rect(
    const PlanePoint3& a, const PlanePoint3& b, const PlaneRect& rect) {
  const auto range =
      clip_line_to_rect(a.xy(), {b.x - a.x, b.y - a.y}, rect, 0.0, 1.0);
  if (!range) return std::nullopt;
  const auto [t0, t1] = *range;
  return std::make_pair(t0 <= 0.0 ? a : lerp(a, b, t0),
                        t1 >= 1.0 ? b : lerp(a, b, t1));
}

std::vector<std::vector<PlanePoint3>> clip_polyline_to_rect(
    std::span<const PlanePoint3> points, const PlaneRect& rect) {
  std::vector<std::vector<PlanePoint3>> runs;
  std::vector<PlanePoint3> current;
  for (std::size_t k = 0; k + 1 < points.size(); ++k) {
    const auto clipped = clip_segment_to_rect(points[k], points[k + 1], rect);
    if (!clipped) {
      if (current.size() >= 2) runs.push_back(std::move(current));
      current.clear();
      continue;
    }
    const auto& [a, b] = *clipped;
    const bool continues = !current.empty() && current.back().x == a.x &&
                           current.back().y == a.y;
    if (!continues) {
      if (current.size() >= 2) runs.push_back(std::move(current));
      current.clear();
      current.push_back(a);
    }
    if (b.x != a.x || b.y != a.y) current.push_back(b);
    // Leaving the rectangle ends the run.
    if (b.x != points[k + 1].x || b.y != points[k + 1].y) {
      if (current.size() >= 2) runs.push_back(std::move(current));
      current.clear();
    }
  }
  if (current.size() >= 2) runs.push_back(std::move(current));
  return runs;
}

double polyline_length(std::span<const PlanePoint3> points) {
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < points.size(); ++k) {
    total += distance_xy(points[k], points[k + 1]);
  }
  return total;
}

NearestOnPolyline nearest_on_polyline(std::span<const PlanePoint3> points,
                                      const PlanePoint& query) {
  if (points.empty()) throw std::invalid_argument("empty polyline");
  NearestOnPolyline best{points.front(),
                         std::hypot(points.front().x - query.x,
                                    points.front().y - query.y),
                         0};
  for (std::size_t k = 0; k + 1 < points.size(); ++k) {
    const PlanePoint3& a = points[k];
    const PlanePoint3& b = points[k + 1];
    const double dx = b.x - a.x;
    const double dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = 0.0;
    if (len2 > 0.0) {
      t = ((query.x - a.x) * dx + (query.y - a.y) * dy) / len2;
      t = std::clamp(t, 0.0, 1.0);
    }
    const PlanePoint3 p = lerp(a, b, t);
    const double d = std::hypot(p.x - query.x, p.y - query.y);
    if (d < best.distance) best = {p, d, k};
  }
  return best;
}

std::vector<PlanePoint3> resample_polyline(std::span<const PlanePoint3> points,
                                           double step) {
  if (!(step > 0.0)) throw std::invalid_argument("resample step must be positive");
  std::vector<PlanePoint3> out;
  if (points.empty()) return out;
  out.push_back(points.front());
  double next = step;  // arc length of the next sample
  double walked = 0.0;
  for (std::size_t k = 0; k + 1 < points.size(); ++k) {
    const double len = distance_xy(points[k], points[k + 1]);
    while (len > 0.0 && next <= walked + len) {
      out.push_back(lerp(points[k], points[k + 1], (next - walked) / len));
      next += step;
    }
    walked += len;
  }
  return out;
}

}  // namespace lane3d
