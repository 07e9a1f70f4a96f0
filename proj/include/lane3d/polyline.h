#pragma once

// Small polyline helpers shared by the codec, the scene generator and the
// evaluator. All distances are measured in the xy-plane.

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "lane3d/bev_geometry.h"

namespace lane3d {

inline PlanePoint3 lerp(const PlanePoint3& a, const PlanePoint3& b, double t) {
  return {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y), a.z + t * (b.z - a.z)};
}

double distance_xy(const PlanePoint3& a, const PlanePoint3& b);

// Parameter interval [t0, t1] of a + t*(b - a) inside rect, intersected with
// [t_min, t_max] (Liang-Barsky). Empty when the line misses the rectangle.
std::optional<std::pair<double, double>> clip_line_to_rect(
    const PlanePoint& a, const PlanePoint& direction, const PlaneRect& rect,
    double t_min, double t_max);

// Segment a-b clipped to rect, z interpolated; nullopt when nothing is inside.
std::optional<std::pair<PlanePoint3, PlanePoint3>> clip_segment_to_rect(
    const PlanePoint3& a, const PlanePoint3& b, const PlaneRect& rect);

// Contiguous runs of the polyline that lie inside rect.
std::vector<std::vector<PlanePoint3>> clip_polyline_to_rect(
    std::span<const PlanePoint3> points, const PlaneRect& rect);

double polyline_length(std::span<const PlanePoint3> points);

struct NearestOnPolyline {
  PlanePoint3 point;  // z interpolated along the polyline
  double distance = 0.0;
  std::size_t segment = 0;
};

// Nearest point (xy-plane) on a polyline with at least one vertex.
NearestOnPolyline nearest_on_polyline(std::span<const PlanePoint3> points,
                                      const PlanePoint& query);

// Points at arc-length steps 0, step, 2*step, ... along the polyline.
std::vector<PlanePoint3> resample_polyline(std::span<const PlanePoint3> points,
                                           double step);

}  // namespace lane3d
