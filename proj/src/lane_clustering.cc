#include "lane3d/lane_clustering.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "lane3d/error.h"
#include "lane3d/polyline.h"

namespace lane3d {
namespace {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }
  std::size_t find(std::size_t i) {
    while (parent_[i] != i) {
      parent_[i] = parent_[parent_[i]];
      i = parent_[i];
    }
    return i;
  }
  // The smaller index becomes the root, so components are keyed by their
  // first member.
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent_[b] = a;
  }

 private:
  std::vector<std::size_t> parent_;
};

double mean_score(const std::vector<LaneSegment>& segments) {
  double s = 0.0;
  for (const auto& seg : segments) s += seg.score;
  return s / static_cast<double>(segments.size());
}

}  // namespace

void ClusterParams::validate() const {
  if (!(bandwidth > 0.0)) throw ConfigError("cluster: bandwidth must be positive");
  if (!(assign_radius > 0.0)) throw ConfigError("cluster: assign_radius must be positive");
  if (max_iters < 1) throw ConfigError("cluster: max_iters must be at least 1");
  if (!(shift_tol > 0.0)) throw ConfigError("cluster: shift_tol must be positive");
  if (min_cluster_size < 1) throw ConfigError("cluster: min_cluster_size must be at least 1");
}

void Curve::validate() const {
  if (points.size() < 2) throw DataError("curve needs at least two points");
  for (std::size_t k = 0; k + 1 < points.size(); ++k) {
    const auto& a = points[k];
    const auto& b = points[k + 1];
    if (a.x == b.x && a.y == b.y && a.z == b.z) {
      throw DataError("curve has repeated consecutive points");
    }
  }
}

std::vector<Eigen::VectorXd> mean_shift(std::span<const Eigen::VectorXd> points,
                                        const ClusterParams& params) {
  params.validate();
  if (points.empty()) return {};
  const std::size_t n = points.size();
  const double bw2 = params.bandwidth * params.bandwidth;

  std::vector<Eigen::VectorXd> modes(n);
  std::vector<int> support(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXd x = points[i];
    for (int it = 0; it < params.max_iters; ++it) {
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(x.size());
      int count = 0;
      for (const auto& p : points) {
        if ((p - x).squaredNorm() <= bw2) {
          sum += p;
          ++count;
        }
      }
      if (count == 0) break;
      const Eigen::VectorXd next = sum / count;
      const double shift = (next - x).norm();
      x = next;
      if (shift < params.shift_tol) break;
    }
    modes[i] = x;
    for (const auto& p : points) {
      if ((p - x).squaredNorm() <= bw2) ++support[i];
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return support[a] > support[b]; });
  std::vector<Eigen::VectorXd> centers;
  for (std::size_t i : order) {
    const bool merged = std::any_of(centers.begin(), centers.end(), [&](const auto& c) {
      return (c - modes[i]).norm() < params.bandwidth;
    });
    if (!merged) centers.push_back(modes[i]);
  }
  return centers;
}

std::vector<int> assign_clusters(std::span<const Eigen::VectorXd> embeddings,
                                 std::span<const Eigen::VectorXd> centers,
                                 double assign_radius) {
  std::vector<int> labels(embeddings.size(), -1);
  for (std::size_t k = 0; k < embeddings.size(); ++k) {
    double best = std::numeric_limits<double>::infinity();
    int nearest = -1;
    for (std::size_t c = 0; c < centers.size(); ++c) {
      const double d = (embeddings[k] - centers[c]).norm();
      if (d < best) {
        best = d;
        nearest = static_cast<int>(c);
      }
    }
    if (best <= assign_radius) labels[k] = nearest;
  }
  return labels;
}

std::vector<LaneInstance> cluster_segments(std::span<const LaneSegment> segments,
                                           const ClusterParams& params) {
  params.validate();
  if (segments.empty()) return {};
  std::vector<Eigen::VectorXd> embeddings;
  embeddings.reserve(segments.size());
  for (const auto& s : segments) {
    if (s.embedding.size() != segments.front().embedding.size() || s.embedding.size() == 0) {
      throw DataError("segments carry embeddings of different or zero dimension");
    }
    embeddings.push_back(s.embedding);
  }
  const auto centers = mean_shift(embeddings, params);
  const auto labels = assign_clusters(embeddings, centers, params.assign_radius);

  std::vector<std::vector<LaneSegment>> groups(centers.size());
  for (std::size_t k = 0; k < segments.size(); ++k) {
    if (labels[k] >= 0) groups[labels[k]].push_back(segments[k]);
  }
  std::vector<LaneInstance> out;
  for (std::size_t c = 0; c < centers.size(); ++c) {
    if (static_cast<int>(groups[c].size()) < params.min_cluster_size) continue;
    LaneInstance inst;
    inst.center = centers[c];
    inst.confidence = mean_score(groups[c]);
    inst.segments = std::move(groups[c]);
    out.push_back(std::move(inst));
  }
  return out;
}

Curve assemble_curve(const LaneInstance& instance, CurveEnds ends,
                     const std::optional<GridSpec>& grid, double boundary_reach) {
  if (ends == CurveEnds::kBorderEndpoints && !grid) {
    throw std::invalid_argument("assemble_curve: border endpoints need the grid");
  }
  const auto& segs = instance.segments;
  if (segs.empty()) throw DataError("cannot assemble a curve from an empty instance");
  Curve curve;
  if (segs.size() == 1) {
    PlanePoint3 a = segs[0].endpoints[0];
    PlanePoint3 b = segs[0].endpoints[1];
    if (a.x == b.x && a.y == b.y && a.z == b.z) {
      // Clamped degenerate segment: keep a short stub along its direction.
      b = {a.x + 1e-3 * segs[0].direction.x, a.y + 1e-3 * segs[0].direction.y, a.z};
    }
    curve.points = {a, b};
    return curve;
  }

  const std::size_t n = segs.size();
  double mx = 0.0, my = 0.0;
  for (const auto& s : segs) {
    mx += s.midpoint.x;
    my += s.midpoint.y;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& s : segs) {
    const double dx = s.midpoint.x - mx, dy = s.midpoint.y - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  const double theta = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
  double ax = std::cos(theta), ay = std::sin(theta);
  // Orient the axis so its dominant component is positive (near end first).
  if ((std::abs(ay) >= std::abs(ax) && ay < 0.0) || (std::abs(ax) > std::abs(ay) && ax < 0.0)) {
    ax = -ax;
    ay = -ay;
  }
  std::size_t start = 0;
  double lowest = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < n; ++k) {
    const double proj = segs[k].midpoint.x * ax + segs[k].midpoint.y * ay;
    if (proj < lowest) {
      lowest = proj;
      start = k;
    }
  }

  std::vector<std::size_t> chain{start};
  std::vector<bool> used(n, false);
  used[start] = true;
  for (std::size_t step = 1; step < n; ++step) {
    const PlanePoint3& cur = segs[chain.back()].midpoint;
    std::size_t next = n;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
      if (used[k]) continue;
      const double d = distance_xy(cur, segs[k].midpoint);
      if (d < best) {
        best = d;
        next = k;
      }
    }
    used[next] = true;
    chain.push_back(next);
  }

  auto push_distinct = [&](const PlanePoint3& p) {
    if (!curve.points.empty()) {
      const auto& b = curve.points.back();
      if (b.x == p.x && b.y == p.y && b.z == p.z) return;
    }
    curve.points.push_back(p);
  };
  auto outer_endpoint = [&](std::size_t seg, std::size_t neighbour) {
    const auto& e = segs[seg].endpoints;
    const PlanePoint3& ref = segs[neighbour].midpoint;
    return distance_xy(e[0], ref) >= distance_xy(e[1], ref) ? e[0] : e[1];
  };

  // The lane leaves the grid at this end when the segment reaches the grid
  // boundary, or comes close enough that the remaining sliver of a tile was
  // too short to be claimed. Otherwise it may stop anywhere inside the tile.
  auto leaves_grid = [&](std::size_t seg, const PlanePoint3& end) {
    const PlaneRect r = grid_rect(*grid);
    const double gap = std::min({end.x - r.x_lo, r.x_hi - end.x, end.y - r.y_lo, r.y_hi - end.y});
    if (gap <= 1e-6) return true;
    const PlanePoint3& mid = segs[seg].midpoint;
    const double len = distance_xy(end, mid);
    if (len == 0.0) return false;
    const double x = end.x + boundary_reach * (end.x - mid.x) / len;
    const double y = end.y + boundary_reach * (end.y - mid.y) / len;
    return x <= r.x_lo || x >= r.x_hi || y <= r.y_lo || y >= r.y_hi;
  };
  auto extend = [&](std::size_t seg, std::size_t neighbour) {
    const PlanePoint3 end = outer_endpoint(seg, neighbour);
    if (ends == CurveEnds::kSegmentEndpoints ||
        (ends == CurveEnds::kBorderEndpoints && leaves_grid(seg, end))) {
      push_distinct(end);
    }
  };
  extend(chain[0], chain[1]);
  for (std::size_t k : chain) push_distinct(segs[k].midpoint);
  extend(chain[n - 1], chain[n - 2]);
  if (curve.points.size() < 2) {
    const auto& a = curve.points.front();
    curve.points.push_back({a.x + 1e-3 * segs[0].direction.x,
                            a.y + 1e-3 * segs[0].direction.y, a.z});
  }
  return curve;
}

void graft_branches(std::vector<Curve>& curves, const GridSpec& grid, double max_gap,
                    double boundary_reach) {
  const std::vector<Curve> original = curves;
  const PlaneRect extent = grid_rect(grid);
  auto interior = [&](const PlanePoint3& p) {
    return std::min({p.x - extent.x_lo, extent.x_hi - p.x, p.y - extent.y_lo,
                     extent.y_hi - p.y}) > boundary_reach;
  };

  // Branches leave their stem at a shallow angle; a lane meeting another one
  // more steeply is a crossing, not a junction.
  const double min_cos = std::cos(std::numbers::pi / 4.0);
  auto aligned = [&](const std::vector<PlanePoint3>& other, const NearestOnPolyline& hit,
                     PlanePoint out) {
    const PlanePoint3& a = other[hit.segment];
    const PlanePoint3& b = other[hit.segment + 1];
    const double dot = (b.x - a.x) * out.x + (b.y - a.y) * out.y;
    return std::abs(dot) >= min_cos * distance_xy(a, b) * std::hypot(out.x, out.y);
  };

  // Polyline of `other` from the junction onwards in the direction `out`.
  auto onward = [](const std::vector<PlanePoint3>& other, const NearestOnPolyline& hit,
                   PlanePoint out) {
    const PlanePoint3& a = other[hit.segment];
    const PlanePoint3& b = other[hit.segment + 1];
    std::vector<PlanePoint3> piece{hit.point};
    if ((b.x - a.x) * out.x + (b.y - a.y) * out.y >= 0.0) {
      for (std::size_t k = hit.segment + 1; k < other.size(); ++k) piece.push_back(other[k]);
    } else {
      for (std::size_t k = hit.segment + 1; k-- > 0;) piece.push_back(other[k]);
    }
    return piece;
  };

  for (std::size_t i = 0; i < original.size(); ++i) {
    const auto& pts = original[i].points;
    const std::size_t n = pts.size();
    std::vector<PlanePoint3> ends[2];
    for (int side = 0; side < 2; ++side) {
      const PlanePoint3& end = side == 0 ? pts[0] : pts[n - 1];
      const PlanePoint3& prev = side == 0 ? pts[1] : pts[n - 2];
      const PlanePoint out{end.x - prev.x, end.y - prev.y};
      if (!interior(end)) continue;
      std::size_t best = original.size();
      NearestOnPolyline best_hit;
      best_hit.distance = max_gap;
      for (std::size_t j = 0; j < original.size(); ++j) {
        if (j == i) continue;
        const auto& other = original[j].points;
        const auto hit = nearest_on_polyline(other, end.xy());
        if (hit.distance >= best_hit.distance) continue;
        if (distance_xy(hit.point, other.front()) <= max_gap ||
            distance_xy(hit.point, other.back()) <= max_gap || !aligned(other, hit, out)) {
          continue;
        }
        best = j;
        best_hit = hit;
      }
      if (best < original.size()) {
        ends[side] = onward(original[best].points, best_hit, out);
      }
    }
    if (ends[0].empty() && ends[1].empty()) continue;
    std::vector<PlanePoint3> joined;
    auto push_distinct = [&](const PlanePoint3& p) {
      if (joined.empty() || joined.back().x != p.x || joined.back().y != p.y ||
          joined.back().z != p.z) {
        joined.push_back(p);
      }
    };
    for (auto it = ends[0].rbegin(); it != ends[0].rend(); ++it) push_distinct(*it);
    for (const auto& p : pts) push_distinct(p);
    for (const auto& p : ends[1]) push_distinct(p);
    curves[i].points = std::move(joined);
  }
}

std::vector<LaneInstance> greedy_baseline(std::span<const LaneSegment> segments,
                                          double angle_tol, double gap_tol,
                                          int min_cluster_size) {
  if (!(angle_tol > 0.0) || !(gap_tol > 0.0)) {
    throw ConfigError("greedy baseline: tolerances must be positive");
  }
  const std::size_t n = segments.size();
  DisjointSets sets(n);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const LaneSegment& sa = segments[a];
      const LaneSegment& sb = segments[b];
      if (std::abs(sa.tile.row - sb.tile.row) > 1 || std::abs(sa.tile.col - sb.tile.col) > 1) {
        continue;
      }
      if (std::abs(wrapped_difference(sa.phi, sb.phi)) > angle_tol) continue;
      double gap = std::numeric_limits<double>::infinity();
      for (const auto& ea : sa.endpoints) {
        for (const auto& eb : sb.endpoints) gap = std::min(gap, distance_xy(ea, eb));
      }
      if (gap <= gap_tol) sets.unite(a, b);
    }
  }
  std::vector<std::vector<LaneSegment>> groups(n);
  for (std::size_t k = 0; k < n; ++k) groups[sets.find(k)].push_back(segments[k]);
  std::vector<LaneInstance> out;
  for (auto& g : groups) {
    if (g.empty() || static_cast<int>(g.size()) < min_cluster_size) continue;
    LaneInstance inst;
    inst.confidence = mean_score(g);
    inst.segments = std::move(g);
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace lane3d
