#pragma once

// Grouping decoded tile segments into lane instances.

#include <Eigen/Core>
#include <optional>
#include <span>
#include <vector>

#include "lane3d/tile_codec.h"

namespace lane3d {

struct ClusterParams {
  double bandwidth = 1.5;      // flat kernel radius
  int max_iters = 100;
  double shift_tol = 1e-4;
  double assign_radius = 1.5;  // half the push margin
  int min_cluster_size = 2;

  void validate() const;
};

struct LaneInstance {
  std::vector<LaneSegment> segments;
  Eigen::VectorXd center;
  double confidence = 0.0;  // mean member score
};

struct Curve {
  std::vector<PlanePoint3> points;
  std::optional<int> lane_id;

  // Throws DataError for fewer than two points or repeated consecutive points.
  void validate() const;
};

// Flat-kernel mean shift seeded from every point. Modes closer than the
// bandwidth are merged in favor of the better-supported one; the result is
// ordered by descending support.
std::vector<Eigen::VectorXd> mean_shift(std::span<const Eigen::VectorXd> points,
                                        const ClusterParams& params);

// Index of the nearest center within assign_radius, or -1.
std::vector<int> assign_clusters(std::span<const Eigen::VectorXd> embeddings,
                                 std::span<const Eigen::VectorXd> centers,
                                 double assign_radius);

std::vector<LaneInstance> cluster_segments(std::span<const LaneSegment> segments,
                                           const ClusterParams& params);

enum class CurveEnds {
  kMidpoints,        // one vertex per segment midpoint
  kSegmentEndpoints,  // additionally extend both ends to the outer segment endpoints
  kBorderEndpoints    // extend an end only where the lane leaves the grid
};

// kBorderEndpoints requires `grid`. A lane that stops inside the grid carries
// no endpoint information in its tile, so its curve ends at that midpoint. An
// end counts as leaving the grid when its segment endpoint is on the grid
// boundary or within `boundary_reach` of it along the segment (the encoder's
// minimum clipped length: a shorter sliver of tile is never claimed).
Curve assemble_curve(const LaneInstance& instance,
                     CurveEnds ends = CurveEnds::kMidpoints,
                     const std::optional<GridSpec>& grid = std::nullopt,
                     double boundary_reach = 0.3);

// A tile holds one lane, so at a split or merge the shared stretch goes to
// only one of the two lanes. A curve end farther than boundary_reach from
// the grid boundary, within max_gap of the interior of another curve and
// heading within 45 degrees of it marks such a junction; the curve continues
// along the other curve from there, in the direction it was heading.
void graft_branches(std::vector<Curve>& curves, const GridSpec& grid, double max_gap,
                    double boundary_reach = 0.3);

// Embedding-free baseline: joins segments in neighbouring tiles with similar
// direction and nearby endpoints, then takes connected components.
std::vector<LaneInstance> greedy_baseline(std::span<const LaneSegment> segments,
                                          double angle_tol, double gap_tol,
                                          int min_cluster_size = 1);

}  // namespace lane3d
