#pragma once

// Procedural 3D lane scenes and a noisy oracle standing in for a trained
// detector head.

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "lane3d/bev_geometry.h"
#include "lane3d/loss_suite.h"
#include "lane3d/tile_codec.h"

namespace lane3d {

enum class Topology { kParallel, kSplit, kMerge, kShort, kPerpendicular };

std::string to_string(Topology t);

struct TopologyWeights {
  double parallel = 0.4;
  double split = 0.15;
  double merge = 0.15;
  double short_lane = 0.15;
  double perpendicular = 0.15;
};

struct SceneConfig {
  int n_lanes = 3;
  double lane_spacing = 3.7;
  double curvature_max = 0.03;
  double surface_amplitude = 0.5;
  double surface_wavelength = 40.0;
  TopologyWeights topology;
  double y_range = 100.0;          // generated path length before clipping
  double short_start_min = 20.0;   // start range of short lanes
  double short_start_max = 50.0;
  double min_lane_length = 20.0;   // clipped lanes shorter than this are dropped
  std::uint64_t seed = 0;

  void validate(const GridSpec& grid) const;
};

struct SurfaceParams {
  double amplitude = 0.0;
  double wavelength_x = 40.0;
  double wavelength_y = 40.0;
  double phase_x = 0.0;
  double phase_y = 0.0;
};

// Pairs of lanes sharing a stem (split) or a tail (merge).
struct LanePair {
  int stem = 0;
  int branch = 0;
};

struct Scene {
  std::vector<Lane3D> lanes;
  SurfaceParams surface;
  CameraRig rig;
  Topology topology = Topology::kParallel;
  std::vector<LanePair> branch_pairs;
  double feature_y = 0.0;  // split/merge point, short-lane start or crossing y
};

double surface_height(double x, double y, const SurfaceParams& surface);

Scene generate_scene(const SceneConfig& cfg, const GridSpec& grid, const CameraRig& rig);

struct NoiseConfig {
  double sigma_r = 0.0;
  double sigma_phi = 0.0;
  double sigma_z = 0.0;
  double drop_rate = 0.0;
  double fp_rate = 0.0;
  double sigma_f = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Anchor vectors with pairwise distance >= delta_push: scaled simplex
// vertices, extended with the opposite cross-polytope vertices. Supports up
// to 2 * d_emb + 1 anchors; more is a ConfigError.
std::vector<Eigen::VectorXd> embedding_anchors(int count, const EmbeddingParams& params);

TilePredictionGrid oracle_predict(const TileTargetGrid& targets, const NoiseConfig& noise,
                                  const EmbeddingParams& params, double saturation = 20.0);

}  // namespace lane3d
