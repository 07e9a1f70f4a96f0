#pragma once

#include <cstdint>
#include <string>

#include "lane3d/bev_geometry.h"
#include "lane3d/lane_clustering.h"
#include "lane3d/lane_eval.h"
#include "lane3d/loss_suite.h"
#include "lane3d/scene_forge.h"
#include "lane3d/tile_codec.h"

namespace lane3d {

enum class ClusterMethod { kEmbedding, kGreedy };

std::string to_string(ClusterMethod m);
// Throws ConfigError for anything but "embedding" or "greedy".
ClusterMethod parse_cluster_method(const std::string& name);

struct DecodeConfig {
  double score_threshold = 0.3;
  double min_seg_len = 0.3;  // encoder: clipped length needed for c = 1
  double saturation = 20.0;  // oracle logit magnitude
};

struct GreedyConfig {
  double angle_tol = 0.39269908169872414;  // pi / 8
  double gap_tol = 4.5;                    // 1.5 tile lengths, meters between endpoints
};

struct PipelineConfig {
  GridSpec grid;
  AngleBinSpec bins;
  CameraRig rig;
  EmbeddingParams embedding;
  ClusterParams cluster;
  SceneConfig scene;
  NoiseConfig noise;
  EvalConfig eval;
  DecodeConfig decode;
  GreedyConfig greedy;
  ClusterMethod method = ClusterMethod::kEmbedding;
  std::string output_dir = "lane3d_out";
  int n_scenes = 10;
  std::uint64_t master_seed = 0;
  bool plots = true;

  // Checks every component; throws ConfigError.
  void validate() const;
};

}  // namespace lane3d
