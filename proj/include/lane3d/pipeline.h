#pragma once

// Stage functions binding the modules into an experiment, plus their
// file-based counterparts used by the command-line tool.
//
// Work directory layout:
//   scenes/scene_NNNN.json        generated ground truth
//   targets/scene_NNNN.json       encoded tile targets
//   predictions/scene_NNNN.json   oracle tile predictions
//   segments/scene_NNNN.json      decoded tile segments
//   lanes/scene_NNNN.json         clustered lane curves
//   report.csv, report.json       evaluation
//   loss.csv                      per-scene loss terms and gradient check
//   plots/scene_NNNN_bev.svg, plots/scene_NNNN_score.svg

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "lane3d/config.h"
#include "lane3d/lane_eval.h"
#include "lane3d/scene_forge.h"
#include "lane3d/tile_codec.h"

namespace lane3d {

// Runs fn(0..n-1) on up to `jobs` threads. Each index is processed exactly
// once; the exception of the lowest failing index is rethrown.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

Scene stage_generate(const PipelineConfig& cfg, std::size_t scene_index);
TileTargetGrid stage_encode(const Scene& scene, const PipelineConfig& cfg);
TilePredictionGrid stage_predict(const TileTargetGrid& targets, const PipelineConfig& cfg,
                                 std::size_t scene_index);
std::vector<LaneSegment> stage_decode(const TilePredictionGrid& preds, const PipelineConfig& cfg);
std::vector<Detection> stage_cluster(const std::vector<LaneSegment>& segments,
                                     const PipelineConfig& cfg, ClusterMethod method);

std::vector<Curve> ground_truth_curves(const Scene& scene);

struct SceneRun {
  Scene scene;
  TileTargetGrid targets;
  TilePredictionGrid predictions;
  std::vector<LaneSegment> segments;
  std::vector<Detection> lanes;
};

SceneRun run_scene(const PipelineConfig& cfg, std::size_t scene_index, ClusterMethod method);

struct ExperimentResult {
  std::vector<SceneRun> scenes;
  EvalReport report;
};

// All stages in memory for cfg.n_scenes scenes.
ExperimentResult run_experiment(const PipelineConfig& cfg, ClusterMethod method, int jobs = 1);

struct LossRow {
  std::size_t scene = 0;
  TileLossTerms terms;
  double tile_total = 0.0;
  double pull = 0.0;
  double push = 0.0;
  double grad_max_rel_error = 0.0;
  bool grad_passed = false;
};

LossRow scene_loss(const TilePredictionGrid& preds, const TileTargetGrid& targets,
                   const PipelineConfig& cfg, std::size_t scene_index);
std::string loss_rows_to_csv(const std::vector<LossRow>& rows);

std::string render_bev_svg(const Scene& scene, const std::vector<Detection>& lanes,
                           const GridSpec& grid);
std::string render_score_svg(const TilePredictionGrid& preds);

std::string scene_file_name(std::size_t scene_index);

// File-based stages. Each reads the previous stage's files from `dir`.
void cmd_generate(const PipelineConfig& cfg, const std::filesystem::path& dir, int jobs);
void cmd_encode(const PipelineConfig& cfg, const std::filesystem::path& dir, int jobs);
void cmd_predict(const PipelineConfig& cfg, const std::filesystem::path& dir, int jobs);
void cmd_decode(const PipelineConfig& cfg, const std::filesystem::path& dir, int jobs);
void cmd_cluster(const PipelineConfig& cfg, const std::filesystem::path& dir, int jobs,
                 ClusterMethod method);
EvalReport cmd_eval(const PipelineConfig& cfg, const std::filesystem::path& dir, int jobs);
void cmd_loss(const PipelineConfig& cfg, const std::filesystem::path& dir, int jobs);
void cmd_plot(const PipelineConfig& cfg, const std::filesystem::path& dir, int jobs);
EvalReport cmd_pipeline(const PipelineConfig& cfg, const std::filesystem::path& dir, int jobs,
                        ClusterMethod method);

}  // namespace lane3d
