#pragma once

// File formats and configuration parsing.
//
// Scenes, lanes and segments are JSON documents with ordered [x, y, z]
// vertex arrays. Tile grids are a JSON header (grid shape, field list with
// dtype and per-tile width) followed by one flat row-major array per field.
// Every reader rejects unknown keys and reports the offending path; writing
// what was read reproduces the input byte for byte.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lane3d/config.h"
#include "lane3d/lane_eval.h"
#include "lane3d/scene_forge.h"
#include "lane3d/tile_codec.h"

namespace lane3d {

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

// Throws DataError when the file cannot be read.
std::string read_text_file(const std::filesystem::path& path);
// Creates parent directories as needed.
void write_text_file(const std::filesystem::path& path, std::string_view text);

// Missing keys keep their defaults. Unknown keys, wrong types and invalid
// values throw ConfigError naming the path (e.g. "config.scene.n_lanes").
PipelineConfig parse_config(std::string_view json_text);
PipelineConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const PipelineConfig& cfg);

std::string scene_to_json(const Scene& scene);
Scene scene_from_json(std::string_view text);

std::string targets_to_json(const TileTargetGrid& targets);
TileTargetGrid targets_from_json(std::string_view text);

std::string predictions_to_json(const TilePredictionGrid& preds);
TilePredictionGrid predictions_from_json(std::string_view text);

std::string segments_to_json(const std::vector<LaneSegment>& segments, int embedding_dim);
std::vector<LaneSegment> segments_from_json(std::string_view text);

// Detected lanes with their confidences; lane_id holds the list position.
std::string lanes_to_json(const std::vector<Detection>& lanes, ClusterMethod method);
std::vector<Detection> lanes_from_json(std::string_view text);

// One row per IOU threshold followed by a summary row, fixed column order.
std::string report_to_csv(const EvalReport& report, const EvalConfig& cfg);
std::string report_to_json(const EvalReport& report, const EvalConfig& cfg);
EvalReport report_from_json(std::string_view text);

}  // namespace lane3d
