#pragma once

// Detection accuracy (curve IOU association, AP over IOU thresholds) and
// geometric accuracy (lateral error by range) for BEV lane curves.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "lane3d/bev_geometry.h"
#include "lane3d/lane_clustering.h"

namespace lane3d {

struct RangeBucket {
  double y_lo = 0.0;
  double y_hi = 0.0;
};

struct EvalConfig {
  std::vector<double> iou_thresholds = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  double lane_width = 1.0;          // full dilation width
  double raster_resolution = 0.1;   // meters per cell
  std::vector<RangeBucket> range_buckets = {{0.0, 30.0}, {30.0, 80.0}};
  double lateral_sample_step = 1.0;
  double operating_iou = 0.5;       // matches used for lateral error
  double reference_recall = 0.75;
  PlaneRect extent{-10.24, 10.24, 0.0, 78.0};

  void validate() const;
};

// Binary occupancy over the extent grown by half the lane width.
class RasterMask {
 public:
  RasterMask() = default;
  RasterMask(int cols, int rows);

  int cols() const { return cols_; }
  int rows() const { return rows_; }
  void set(int col, int row);
  bool test(int col, int row) const;
  std::size_t count() const { return count_; }

  friend std::size_t intersection_count(const RasterMask& a, const RasterMask& b);
  friend bool operator==(const RasterMask&, const RasterMask&) = default;

 private:
  int cols_ = 0;
  int rows_ = 0;
  std::vector<std::uint64_t> bits_;
  std::size_t count_ = 0;
};

RasterMask rasterize_curve(const Curve& curve, const EvalConfig& cfg);

double mask_iou(const RasterMask& a, const RasterMask& b);
double curve_iou(const Curve& a, const Curve& b, const EvalConfig& cfg);

struct Detection {
  Curve curve;
  double confidence = 0.0;
};

struct SceneDetections {
  std::vector<Detection> preds;
  std::vector<Curve> gts;
};

struct Match {
  std::size_t scene = 0;
  std::size_t pred = 0;
  std::size_t gt = 0;
  double iou = 0.0;
  std::size_t rank = 0;  // position in the confidence-sorted prediction list
};

struct ApResult {
  double ap = 0.0;
  double recall = 0.0;
  std::size_t n_gt = 0;
  std::size_t n_pred = 0;
  std::vector<Match> matches;
  std::vector<double> precision_curve;
  std::vector<double> recall_curve;
};

// Pairwise IOUs for one scene, preds x gts.
struct IouTable {
  std::size_t n_pred = 0;
  std::size_t n_gt = 0;
  std::vector<double> iou;
  double at(std::size_t p, std::size_t g) const { return iou[p * n_gt + g]; }
};

IouTable compute_iou_table(const SceneDetections& scene, const EvalConfig& cfg);

ApResult match_and_ap(std::span<const Detection> preds, std::span<const Curve> gts,
                      double threshold, const EvalConfig& cfg);

// Predictions from all scenes are ranked together by confidence (ties keep
// scene order, then list order); matching happens within each scene.
ApResult match_and_ap(std::span<const SceneDetections> scenes,
                      std::span<const IouTable> tables, double threshold);

struct LateralErrors {
  std::vector<std::optional<double>> mean_abs;  // per range bucket, meters
  std::vector<std::size_t> samples;
  std::optional<double> mean_abs_dz;
};

struct MatchedPair {
  const Curve* pred = nullptr;
  const Curve* gt = nullptr;
};

LateralErrors lateral_error(std::span<const MatchedPair> pairs, const EvalConfig& cfg);

struct EvalReport {
  std::vector<double> thresholds;
  std::vector<double> ap;
  std::vector<double> recall;
  double map_score = 0.0;
  double recall_at_reference = 0.0;  // recall at the operating IOU
  LateralErrors lateral;
  std::optional<LateralErrors> lateral_at_reference_recall;
  std::size_t n_gt = 0;
  std::size_t n_pred = 0;
  std::size_t n_matched = 0;
};

EvalReport evaluate(std::span<const Detection> preds, std::span<const Curve> gts,
                    const EvalConfig& cfg);
EvalReport evaluate(std::span<const SceneDetections> scenes, const EvalConfig& cfg);

}  // namespace lane3d
