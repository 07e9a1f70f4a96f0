#include "lane3d/lane_eval.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "lane3d/error.h"
#include "lane3d/polyline.h"

namespace lane3d {
namespace {

struct RasterFrame {
  double x0 = 0.0;
  double y0 = 0.0;
  int cols = 0;
  int rows = 0;
};

RasterFrame frame_for(const EvalConfig& cfg) {
  const double pad = 0.5 * cfg.lane_width;
  const double res = cfg.raster_resolution;
  RasterFrame f;
  f.x0 = cfg.extent.x_lo - pad;
  f.y0 = cfg.extent.y_lo - pad;
  f.cols = static_cast<int>(std::ceil((cfg.extent.x_hi - cfg.extent.x_lo + 2.0 * pad) / res - 1e-9));
  f.rows = static_cast<int>(std::ceil((cfg.extent.y_hi - cfg.extent.y_lo + 2.0 * pad) / res - 1e-9));
  return f;
}

double point_segment_distance(double px, double py, const PlanePoint3& a, const PlanePoint3& b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp(((px - a.x) * dx + (py - a.y) * dy) / len2, 0.0, 1.0);
  return std::hypot(a.x + t * dx - px, a.y + t * dy - py);
}

}  // namespace

void EvalConfig::validate() const {
  if (iou_thresholds.empty()) throw ConfigError("eval: iou_thresholds must not be empty");
  for (std::size_t i = 0; i < iou_thresholds.size(); ++i) {
    const double t = iou_thresholds[i];
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("eval: thresholds must lie in (0, 1)");
    if (i > 0 && !(t > iou_thresholds[i - 1])) {
      throw ConfigError("eval: thresholds must be strictly increasing");
    }
  }
  if (!(lane_width > 0.0)) throw ConfigError("eval: lane_width must be positive");
  if (!(raster_resolution > 0.0) || raster_resolution > lane_width / 4.0) {
    throw ConfigError("eval: raster_resolution must be positive and at most lane_width / 4");
  }
  if (!(lateral_sample_step > 0.0)) throw ConfigError("eval: lateral_sample_step must be positive");
  for (const auto& b : range_buckets) {
    if (!(b.y_lo < b.y_hi)) throw ConfigError("eval: range buckets need y_lo < y_hi");
  }
  if (!(operating_iou > 0.0 && operating_iou < 1.0)) {
    throw ConfigError("eval: operating_iou must lie in (0, 1)");
  }
  if (!(reference_recall > 0.0 && reference_recall <= 1.0)) {
    throw ConfigError("eval: reference_recall must lie in (0, 1]");
  }
  if (!(extent.x_lo < extent.x_hi && extent.y_lo < extent.y_hi)) {
    throw ConfigError("eval: extent must be non-empty");
  }
}

RasterMask::RasterMask(int cols, int rows)
    : cols_(cols),
      rows_(rows),
      bits_((static_cast<std::size_t>(cols) * rows + 63) / 64, 0) {}

void RasterMask::set(int col, int row) {
  const std::size_t k = static_cast<std::size_t>(row) * cols_ + col;
  const std::uint64_t bit = std::uint64_t{1} << (k % 64);
  if (!(bits_[k / 64] & bit)) {
    bits_[k / 64] |= bit;
    ++count_;
  }
}

bool RasterMask::test(int col, int row) const {
  const std::size_t k = static_cast<std::size_t>(row) * cols_ + col;
  return (bits_[k / 64] >> (k % 64)) & 1u;
}

std::size_t intersection_count(const RasterMask& a, const RasterMask& b) {
  if (a.cols_ != b.cols_ || a.rows_ != b.rows_) {
    throw std::invalid_argument("masks rasterized on different frames");
  }
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.bits_.size(); ++i) n += std::popcount(a.bits_[i] & b.bits_[i]);
  return n;
}

RasterMask rasterize_curve(const Curve& curve, const EvalConfig& cfg) {
  curve.validate();
  const RasterFrame f = frame_for(cfg);
  const double res = cfg.raster_resolution;
  const double radius = 0.5 * cfg.lane_width;
  RasterMask mask(f.cols, f.rows);
  for (std::size_t k = 0; k + 1 < curve.points.size(); ++k) {
    const PlanePoint3& a = curve.points[k];
    const PlanePoint3& b = curve.points[k + 1];
    const int c0 = std::max(0, static_cast<int>(std::floor((std::min(a.x, b.x) - radius - f.x0) / res)));
    const int c1 = std::min(f.cols - 1, static_cast<int>(std::floor((std::max(a.x, b.x) + radius - f.x0) / res)));
    const int r0 = std::max(0, static_cast<int>(std::floor((std::min(a.y, b.y) - radius - f.y0) / res)));
    const int r1 = std::min(f.rows - 1, static_cast<int>(std::floor((std::max(a.y, b.y) + radius - f.y0) / res)));
    for (int row = r0; row <= r1; ++row) {
      const double cy = f.y0 + (row + 0.5) * res;
      for (int col = c0; col <= c1; ++col) {
        const double cx = f.x0 + (col + 0.5) * res;
        if (point_segment_distance(cx, cy, a, b) <= radius) mask.set(col, row);
      }
    }
  }
  return mask;
}

double mask_iou(const RasterMask& a, const RasterMask& b) {
  const std::size_t inter = intersection_count(a, b);
  const std::size_t uni = a.count() + b.count() - inter;
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double curve_iou(const Curve& a, const Curve& b, const EvalConfig& cfg) {
  return mask_iou(rasterize_curve(a, cfg), rasterize_curve(b, cfg));
}

IouTable compute_iou_table(const SceneDetections& scene, const EvalConfig& cfg) {
  std::vector<RasterMask> pred_masks, gt_masks;
  for (const auto& d : scene.preds) pred_masks.push_back(rasterize_curve(d.curve, cfg));
  for (const auto& g : scene.gts) gt_masks.push_back(rasterize_curve(g, cfg));
  IouTable table{scene.preds.size(), scene.gts.size(), {}};
  table.iou.resize(table.n_pred * table.n_gt);
  for (std::size_t p = 0; p < table.n_pred; ++p) {
    for (std::size_t g = 0; g < table.n_gt; ++g) {
      table.iou[p * table.n_gt + g] = mask_iou(pred_masks[p], gt_masks[g]);
    }
  }
  return table;
}

ApResult match_and_ap(std::span<const SceneDetections> scenes,
                      std::span<const IouTable> tables, double threshold) {
  if (scenes.size() != tables.size()) {
    throw std::invalid_argument("match_and_ap: one IOU table per scene is required");
  }
  struct Ranked {
    std::size_t scene;
    std::size_t pred;
    double confidence;
  };
  std::vector<Ranked> order;
  ApResult out;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    out.n_gt += scenes[s].gts.size();
    for (std::size_t p = 0; p < scenes[s].preds.size(); ++p) {
      const double conf = scenes[s].preds[p].confidence;
      if (!(conf >= 0.0 && conf <= 1.0)) {
        throw DataError("match_and_ap: confidences must lie in [0, 1]");
      }
      order.push_back({s, p, conf});
    }
  }
  out.n_pred = order.size();
  std::stable_sort(order.begin(), order.end(),
                   [](const Ranked& a, const Ranked& b) { return a.confidence > b.confidence; });

  std::vector<std::vector<bool>> taken(scenes.size());
  for (std::size_t s = 0; s < scenes.size(); ++s) taken[s].assign(scenes[s].gts.size(), false);

  std::size_t tp = 0;
  std::vector<bool> is_tp(order.size(), false);
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto [s, p, conf] = order[k];
    const IouTable& table = tables[s];
    std::size_t best_gt = table.n_gt;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < table.n_gt; ++g) {
      if (taken[s][g]) continue;
      const double iou = table.at(p, g);
      if (iou >= threshold && iou > best_iou) {
        best_iou = iou;
        best_gt = g;
      }
    }
    if (best_gt < table.n_gt) {
      taken[s][best_gt] = true;
      is_tp[k] = true;
      ++tp;
      out.matches.push_back({s, p, best_gt, best_iou, k});
    }
    out.precision_curve.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    out.recall_curve.push_back(out.n_gt ? static_cast<double>(tp) / out.n_gt : 0.0);
  }
  if (out.n_gt == 0 || order.empty()) return out;

  out.recall = static_cast<double>(tp) / static_cast<double>(out.n_gt);
  // All-point interpolation: area under the monotone precision envelope.
  std::vector<double> envelope(out.precision_curve);
  for (std::size_t k = envelope.size() - 1; k > 0; --k) {
    envelope[k - 1] = std::max(envelope[k - 1], envelope[k]);
  }
  double precision_sum = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (is_tp[k]) precision_sum += envelope[k];
  }
  out.ap = precision_sum / static_cast<double>(out.n_gt);
  return out;
}

ApResult match_and_ap(std::span<const Detection> preds, std::span<const Curve> gts,
                      double threshold, const EvalConfig& cfg) {
  cfg.validate();
  SceneDetections scene{{preds.begin(), preds.end()}, {gts.begin(), gts.end()}};
  const IouTable table = compute_iou_table(scene, cfg);
  return match_and_ap(std::span<const SceneDetections>(&scene, 1),
                      std::span<const IouTable>(&table, 1), threshold);
}

LateralErrors lateral_error(std::span<const MatchedPair> pairs, const EvalConfig& cfg) {
  const std::size_t n_buckets = cfg.range_buckets.size();
  std::vector<double> sum(n_buckets, 0.0);
  LateralErrors out;
  out.samples.assign(n_buckets, 0);
  double dz_sum = 0.0;
  std::size_t dz_count = 0;
  for (const auto& pair : pairs) {
    const auto samples = resample_polyline(pair.pred->points, cfg.lateral_sample_step);
    for (const auto& s : samples) {
      const auto hit = nearest_on_polyline(pair.gt->points, s.xy());
      dz_sum += std::abs(s.z - hit.point.z);
      ++dz_count;
      for (std::size_t b = 0; b < n_buckets; ++b) {
        if (s.y >= cfg.range_buckets[b].y_lo && s.y < cfg.range_buckets[b].y_hi) {
          sum[b] += hit.distance;
          ++out.samples[b];
          break;
        }
      }
    }
  }
  out.mean_abs.resize(n_buckets);
  for (std::size_t b = 0; b < n_buckets; ++b) {
    if (out.samples[b] > 0) out.mean_abs[b] = sum[b] / static_cast<double>(out.samples[b]);
  }
  if (dz_count > 0) out.mean_abs_dz = dz_sum / static_cast<double>(dz_count);
  return out;
}

EvalReport evaluate(std::span<const SceneDetections> scenes, const EvalConfig& cfg) {
  cfg.validate();
  std::vector<IouTable> tables;
  tables.reserve(scenes.size());
  for (const auto& s : scenes) tables.push_back(compute_iou_table(s, cfg));

  EvalReport report;
  report.thresholds = cfg.iou_thresholds;
  for (double t : cfg.iou_thresholds) {
    const ApResult r = match_and_ap(scenes, tables, t);
    report.ap.push_back(r.ap);
    report.recall.push_back(r.recall);
  }
  report.map_score = std::accumulate(report.ap.begin(), report.ap.end(), 0.0) /
                     static_cast<double>(report.ap.size());

  const ApResult op = match_and_ap(scenes, tables, cfg.operating_iou);
  report.recall_at_reference = op.recall;
  report.n_gt = op.n_gt;
  report.n_pred = op.n_pred;
  report.n_matched = op.matches.size();

  auto pairs_up_to = [&](std::size_t max_rank) {
    std::vector<MatchedPair> pairs;
    for (const auto& m : op.matches) {
      if (m.rank > max_rank) continue;
      pairs.push_back({&scenes[m.scene].preds[m.pred].curve, &scenes[m.scene].gts[m.gt]});
    }
    return pairs;
  };
  report.lateral = lateral_error(pairs_up_to(op.n_pred), cfg);
  for (std::size_t k = 0; k < op.recall_curve.size(); ++k) {
    if (op.recall_curve[k] >= cfg.reference_recall) {
      report.lateral_at_reference_recall = lateral_error(pairs_up_to(k), cfg);
      break;
    }
  }
  return report;
}

EvalReport evaluate(std::span<const Detection> preds, std::span<const Curve> gts,
                    const EvalConfig& cfg) {
  SceneDetections scene{{preds.begin(), preds.end()}, {gts.begin(), gts.end()}};
  return evaluate(std::span<const SceneDetections>(&scene, 1), cfg);
}

}  // namespace lane3d
