#include "lane3d/tile_codec.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "lane3d/error.h"
#include "lane3d/polyline.h"

namespace lane3d {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Pieces of one lane clipped to one tile, in traversal order.
struct LaneClip {
  int lane = 0;
  std::vector<std::pair<PlanePoint3, PlanePoint3>> pieces;
  double length = 0.0;
  PlanePoint centroid() const {
    double sx = 0.0, sy = 0.0;
    for (const auto& [a, b] : pieces) {
      const double len = distance_xy(a, b);
      sx += len * 0.5 * (a.x + b.x);
      sy += len * 0.5 * (a.y + b.y);
    }
    return {sx / length, sy / length};
  }
};

struct LineFit {
  PlanePoint mean;
  double phi = 0.0;
};

// Total-least-squares line through the clipped pieces, treating each piece as
// a uniform density along its length.
LineFit fit_line(const LaneClip& clip) {
  const PlanePoint m = clip.centroid();
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  double tx = 0.0, ty = 0.0;
  for (const auto& [a, b] : clip.pieces) {
    const double len = distance_xy(a, b);
    const double ax = a.x - m.x, ay = a.y - m.y;
    const double bx = b.x - m.x, by = b.y - m.y;
    sxx += len * (ax * ax + ax * bx + bx * bx) / 3.0;
    syy += len * (ay * ay + ay * by + by * by) / 3.0;
    sxy += len * (2.0 * ax * ay + ax * by + bx * ay + 2.0 * bx * by) / 6.0;
    tx += b.x - a.x;
    ty += b.y - a.y;
  }
  double theta = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
  if (std::cos(theta) * tx + std::sin(theta) * ty < 0.0) theta += std::numbers::pi;
  return {m, normalize_angle(theta)};
}

}  // namespace

void AngleBinSpec::validate() const {
  if (n_bins < 4) throw ConfigError("angle bins: n_bins must be at least 4");
}

double AngleBinSpec::width() const { return kTwoPi / n_bins; }

double AngleBinSpec::center(int i) const {
  if (i < 0 || i >= n_bins) throw std::out_of_range("angle bin index");
  return width() * (i + 1);
}

double normalize_angle(double phi) {
  double r = std::fmod(phi, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  if (r >= kTwoPi) r = 0.0;
  return r;
}

double wrapped_difference(double a, double b) { return std::remainder(a - b, kTwoPi); }

SoftLabels angle_to_soft_labels(double phi, const AngleBinSpec& bins) {
  bins.validate();
  const int n = bins.n_bins;
  phi = normalize_angle(phi);
  SoftLabels out{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0),
                 std::vector<int>(n, 0)};
  // phi sits between the centers k*width and (k+1)*width; center 0 is 2*pi.
  const double s = phi / bins.width();
  int k = static_cast<int>(std::floor(s));
  double frac = s - k;
  if (k >= n) {
    k = 0;
    frac = 0.0;
  }
  const int lower = (k == 0) ? n - 1 : k - 1;
  const int upper = k;
  out.p[lower] = 1.0 - frac;
  if (frac > 0.0) out.p[upper] = frac;
  for (int i = 0; i < n; ++i) {
    if (out.p[i] > 0.0) {
      out.mask[i] = 1;
      out.d[i] = wrapped_difference(phi, bins.center(i));
    }
  }
  return out;
}

double soft_labels_to_angle(std::span<const double> p_bins,
                            std::span<const double> d_bins, const AngleBinSpec& bins) {
  if (p_bins.size() != static_cast<std::size_t>(bins.n_bins) ||
      d_bins.size() != p_bins.size()) {
    throw std::invalid_argument("angle bin vectors do not match the bin count");
  }
  int best = -1;
  double best_p = 0.0;
  for (int i = 0; i < bins.n_bins; ++i) {
    if (p_bins[i] > best_p) {
      best_p = p_bins[i];
      best = i;
    }
  }
  if (best < 0) throw std::domain_error("no angle bin has positive probability");
  return normalize_angle(bins.center(best) + d_bins[best]);
}

double TilePrediction::score() const { return sigmoid(score_logit); }

std::vector<double> TilePrediction::bin_probabilities() const {
  std::vector<double> p(bin_logits.size());
  std::transform(bin_logits.begin(), bin_logits.end(), p.begin(), sigmoid);
  return p;
}

TileTargetGrid make_empty_targets(const GridSpec& grid, const AngleBinSpec& bins) {
  grid.validate();
  bins.validate();
  TileTargetGrid out{grid, bins, {}};
  TileTarget empty;
  empty.p_bins.assign(bins.n_bins, 0.0);
  empty.d_bins.assign(bins.n_bins, 0.0);
  empty.bin_mask.assign(bins.n_bins, 0);
  out.tiles.assign(grid.tile_count(), empty);
  return out;
}

TilePredictionGrid make_empty_predictions(const GridSpec& grid, const AngleBinSpec& bins,
                                          int embedding_dim, double saturation) {
  grid.validate();
  bins.validate();
  if (embedding_dim < 1) throw ConfigError("embedding dimension must be positive");
  TilePredictionGrid out;
  out.grid = grid;
  out.bins = bins;
  out.embedding_dim = embedding_dim;
  TilePrediction empty;
  empty.score_logit = -saturation;
  empty.bin_logits.assign(bins.n_bins, -saturation);
  empty.d_bins.assign(bins.n_bins, 0.0);
  empty.embedding = Eigen::VectorXd::Zero(embedding_dim);
  out.tiles.assign(grid.tile_count(), empty);
  return out;
}

void validate_shape(const TileTargetGrid& targets) {
  targets.grid.validate();
  targets.bins.validate();
  if (targets.tiles.size() != targets.grid.tile_count()) {
    throw DataError("target grid: tile count does not match the grid shape");
  }
  const auto n = static_cast<std::size_t>(targets.bins.n_bins);
  for (const auto& t : targets.tiles) {
    if (t.p_bins.size() != n || t.d_bins.size() != n || t.bin_mask.size() != n) {
      throw DataError("target grid: angle bin arrays do not match n_bins");
    }
  }
}

void validate_shape(const TilePredictionGrid& preds) {
  preds.grid.validate();
  preds.bins.validate();
  if (preds.tiles.size() != preds.grid.tile_count()) {
    throw DataError("prediction grid: tile count does not match the grid shape");
  }
  const auto n = static_cast<std::size_t>(preds.bins.n_bins);
  for (const auto& t : preds.tiles) {
    if (t.bin_logits.size() != n || t.d_bins.size() != n) {
      throw DataError("prediction grid: angle bin arrays do not match n_bins");
    }
    if (t.embedding.size() != preds.embedding_dim) {
      throw DataError("prediction grid: embedding size does not match embedding_dim");
    }
  }
}

double probability_to_logit(double p, double saturation) {
  if (p <= 0.0) return -saturation;
  if (p >= 1.0) return saturation;
  return std::clamp(std::log(p / (1.0 - p)), -saturation, saturation);
}

TilePrediction prediction_from_target(const TileTarget& target, int embedding_dim,
                                      double saturation) {
  TilePrediction pred;
  pred.score_logit = target.c ? saturation : -saturation;
  pred.r = target.r;
  pred.dz = target.dz;
  pred.bin_logits.resize(target.p_bins.size());
  for (std::size_t i = 0; i < target.p_bins.size(); ++i) {
    pred.bin_logits[i] = probability_to_logit(target.p_bins[i], saturation);
  }
  pred.d_bins = target.d_bins;
  pred.embedding = Eigen::VectorXd::Zero(embedding_dim);
  return pred;
}

TileTargetGrid encode_scene(std::span<const Lane3D> lanes, const GridSpec& grid,
                            const AngleBinSpec& bins, const EncodeOptions& options) {
  TileTargetGrid out = make_empty_targets(grid, bins);
  std::vector<std::vector<LaneClip>> clips(grid.tile_count());

  for (std::size_t li = 0; li < lanes.size(); ++li) {
    const auto& pts = lanes[li].points;
    if (pts.size() < 2 || !(polyline_length(pts) > 0.0)) {
      throw DataError("lane " + std::to_string(lanes[li].id) +
                      ": polyline needs at least two distinct vertices");
    }
    for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
      const PlanePoint3& a = pts[k];
      const PlanePoint3& b = pts[k + 1];
      const double x_lo = std::min(a.x, b.x), x_hi = std::max(a.x, b.x);
      const double y_lo = std::min(a.y, b.y), y_hi = std::max(a.y, b.y);
      if (x_hi < grid.x_min() || x_lo > grid.x_max() || y_hi < grid.y_min ||
          y_lo > grid.y_max()) {
        continue;
      }
      // One extra tile on each side covers vertices sitting on tile borders.
      const int c0 = std::max(0, static_cast<int>(std::floor((x_lo - grid.x_min()) / grid.tile_width)) - 1);
      const int c1 = std::min(grid.n_cols - 1, static_cast<int>(std::floor((x_hi - grid.x_min()) / grid.tile_width)) + 1);
      const int r0 = std::max(0, static_cast<int>(std::floor((y_lo - grid.y_min) / grid.tile_length)) - 1);
      const int r1 = std::min(grid.n_rows - 1, static_cast<int>(std::floor((y_hi - grid.y_min) / grid.tile_length)) + 1);
      for (int row = r0; row <= r1; ++row) {
        for (int col = c0; col <= c1; ++col) {
          const auto piece = clip_segment_to_rect(a, b, tile_rect(row, col, grid));
          if (!piece) continue;
          const double len = distance_xy(piece->first, piece->second);
          if (!(len > 0.0)) continue;
          auto& tile_clips = clips[out.index(row, col)];
          if (tile_clips.empty() || tile_clips.back().lane != static_cast<int>(li)) {
            tile_clips.push_back({static_cast<int>(li), {}, 0.0});
          }
          tile_clips.back().pieces.push_back(*piece);
          tile_clips.back().length += len;
        }
      }
    }
  }

  for (int row = 0; row < grid.n_rows; ++row) {
    for (int col = 0; col < grid.n_cols; ++col) {
      const auto& tile_clips = clips[out.index(row, col)];
      const PlanePoint center = tile_center(row, col, grid);
      const LaneClip* chosen = nullptr;
      double best = std::numeric_limits<double>::infinity();
      for (const auto& clip : tile_clips) {
        if (clip.length < options.min_seg_len) continue;
        const PlanePoint m = clip.centroid();
        const double d = std::hypot(m.x - center.x, m.y - center.y);
        if (d < best) {
          best = d;
          chosen = &clip;
        }
      }
      if (chosen == nullptr) continue;

      const LineFit fit = fit_line(*chosen);
      const PlanePoint normal{-std::sin(fit.phi), std::cos(fit.phi)};
      const double r = (fit.mean.x - center.x) * normal.x + (fit.mean.y - center.y) * normal.y;
      const PlanePoint foot{center.x + r * normal.x, center.y + r * normal.y};

      double dz = 0.0;
      double nearest = std::numeric_limits<double>::infinity();
      for (const auto& [a, b] : chosen->pieces) {
        const PlanePoint3 seg[2] = {a, b};
        const auto hit = nearest_on_polyline(seg, foot);
        if (hit.distance < nearest) {
          nearest = hit.distance;
          dz = hit.point.z;
        }
      }

      TileTarget& t = out.at(row, col);
      const SoftLabels labels = angle_to_soft_labels(fit.phi, bins);
      t.c = 1;
      t.r = r;
      t.phi = fit.phi;
      t.dz = dz;
      t.lane_id = lanes[chosen->lane].id;
      t.p_bins = labels.p;
      t.d_bins = labels.d;
      t.bin_mask = labels.mask;
    }
  }
  return out;
}

LaneSegment decode_tile(const TilePrediction& pred, int row, int col,
                        const GridSpec& grid, const AngleBinSpec& bins) {
  const PlanePoint center = tile_center(row, col, grid);
  const PlaneRect rect = tile_rect(row, col, grid);
  const std::vector<double> p = pred.bin_probabilities();
  const double phi = soft_labels_to_angle(p, pred.d_bins, bins);

  LaneSegment seg;
  seg.phi = phi;
  seg.direction = {std::cos(phi), std::sin(phi)};
  seg.midpoint = {center.x - pred.r * seg.direction.y,
                  center.y + pred.r * seg.direction.x, pred.dz};
  seg.score = pred.score();
  seg.tile = {row, col};
  seg.embedding = pred.embedding;

  const double inf = std::numeric_limits<double>::infinity();
  const auto range = clip_line_to_rect(seg.midpoint.xy(), seg.direction, rect, -inf, inf);
  if (range) {
    const auto [t0, t1] = *range;
    seg.endpoints[0] = {seg.midpoint.x + t0 * seg.direction.x,
                        seg.midpoint.y + t0 * seg.direction.y, pred.dz};
    seg.endpoints[1] = {seg.midpoint.x + t1 * seg.direction.x,
                        seg.midpoint.y + t1 * seg.direction.y, pred.dz};
  } else {
    seg.degenerate = true;
    seg.midpoint.x = std::clamp(seg.midpoint.x, rect.x_lo, rect.x_hi);
    seg.midpoint.y = std::clamp(seg.midpoint.y, rect.y_lo, rect.y_hi);
    seg.endpoints = {seg.midpoint, seg.midpoint};
  }
  return seg;
}

std::vector<LaneSegment> decode_grid(const TilePredictionGrid& preds,
                                     double score_threshold) {
  validate_shape(preds);
  std::vector<LaneSegment> out;
  for (int row = 0; row < preds.grid.n_rows; ++row) {
    for (int col = 0; col < preds.grid.n_cols; ++col) {
      const TilePrediction& pred = preds.at(row, col);
      if (pred.score() < score_threshold) continue;
      out.push_back(decode_tile(pred, row, col, preds.grid, preds.bins));
    }
  }
  return out;
}

}  // namespace lane3d
