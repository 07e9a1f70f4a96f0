#pragma once

// Semi-local tile representation of 3D lanes.
//
// Each BEV tile carries at most one straight lane segment described by its
// signed lateral offset r from the tile center (positive along the left
// normal (-sin phi, cos phi)), its direction phi, and its height dz above the
// projection plane. Directions are supervised with soft labels over N angle
// bins plus a per-bin residual.

#include <Eigen/Core>
#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "lane3d/bev_geometry.h"

namespace lane3d {

struct AngleBinSpec {
  int n_bins = 8;

  void validate() const;
  double width() const;
  // Center of bin i (0-based): width * (i + 1), so the last center is 2*pi.
  double center(int i) const;
};

// Wraps an angle into [0, 2*pi).
double normalize_angle(double phi);
// Signed difference a - b wrapped into [-pi, pi).
double wrapped_difference(double a, double b);

struct SoftLabels {
  std::vector<double> p;  // per-bin probability
  std::vector<double> d;  // per-bin residual (phi - center), radians
  std::vector<int> mask;  // 1 where p > 0
};

SoftLabels angle_to_soft_labels(double phi, const AngleBinSpec& bins);

// Argmax bin (ties toward the lower index) plus its residual. Throws
// std::domain_error when no bin has positive probability.
double soft_labels_to_angle(std::span<const double> p_bins,
                            std::span<const double> d_bins, const AngleBinSpec& bins);

struct Lane3D {
  int id = 0;
  std::vector<PlanePoint3> points;
};

struct TileTarget {
  int c = 0;
  double r = 0.0;
  double phi = 0.0;
  double dz = 0.0;
  int lane_id = -1;
  std::vector<double> p_bins;
  std::vector<double> d_bins;
  std::vector<int> bin_mask;
};

struct TilePrediction {
  double score_logit = 0.0;
  double r = 0.0;
  double dz = 0.0;
  std::vector<double> bin_logits;
  std::vector<double> d_bins;
  Eigen::VectorXd embedding;

  double score() const;
  std::vector<double> bin_probabilities() const;
};

template <typename Tile>
struct TileGrid {
  GridSpec grid;
  AngleBinSpec bins;
  std::vector<Tile> tiles;  // row-major, n_rows x n_cols

  Tile& at(int row, int col) { return tiles[index(row, col)]; }
  const Tile& at(int row, int col) const { return tiles[index(row, col)]; }
  std::size_t index(int row, int col) const {
    if (row < 0 || row >= grid.n_rows || col < 0 || col >= grid.n_cols) {
      throw std::out_of_range("tile index outside the grid");
    }
    return static_cast<std::size_t>(row) * grid.n_cols + col;
  }
};

using TileTargetGrid = TileGrid<TileTarget>;

struct TilePredictionGrid : TileGrid<TilePrediction> {
  int embedding_dim = 4;
};

TileTargetGrid make_empty_targets(const GridSpec& grid, const AngleBinSpec& bins);
TilePredictionGrid make_empty_predictions(const GridSpec& grid,
                                          const AngleBinSpec& bins, int embedding_dim,
                                          double saturation = 20.0);

// Throws DataError when the grid arrays disagree with their declared shape.
void validate_shape(const TileTargetGrid& targets);
void validate_shape(const TilePredictionGrid& preds);

// Logit of a probability, saturating 0 and 1 at -/+saturation.
double probability_to_logit(double p, double saturation);

// Prediction that reproduces the target exactly, with saturated activations.
TilePrediction prediction_from_target(const TileTarget& target, int embedding_dim,
                                      double saturation = 20.0);

struct EncodeOptions {
  double min_seg_len = 0.3;  // meters of clipped lane required for c = 1
};

TileTargetGrid encode_scene(std::span<const Lane3D> lanes, const GridSpec& grid,
                            const AngleBinSpec& bins, const EncodeOptions& options = {});

struct LaneSegment {
  PlanePoint3 midpoint;
  PlanePoint direction;  // (cos phi, sin phi)
  double phi = 0.0;
  std::array<PlanePoint3, 2> endpoints;
  double score = 0.0;
  TileIndex tile;
  Eigen::VectorXd embedding;
  bool degenerate = false;  // line missed the tile; midpoint clamped to its border
};

std::vector<LaneSegment> decode_grid(const TilePredictionGrid& preds,
                                     double score_threshold = 0.3);

// Segment decoded from a single tile (no score check).
LaneSegment decode_tile(const TilePrediction& pred, int row, int col,
                        const GridSpec& grid, const AngleBinSpec& bins);

}  // namespace lane3d
