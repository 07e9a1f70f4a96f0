#pragma once

// Tile and embedding losses with analytic gradients.
//
// Score and angle-bin probabilities are handled through their logits so the
// cross-entropy terms stay finite for saturated predictions. All losses are
// written for minimization (negative log-likelihoods).

#include <Eigen/Core>
#include <functional>
#include <span>
#include <vector>

#include "lane3d/tile_codec.h"

namespace lane3d {

template <typename Grad>
struct LossValueAndGrad {
  double value = 0.0;
  Grad grad{};
};

struct OffsetsGrad {
  double r = 0.0;
  double dz = 0.0;
};

struct AngleGrad {
  std::vector<double> bin_logits;
  std::vector<double> residuals;
};

struct TileGrad {
  double score_logit = 0.0;
  double r = 0.0;
  double dz = 0.0;
  std::vector<double> bin_logits;
  std::vector<double> d_bins;
};

struct TileLossWeights {
  double score = 1.0;
  double angle = 1.0;
  double offsets = 1.0;
  double positive_weight = 1.0;  // multiplies the c = 1 branch of the score loss
};

struct TileLossTerms {
  double score = 0.0;
  double angle = 0.0;
  double offsets = 0.0;
};

struct TotalTileLoss : LossValueAndGrad<std::vector<TileGrad>> {
  TileLossTerms terms;  // unweighted sums of each term
};

struct EmbeddingParams {
  double delta_pull = 0.1;
  double delta_push = 3.0;
  int d_emb = 4;

  void validate() const;
};

struct ClusterSummary {
  std::vector<int> lane_ids;   // ascending; one entry per cluster
  std::vector<int> counts;     // N_c
  Eigen::MatrixXd means;       // C x d_emb
  std::vector<int> membership; // per input row: cluster index, or -1
};

struct PullLoss : LossValueAndGrad<Eigen::MatrixXd> {
  ClusterSummary summary;
};

// Deterministic pairwise (tree) summation.
double pairwise_sum(std::span<const double> values);

LossValueAndGrad<OffsetsGrad> offsets_loss(double r_pred, double dz_pred, double r_target,
                                           double dz_target);

LossValueAndGrad<AngleGrad> angle_loss(std::span<const double> bin_logits,
                                       std::span<const double> residuals,
                                       std::span<const double> p_target,
                                       std::span<const double> d_target,
                                       std::span<const int> mask);

LossValueAndGrad<double> score_loss(double logit, int c, double positive_weight = 1.0);

// Throws DataError when the two grids disagree in shape.
TotalTileLoss total_tile_loss(const TilePredictionGrid& preds,
                              const TileTargetGrid& targets,
                              const TileLossWeights& weights = {});

ClusterSummary summarize_clusters(const Eigen::MatrixXd& embeddings,
                                  std::span<const int> lane_ids);

// Rows of `embeddings` are per-tile vectors; lane_ids < 0 mark background tiles.
PullLoss pull_loss(const Eigen::MatrixXd& embeddings, std::span<const int> lane_ids,
                   const EmbeddingParams& params);

// Gradient is with respect to the cluster means (C x d_emb).
LossValueAndGrad<Eigen::MatrixXd> push_loss(const ClusterSummary& summary,
                                            const EmbeddingParams& params);

struct EmbeddingLoss : LossValueAndGrad<Eigen::MatrixXd> {
  double pull = 0.0;
  double push = 0.0;
};

EmbeddingLoss embedding_loss(const Eigen::MatrixXd& embeddings,
                             std::span<const int> lane_ids, const EmbeddingParams& params);

// Embedding loss over the occupied tiles of a grid pair.
EmbeddingLoss embedding_loss(const TilePredictionGrid& preds,
                             const TileTargetGrid& targets, const EmbeddingParams& params);

// Flat parameter vectors for the tile losses: per tile, in row-major order,
// score_logit, r, dz, bin_logits[N], d_bins[N].
std::vector<double> pack_tile_parameters(const TilePredictionGrid& preds);
void unpack_tile_parameters(std::span<const double> flat, TilePredictionGrid& preds);
std::vector<double> pack_tile_gradient(std::span<const TileGrad> grad);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool finite = true;
  bool passed = true;
};

using ScalarFunction = std::function<double(std::span<const double>)>;

// Central differences per coordinate. Relative error is
// |analytic - numeric| / max(1, |analytic|, |numeric|). When `coords` is
// empty every coordinate is probed.
GradCheckReport finite_diff_check(const ScalarFunction& loss, std::span<const double> x,
                                  std::span<const double> analytic, double epsilon = 1e-6,
                                  double tolerance = 1e-6,
                                  std::span<const std::size_t> coords = {});

}  // namespace lane3d
