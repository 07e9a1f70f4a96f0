#include "lane3d/loss_suite.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "lane3d/error.h"

namespace lane3d {
namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double l1_subgradient(double diff) {
  if (diff > 0.0) return 1.0;
  if (diff < 0.0) return -1.0;
  return 0.0;
}

void check_same_shape(const TilePredictionGrid& preds, const TileTargetGrid& targets) {
  validate_shape(preds);
  validate_shape(targets);
  const GridSpec& a = preds.grid;
  const GridSpec& b = targets.grid;
  if (a.n_rows != b.n_rows || a.n_cols != b.n_cols || preds.bins.n_bins != targets.bins.n_bins) {
    throw DataError("prediction and target grids have different shapes");
  }
}

}  // namespace

void EmbeddingParams::validate() const {
  if (!(delta_pull > 0.0) || !(delta_push > delta_pull)) {
    throw ConfigError("embedding: require 0 < delta_pull < delta_push");
  }
  if (d_emb < 1) throw ConfigError("embedding: d_emb must be positive");
}

double pairwise_sum(std::span<const double> values) {
  if (values.size() <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

LossValueAndGrad<OffsetsGrad> offsets_loss(double r_pred, double dz_pred, double r_target,
                                           double dz_target) {
  const double dr = r_pred - r_target;
  const double ddz = dz_pred - dz_target;
  return {std::abs(dr) + std::abs(ddz), {l1_subgradient(dr), l1_subgradient(ddz)}};
}

LossValueAndGrad<AngleGrad> angle_loss(std::span<const double> bin_logits,
                                       std::span<const double> residuals,
                                       std::span<const double> p_target,
                                       std::span<const double> d_target,
                                       std::span<const int> mask) {
  const std::size_t n = bin_logits.size();
  if (residuals.size() != n || p_target.size() != n || d_target.size() != n ||
      mask.size() != n) {
    throw std::invalid_argument("angle_loss: bin vectors differ in length");
  }
  LossValueAndGrad<AngleGrad> out;
  out.grad.bin_logits.resize(n);
  out.grad.residuals.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = bin_logits[i];
    const double p = p_target[i];
    // -(p log s(x) + (1 - p) log(1 - s(x))) = softplus(x) - p x
    out.value += softplus(x) - p * x;
    out.grad.bin_logits[i] = sigmoid(x) - p;
    if (mask[i]) {
      const double diff = residuals[i] - d_target[i];
      out.value += std::abs(diff);
      out.grad.residuals[i] = l1_subgradient(diff);
    }
  }
  return out;
}

LossValueAndGrad<double> score_loss(double logit, int c, double positive_weight) {
  if (c != 0 && c != 1) throw std::invalid_argument("score_loss: c must be 0 or 1");
  if (c == 1) {
    return {positive_weight * softplus(-logit), -positive_weight * sigmoid(-logit)};
  }
  return {softplus(logit), sigmoid(logit)};
}

TotalTileLoss total_tile_loss(const TilePredictionGrid& preds,
                              const TileTargetGrid& targets,
                              const TileLossWeights& weights) {
  check_same_shape(preds, targets);
  const std::size_t n_tiles = preds.tiles.size();
  const auto n_bins = static_cast<std::size_t>(preds.bins.n_bins);

  std::vector<double> per_tile(n_tiles), score_terms(n_tiles), angle_terms(n_tiles, 0.0),
      offset_terms(n_tiles, 0.0);
  TotalTileLoss out;
  out.grad.resize(n_tiles);

  for (std::size_t k = 0; k < n_tiles; ++k) {
    const TilePrediction& p = preds.tiles[k];
    const TileTarget& t = targets.tiles[k];
    TileGrad& g = out.grad[k];
    g.bin_logits.assign(n_bins, 0.0);
    g.d_bins.assign(n_bins, 0.0);

    const auto score = score_loss(p.score_logit, t.c, weights.positive_weight);
    score_terms[k] = score.value;
    g.score_logit = weights.score * score.grad;
    per_tile[k] = weights.score * score.value;

    if (t.c == 1) {
      const auto angle = angle_loss(p.bin_logits, p.d_bins, t.p_bins, t.d_bins, t.bin_mask);
      const auto offsets = offsets_loss(p.r, p.dz, t.r, t.dz);
      angle_terms[k] = angle.value;
      offset_terms[k] = offsets.value;
      per_tile[k] += weights.angle * angle.value + weights.offsets * offsets.value;
      for (std::size_t i = 0; i < n_bins; ++i) {
        g.bin_logits[i] = weights.angle * angle.grad.bin_logits[i];
        g.d_bins[i] = weights.angle * angle.grad.residuals[i];
      }
      g.r = weights.offsets * offsets.grad.r;
      g.dz = weights.offsets * offsets.grad.dz;
    }
  }
  out.value = pairwise_sum(per_tile);
  out.terms = {pairwise_sum(score_terms), pairwise_sum(angle_terms),
               pairwise_sum(offset_terms)};
  return out;
}

ClusterSummary summarize_clusters(const Eigen::MatrixXd& embeddings,
                                  std::span<const int> lane_ids) {
  if (static_cast<std::size_t>(embeddings.rows()) != lane_ids.size()) {
    throw std::invalid_argument("embedding rows and lane ids differ in count");
  }
  std::map<int, int> index_of;
  for (int id : lane_ids) {
    if (id >= 0) index_of.emplace(id, 0);
  }
  ClusterSummary s;
  for (auto& [id, idx] : index_of) {
    idx = static_cast<int>(s.lane_ids.size());
    s.lane_ids.push_back(id);
  }
  const auto n_clusters = static_cast<Eigen::Index>(s.lane_ids.size());
  s.counts.assign(s.lane_ids.size(), 0);
  s.means = Eigen::MatrixXd::Zero(n_clusters, embeddings.cols());
  s.membership.assign(lane_ids.size(), -1);
  for (std::size_t k = 0; k < lane_ids.size(); ++k) {
    if (lane_ids[k] < 0) continue;
    const int c = index_of.at(lane_ids[k]);
    s.membership[k] = c;
    s.counts[c] += 1;
    s.means.row(c) += embeddings.row(static_cast<Eigen::Index>(k));
  }
  for (Eigen::Index c = 0; c < n_clusters; ++c) s.means.row(c) /= s.counts[c];
  return s;
}

PullLoss pull_loss(const Eigen::MatrixXd& embeddings, std::span<const int> lane_ids,
                   const EmbeddingParams& params) {
  params.validate();
  PullLoss out;
  out.summary = summarize_clusters(embeddings, lane_ids);
  out.grad = Eigen::MatrixXd::Zero(embeddings.rows(), embeddings.cols());
  const ClusterSummary& s = out.summary;
  const auto n_clusters = s.lane_ids.size();
  if (n_clusters == 0) return out;

  // g_k: derivative of hinge^2 of member k with respect to its cluster mean.
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(embeddings.rows(), embeddings.cols());
  Eigen::MatrixXd g_sum = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_clusters),
                                                embeddings.cols());
  std::vector<double> cluster_value(n_clusters, 0.0);
  for (std::size_t k = 0; k < lane_ids.size(); ++k) {
    const int c = s.membership[k];
    if (c < 0) continue;
    const auto row = static_cast<Eigen::Index>(k);
    const Eigen::VectorXd diff = (s.means.row(c) - embeddings.row(row)).transpose();
    const double dist = diff.norm();
    const double hinge = std::max(0.0, dist - params.delta_pull);
    if (hinge <= 0.0) continue;
    cluster_value[c] += hinge * hinge;
    g.row(row) = (2.0 * hinge / dist) * diff.transpose();
    g_sum.row(c) += g.row(row);
  }

  const double inv_c = 1.0 / static_cast<double>(n_clusters);
  for (std::size_t c = 0; c < n_clusters; ++c) {
    out.value += inv_c * cluster_value[c] / s.counts[c];
  }
  for (std::size_t k = 0; k < lane_ids.size(); ++k) {
    const int c = s.membership[k];
    if (c < 0) continue;
    const auto row = static_cast<Eigen::Index>(k);
    const double w = inv_c / s.counts[c];
    out.grad.row(row) = w * (g_sum.row(c) / s.counts[c] - g.row(row));
  }
  return out;
}

LossValueAndGrad<Eigen::MatrixXd> push_loss(const ClusterSummary& summary,
                                            const EmbeddingParams& params) {
  params.validate();
  const Eigen::Index n = summary.means.rows();
  LossValueAndGrad<Eigen::MatrixXd> out;
  out.grad = Eigen::MatrixXd::Zero(n, summary.means.cols());
  if (n <= 1) return out;
  const double norm = 1.0 / (static_cast<double>(n) * static_cast<double>(n - 1));
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) {
      if (a == b) continue;
      const Eigen::RowVectorXd diff = summary.means.row(a) - summary.means.row(b);
      const double dist = diff.norm();
      const double hinge = std::max(0.0, params.delta_push - dist);
      if (hinge <= 0.0) continue;
      out.value += norm * hinge * hinge;
      if (dist > 0.0) {
        const Eigen::RowVectorXd step = (norm * 2.0 * hinge / dist) * diff;
        out.grad.row(a) -= step;
        out.grad.row(b) += step;
      }
    }
  }
  return out;
}

EmbeddingLoss embedding_loss(const Eigen::MatrixXd& embeddings,
                             std::span<const int> lane_ids, const EmbeddingParams& params) {
  PullLoss pull = pull_loss(embeddings, lane_ids, params);
  const auto push = push_loss(pull.summary, params);
  EmbeddingLoss out;
  out.pull = pull.value;
  out.push = push.value;
  out.value = pull.value + push.value;
  out.grad = std::move(pull.grad);
  const ClusterSummary& s = pull.summary;
  for (std::size_t k = 0; k < lane_ids.size(); ++k) {
    const int c = s.membership[k];
    if (c < 0) continue;
    out.grad.row(static_cast<Eigen::Index>(k)) += push.grad.row(c) / s.counts[c];
  }
  return out;
}

EmbeddingLoss embedding_loss(const TilePredictionGrid& preds,
                             const TileTargetGrid& targets, const EmbeddingParams& params) {
  check_same_shape(preds, targets);
  std::vector<std::size_t> rows;
  std::vector<int> ids;
  for (std::size_t k = 0; k < targets.tiles.size(); ++k) {
    if (targets.tiles[k].c == 1 && targets.tiles[k].lane_id >= 0) {
      rows.push_back(k);
      ids.push_back(targets.tiles[k].lane_id);
    }
  }
  Eigen::MatrixXd f(static_cast<Eigen::Index>(rows.size()), preds.embedding_dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    f.row(static_cast<Eigen::Index>(i)) = preds.tiles[rows[i]].embedding.transpose();
  }
  return embedding_loss(f, ids, params);
}

std::vector<double> pack_tile_parameters(const TilePredictionGrid& preds) {
  std::vector<double> flat;
  flat.reserve(preds.tiles.size() * (3 + 2 * preds.bins.n_bins));
  for (const auto& t : preds.tiles) {
    flat.push_back(t.score_logit);
    flat.push_back(t.r);
    flat.push_back(t.dz);
    flat.insert(flat.end(), t.bin_logits.begin(), t.bin_logits.end());
    flat.insert(flat.end(), t.d_bins.begin(), t.d_bins.end());
  }
  return flat;
}

void unpack_tile_parameters(std::span<const double> flat, TilePredictionGrid& preds) {
  const auto n_bins = static_cast<std::size_t>(preds.bins.n_bins);
  if (flat.size() != preds.tiles.size() * (3 + 2 * n_bins)) {
    throw std::invalid_argument("flat parameter vector has the wrong length");
  }
  std::size_t k = 0;
  for (auto& t : preds.tiles) {
    t.score_logit = flat[k++];
    t.r = flat[k++];
    t.dz = flat[k++];
    t.bin_logits.assign(flat.begin() + k, flat.begin() + k + n_bins);
    k += n_bins;
    t.d_bins.assign(flat.begin() + k, flat.begin() + k + n_bins);
    k += n_bins;
  }
}

std::vector<double> pack_tile_gradient(std::span<const TileGrad> grad) {
  std::vector<double> flat;
  for (const auto& g : grad) {
    flat.push_back(g.score_logit);
    flat.push_back(g.r);
    flat.push_back(g.dz);
    flat.insert(flat.end(), g.bin_logits.begin(), g.bin_logits.end());
    flat.insert(flat.end(), g.d_bins.begin(), g.d_bins.end());
  }
  return flat;
}

GradCheckReport finite_diff_check(const ScalarFunction& loss, std::span<const double> x,
                                  std::span<const double> analytic, double epsilon,
                                  double tolerance, std::span<const std::size_t> coords) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("finite_diff_check: epsilon must be positive");
  if (analytic.size() != x.size()) {
    throw std::invalid_argument("finite_diff_check: gradient and input differ in length");
  }
  std::vector<double> probe(x.begin(), x.end());
  GradCheckReport report;
  auto check = [&](std::size_t i) {
    const double saved = probe[i];
    probe[i] = saved + epsilon;
    const double plus = loss(probe);
    probe[i] = saved - epsilon;
    const double minus = loss(probe);
    probe[i] = saved;
    ++report.checked;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      report.finite = false;
      report.passed = false;
      report.worst_index = i;
      return false;
    }
    const double numeric = (plus - minus) / (2.0 * epsilon);
    const double scale = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    const double err = std::abs(analytic[i] - numeric) / scale;
    if (err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_index = i;
    }
    return true;
  };
  if (coords.empty()) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!check(i)) return report;
    }
  } else {
    for (std::size_t i : coords) {
      if (i >= x.size()) throw std::out_of_range("finite_diff_check: coordinate index");
      if (!check(i)) return report;
    }
  }
  report.passed = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace lane3d
