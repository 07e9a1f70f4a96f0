#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "lane3d/error.h"
#include "lane3d/loss_suite.h"
#include "lane3d/tile_codec.h"

namespace lane3d {
namespace {

const double kLn2 = std::numbers::ln2;

// Plain BCE evaluated from the probability, for moderate logits only.
double naive_bce(double logit, int c) {
  const double p = 1.0 / (1.0 + std::exp(-logit));
  return -(c * std::log(p) + (1 - c) * std::log(1.0 - p));
}

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Nudges values away from the L1 kink at `target` by at least `gap`.
void keep_away_from(std::vector<double>& v, const std::vector<double>& target, double gap) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (std::abs(v[i] - target[i]) < gap) v[i] = target[i] + (v[i] >= target[i] ? gap : -gap) * 2;
  }
}

TEST(OffsetsLoss, WorkedExample) {
  const auto l = offsets_loss(0.5, 0.2, 0.3, 0.1);
  EXPECT_NEAR(l.value, 0.3, 1e-12);
  EXPECT_EQ(l.grad.r, 1.0);
  EXPECT_EQ(l.grad.dz, 1.0);
  const std::vector<double> x{0.5, 0.2}, g{l.grad.r, l.grad.dz};
  const auto rep = finite_diff_check(
      [](std::span<const double> p) { return offsets_loss(p[0], p[1], 0.3, 0.1).value; }, x, g);
  EXPECT_LE(rep.max_rel_error, 1e-6);
}

TEST(OffsetsLoss, PerfectPredictionIsStationary) {
  const auto l = offsets_loss(0.4, -0.2, 0.4, -0.2);
  EXPECT_EQ(l.value, 0.0);
  EXPECT_EQ(l.grad.r, 0.0);
  EXPECT_EQ(l.grad.dz, 0.0);
  const auto neg = offsets_loss(0.0, 0.0, 1.0, 2.0);
  EXPECT_EQ(neg.grad.r, -1.0);
  EXPECT_EQ(neg.grad.dz, -1.0);
}

TEST(AngleLoss, SaturatedOneHotIsNearZero) {
  const int n = 8;
  std::vector<double> p(n, 0.0), d(n, 0.0), logits(n, -20.0);
  std::vector<int> mask(n, 0);
  p[0] = 1.0;
  mask[0] = 1;
  d[0] = 0.05;
  logits[0] = 20.0;
  const auto l = angle_loss(logits, d, p, d, mask);
  EXPECT_LE(l.value, 1e-6);
  EXPECT_GE(l.value, 0.0);
}

TEST(AngleLoss, EvenSplitCostsLabelEntropy) {
  const int n = 8;
  std::vector<double> p(n, 0.0), d(n, 0.0), logits(n, -40.0);
  std::vector<int> mask(n, 0);
  p[0] = p[1] = 0.5;
  mask[0] = mask[1] = 1;
  d[0] = 0.3;
  d[1] = -0.48;
  logits[0] = logits[1] = 0.0;
  const auto l = angle_loss(logits, d, p, d, mask);
  EXPECT_NEAR(l.value, 2.0 * kLn2, 1e-12);
  EXPECT_NEAR(l.value, 1.3863, 1e-4);
  // p = p~ is the minimum: the logit gradient vanishes there.
  EXPECT_NEAR(l.grad.bin_logits[0], 0.0, 1e-15);
}

TEST(AngleLoss, ResidualTermOnlyUnderMask) {
  std::vector<double> logits{0.0, 0.0}, p{1.0, 0.0}, dt{0.0, 0.0}, dp{0.2, 5.0};
  std::vector<int> mask{1, 0};
  const auto l = angle_loss(logits, dp, p, dt, mask);
  EXPECT_NEAR(l.value, 2.0 * kLn2 + 0.2, 1e-12);
  EXPECT_EQ(l.grad.residuals[0], 1.0);
  EXPECT_EQ(l.grad.residuals[1], 0.0);
}

TEST(AngleLoss, StableAtExtremeLogits) {
  std::vector<double> logits{800.0, -800.0}, p{0.0, 1.0}, d{0.0, 0.0};
  std::vector<int> mask{0, 1};
  const auto l = angle_loss(logits, d, p, d, mask);
  EXPECT_TRUE(std::isfinite(l.value));
  EXPECT_NEAR(l.value, 1600.0, 1e-9);
}

TEST(AngleLoss, LengthMismatchRejected) {
  std::vector<double> a{0.0, 0.0}, b{0.0};
  std::vector<int> m{0, 0};
  EXPECT_THROW(angle_loss(a, b, a, a, m), std::invalid_argument);
}

TEST(ScoreLoss, HandValues) {
  EXPECT_NEAR(score_loss(0.0, 1).value, kLn2, 1e-15);
  EXPECT_NEAR(score_loss(0.0, 1).value, 0.69315, 1e-5);
  EXPECT_LE(score_loss(30.0, 1).value, 1e-12);
  for (double x : {-4.0, -0.7, 0.0, 0.3, 2.5}) {
    EXPECT_NEAR(score_loss(x, 1).value, naive_bce(x, 1), 1e-12);
    EXPECT_NEAR(score_loss(x, 0).value, naive_bce(x, 0), 1e-12);
  }
}

TEST(ScoreLoss, Symmetry) {
  // c~ -> 1 - c~ is logit -> -logit.
  for (double x : {-30.0, -3.0, -0.1, 0.0, 1.2, 50.0}) {
    EXPECT_DOUBLE_EQ(score_loss(x, 1).value, score_loss(-x, 0).value);
  }
}

TEST(ScoreLoss, StableAtExtremeLogits) {
  const auto a = score_loss(-1000.0, 1);
  EXPECT_NEAR(a.value, 1000.0, 1e-9);
  EXPECT_NEAR(a.grad, -1.0, 1e-12);
  const auto b = score_loss(1000.0, 1);
  EXPECT_EQ(b.value, 0.0);
  EXPECT_TRUE(std::isfinite(b.grad));
}

TEST(ScoreLoss, PositiveWeightScalesOccupiedBranch) {
  EXPECT_NEAR(score_loss(0.0, 1, 3.0).value, 3.0 * kLn2, 1e-15);
  EXPECT_NEAR(score_loss(0.0, 0, 3.0).value, kLn2, 1e-15);
  EXPECT_THROW(score_loss(0.0, 2), std::invalid_argument);
}

TEST(PairwiseSum, MatchesAccumulateAndIsOrderFixed) {
  std::mt19937_64 rng(2);
  const auto v = random_vector(rng, 1001, -1.0, 1.0);
  double plain = 0.0;
  for (double x : v) plain += x;
  EXPECT_NEAR(pairwise_sum(v), plain, 1e-12);
  EXPECT_EQ(pairwise_sum(v), pairwise_sum(v));
  EXPECT_EQ(pairwise_sum(std::vector<double>{}), 0.0);
}

// Target grid with a single vertical lane through column 8 (a bin center).
TileTargetGrid vertical_lane_targets() {
  const GridSpec g;
  const std::vector<Lane3D> lanes{{0, {{0.64, 0.0, 0.0}, {0.64, 78.0, 0.0}}}};
  return encode_scene(lanes, g, AngleBinSpec{});
}

TilePredictionGrid perfect_predictions(const TileTargetGrid& t) {
  TilePredictionGrid p = make_empty_predictions(t.grid, t.bins, 4);
  for (std::size_t k = 0; k < t.tiles.size(); ++k) p.tiles[k] = prediction_from_target(t.tiles[k], 4);
  return p;
}

TEST(TotalTileLoss, PerfectCopyIsNearZero) {
  const auto t = vertical_lane_targets();
  const auto l = total_tile_loss(perfect_predictions(t), t);
  EXPECT_LE(l.value, 1e-5 * t.grid.tile_count());
  EXPECT_GE(l.value, 0.0);
}

TEST(TotalTileLoss, SumOfPartsForSingleOccupiedTile) {
  const GridSpec g;
  const AngleBinSpec bins;
  TileTargetGrid t = make_empty_targets(g, bins);
  TilePredictionGrid p = make_empty_predictions(g, bins, 4);
  TileTarget& tt = t.at(3, 5);
  tt.c = 1;
  tt.r = 0.3;
  tt.dz = 0.1;
  tt.lane_id = 0;
  tt.p_bins.assign(8, 0.0);
  tt.p_bins[0] = tt.p_bins[1] = 0.5;
  tt.bin_mask.assign(8, 0);
  tt.bin_mask[0] = tt.bin_mask[1] = 1;
  tt.d_bins.assign(8, 0.0);
  TilePrediction& tp = p.at(3, 5);
  tp.score_logit = 0.0;
  tp.r = 0.5;
  tp.dz = 0.2;
  tp.bin_logits.assign(8, -40.0);
  tp.bin_logits[0] = tp.bin_logits[1] = 0.0;
  tp.d_bins.assign(8, 0.0);

  const auto l = total_tile_loss(p, t);
  double empty = 0.0;
  for (std::size_t k = 0; k < t.tiles.size(); ++k) {
    if (t.tiles[k].c == 0) empty += score_loss(p.tiles[k].score_logit, 0).value;
  }
  const double expected = kLn2 + 2.0 * kLn2 + 0.3 + empty;
  EXPECT_NEAR(l.value, expected, 1e-9);
  EXPECT_NEAR(l.terms.offsets, 0.3, 1e-12);
  EXPECT_NEAR(l.terms.angle, 2.0 * kLn2, 1e-9);
}

TEST(TotalTileLoss, UnoccupiedRegressionFieldsAreMasked) {
  const auto t = vertical_lane_targets();
  auto p = perfect_predictions(t);
  const double before = total_tile_loss(p, t).value;
  ASSERT_EQ(t.at(0, 0).c, 0);
  p.at(0, 0).r = 7.0;
  p.at(0, 0).dz = -3.0;
  p.at(0, 0).d_bins[2] = 1.0;
  p.at(0, 0).bin_logits[4] = 5.0;
  const auto after = total_tile_loss(p, t);
  EXPECT_EQ(after.value, before);
  const TileGrad& g = after.grad[t.index(0, 0)];
  EXPECT_EQ(g.r, 0.0);
  EXPECT_EQ(g.dz, 0.0);
  for (double v : g.bin_logits) EXPECT_EQ(v, 0.0);
  for (double v : g.d_bins) EXPECT_EQ(v, 0.0);
}

TEST(TotalTileLoss, ShapeMismatchRejected) {
  const auto t = vertical_lane_targets();
  GridSpec small;
  small.n_rows = 4;
  const auto p = make_empty_predictions(small, AngleBinSpec{}, 4);
  EXPECT_THROW(total_tile_loss(p, t), DataError);
}

TEST(TotalTileLoss, WeightsScaleTerms) {
  const auto t = vertical_lane_targets();
  auto p = make_empty_predictions(t.grid, t.bins, 4, 0.5);
  const auto base = total_tile_loss(p, t);
  TileLossWeights w;
  w.score = 2.0;
  w.angle = 0.5;
  w.offsets = 3.0;
  const auto scaled = total_tile_loss(p, t, w);
  EXPECT_NEAR(scaled.value,
              2.0 * base.terms.score + 0.5 * base.terms.angle + 3.0 * base.terms.offsets, 1e-9);
}

Eigen::MatrixXd rows(std::initializer_list<std::initializer_list<double>> data) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(data.size()),
                    static_cast<Eigen::Index>(data.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : data) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

TEST(PullLoss, WorkedExamples) {
  const EmbeddingParams params;
  const std::vector<int> ids{0, 0};
  // mu = (1, 1, 0, 0); members at mu +- v.
  EXPECT_NEAR(pull_loss(rows({{1.6, 1, 0, 0}, {0.4, 1, 0, 0}}), ids, params).value, 0.25, 1e-12);
  EXPECT_EQ(pull_loss(rows({{0.1, 0, 0, 0}, {-0.1, 0, 0, 0}}), ids, params).value, 0.0);
  EXPECT_EQ(pull_loss(rows({{2, 3, 4, 5}, {2, 3, 4, 5}}), ids, params).value, 0.0);
}

TEST(PullLoss, BackgroundRowsIgnoredAndEmptyIsZero) {
  const EmbeddingParams params;
  const auto with_bg = pull_loss(rows({{1.6, 1, 0, 0}, {9, 9, 9, 9}, {0.4, 1, 0, 0}}),
                                 std::vector<int>{4, -1, 4}, params);
  EXPECT_NEAR(with_bg.value, 0.25, 1e-12);
  EXPECT_EQ(with_bg.grad.row(1).norm(), 0.0);
  const auto none = pull_loss(rows({{1, 2, 3, 4}}), std::vector<int>{-1}, params);
  EXPECT_EQ(none.value, 0.0);
  EXPECT_TRUE(none.summary.lane_ids.empty());
}

TEST(ClusterSummary, MeansRecomputed) {
  const auto f = rows({{1, 0}, {3, 0}, {0, 5}, {0, 7}, {0, 9}});
  const auto s = summarize_clusters(f, std::vector<int>{2, 2, 7, 7, 7});
  ASSERT_EQ(s.lane_ids, (std::vector<int>{2, 7}));
  EXPECT_EQ(s.counts, (std::vector<int>{2, 3}));
  EXPECT_NEAR(s.means(0, 0), 2.0, 1e-15);
  EXPECT_NEAR(s.means(1, 1), 7.0, 1e-15);
}

ClusterSummary two_means(double distance) {
  ClusterSummary s;
  s.lane_ids = {0, 1};
  s.counts = {1, 1};
  s.means = Eigen::MatrixXd::Zero(2, 4);
  s.means(1, 0) = distance;
  s.membership = {0, 1};
  return s;
}

TEST(PushLoss, WorkedExamples) {
  const EmbeddingParams params;
  EXPECT_NEAR(push_loss(two_means(1.0), params).value, 4.0, 1e-12);
  EXPECT_EQ(push_loss(two_means(3.0), params).value, 0.0);
  ClusterSummary one = two_means(1.0);
  one.lane_ids = {0};
  one.counts = {1};
  one.means = Eigen::MatrixXd::Zero(1, 4);
  EXPECT_EQ(push_loss(one, params).value, 0.0);
}

TEST(EmbeddingLoss, SeparatedTightClustersAreZero) {
  const auto f = rows({{0, 0, 0, 0}, {0, 0, 0, 0}, {3.5, 0, 0, 0}, {3.5, 0, 0, 0}});
  EXPECT_EQ(embedding_loss(f, std::vector<int>{0, 0, 1, 1}, EmbeddingParams{}).value, 0.0);
}

TEST(EmbeddingLoss, EqualsPullPlusPush) {
  const EmbeddingParams params;
  // Lane 0 pulls (0.25), the two means are 1 apart (push 4).
  const auto f = rows({{1.6, 1, 0, 0}, {0.4, 1, 0, 0}, {1, 2, 0, 0}});
  const std::vector<int> ids{0, 0, 1};
  const auto e = embedding_loss(f, ids, params);
  EXPECT_NEAR(e.pull, 0.5 * 0.25, 1e-12);
  EXPECT_NEAR(e.push, 4.0, 1e-12);
  EXPECT_NEAR(e.value, pull_loss(f, ids, params).value +
                           push_loss(summarize_clusters(f, ids), params).value, 1e-12);
}

TEST(EmbeddingLoss, PermutationAndTranslationInvariant) {
  std::mt19937_64 rng(9);
  const EmbeddingParams params;
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd f(12, 4);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = u(rng);
    const std::vector<int> ids{0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, -1};
    const std::vector<int> relabeled{5, 5, 5, 9, 9, 9, 1, 1, 1, 0, 0, -1};
    const double base = embedding_loss(f, ids, params).value;
    EXPECT_NEAR(embedding_loss(f, relabeled, params).value, base, 1e-12);
    Eigen::MatrixXd shifted = f.rowwise() + Eigen::RowVectorXd::Constant(4, 17.25);
    EXPECT_NEAR(embedding_loss(shifted, ids, params).value, base, 1e-9);
    // Row order does not matter either.
    Eigen::MatrixXd reversed = f.colwise().reverse();
    std::vector<int> rev_ids(ids.rbegin(), ids.rend());
    EXPECT_NEAR(embedding_loss(reversed, rev_ids, params).value, base, 1e-12);
  }
}

TEST(GradientCheck, QuadraticKnownGradient) {
  const std::vector<double> x{1.0, 2.0}, g{2.0, 4.0};
  const auto rep = finite_diff_check(
      [](std::span<const double> p) { return p[0] * p[0] + p[1] * p[1]; }, x, g);
  EXPECT_TRUE(rep.passed);
  EXPECT_LT(rep.max_rel_error, 1e-8);
  EXPECT_EQ(rep.checked, 2u);
}

TEST(GradientCheck, DetectsCorruptedGradient) {
  const std::vector<double> x{1.0, 2.0}, g{2.0, 4.0 * 1.01};
  const auto rep = finite_diff_check(
      [](std::span<const double> p) { return p[0] * p[0] + p[1] * p[1]; }, x, g);
  EXPECT_FALSE(rep.passed);
  EXPECT_GT(rep.max_rel_error, 1e-6);
  EXPECT_EQ(rep.worst_index, 1u);
}

TEST(GradientCheck, ReportsNonFiniteProbe) {
  const std::vector<double> x{0.0}, g{0.0};
  const auto rep = finite_diff_check(
      [](std::span<const double> p) { return p[0] > 0.0 ? std::log(-1.0) : 0.0; }, x, g);
  EXPECT_FALSE(rep.finite);
  EXPECT_FALSE(rep.passed);
  EXPECT_THROW(finite_diff_check([](std::span<const double>) { return 0.0; }, x, g, 0.0),
               std::invalid_argument);
}

TEST(GradientCheck, OffsetsAtRandomPoints) {
  std::mt19937_64 rng(21);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto target = random_vector(rng, 2, -1.0, 1.0);
    auto x = random_vector(rng, 2, -1.0, 1.0);
    keep_away_from(x, target, 1e-3);
    const auto l = offsets_loss(x[0], x[1], target[0], target[1]);
    const std::vector<double> g{l.grad.r, l.grad.dz};
    const auto rep = finite_diff_check(
        [&](std::span<const double> p) {
          return offsets_loss(p[0], p[1], target[0], target[1]).value;
        },
        x, g);
    worst = std::max(worst, rep.max_rel_error);
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(GradientCheck, AngleAtRandomPoints) {
  std::mt19937_64 rng(22);
  const AngleBinSpec bins;
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const SoftLabels t = angle_to_soft_labels(angle(rng), bins);
    // x = [logits..., residuals...]
    auto x = random_vector(rng, 16, -3.0, 3.0);
    std::vector<double> res(x.begin() + 8, x.end());
    keep_away_from(res, t.d, 1e-3);
    std::copy(res.begin(), res.end(), x.begin() + 8);
    auto eval = [&](std::span<const double> p) {
      return angle_loss(p.subspan(0, 8), p.subspan(8, 8), t.p, t.d, t.mask);
    };
    const auto l = eval(x);
    std::vector<double> g(l.grad.bin_logits);
    g.insert(g.end(), l.grad.residuals.begin(), l.grad.residuals.end());
    const auto rep =
        finite_diff_check([&](std::span<const double> p) { return eval(p).value; }, x, g);
    worst = std::max(worst, rep.max_rel_error);
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(GradientCheck, ScoreAtRandomPoints) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(-8.0, 8.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int c = trial % 2;
    const std::vector<double> x{u(rng)};
    const std::vector<double> g{score_loss(x[0], c, 1.7).grad};
    const auto rep = finite_diff_check(
        [&](std::span<const double> p) { return score_loss(p[0], c, 1.7).value; }, x, g);
    worst = std::max(worst, rep.max_rel_error);
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(GradientCheck, TotalTileLossOnEncodedScene) {
  const auto t = vertical_lane_targets();
  auto p = make_empty_predictions(t.grid, t.bins, 4, 2.0);
  std::mt19937_64 rng(24);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (auto& tile : p.tiles) {
    tile.score_logit = u(rng);
    tile.r = u(rng);
    tile.dz = u(rng);
    for (auto& v : tile.bin_logits) v = u(rng);
    for (auto& v : tile.d_bins) v = u(rng);
  }
  const auto flat = pack_tile_parameters(p);
  const auto grad = pack_tile_gradient(total_tile_loss(p, t).grad);
  ASSERT_EQ(flat.size(), grad.size());
  const std::size_t stride = 3 + 2 * 8;
  ASSERT_EQ(flat.size(), t.tiles.size() * stride);
  // Probe 100 coordinates, half of them inside occupied tiles.
  std::vector<std::size_t> coords;
  std::vector<std::size_t> occupied;
  for (std::size_t k = 0; k < t.tiles.size(); ++k) {
    if (t.tiles[k].c == 1) occupied.push_back(k);
  }
  ASSERT_FALSE(occupied.empty());
  std::uniform_int_distribution<std::size_t> any(0, flat.size() - 1), field(0, stride - 1),
      pick(0, occupied.size() - 1);
  while (coords.size() < 100) {
    const std::size_t i = coords.size() % 2 ? any(rng) : occupied[pick(rng)] * stride + field(rng);
    coords.push_back(i);
  }
  TilePredictionGrid probe = p;
  const auto rep = finite_diff_check(
      [&](std::span<const double> x) {
        unpack_tile_parameters(x, probe);
        return total_tile_loss(probe, t).value;
      },
      flat, grad, 1e-6, 1e-6, coords);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error << " at " << rep.worst_index;
}

TEST(GradientCheck, EmbeddingLossAwayFromHinges) {
  std::mt19937_64 rng(25);
  const EmbeddingParams params;
  std::normal_distribution<double> n(0.0, 1.0);
  double worst = 0.0;
  int checked = 0;
  for (int trial = 0; checked < 100 && trial < 1000; ++trial) {
    const std::vector<int> ids{0, 0, 0, 1, 1, 2, 2, 2, -1};
    Eigen::MatrixXd f(9, 4);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = n(rng);
    // Skip draws within 1e-3 of any hinge.
    const auto s = summarize_clusters(f, ids);
    bool near_kink = false;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (s.membership[k] < 0) continue;
      const double d = (s.means.row(s.membership[k]) - f.row(static_cast<Eigen::Index>(k))).norm();
      near_kink |= std::abs(d - params.delta_pull) < 1e-3;
    }
    for (Eigen::Index a = 0; a < s.means.rows(); ++a) {
      for (Eigen::Index b = a + 1; b < s.means.rows(); ++b) {
        near_kink |= std::abs((s.means.row(a) - s.means.row(b)).norm() - params.delta_push) < 1e-3;
      }
    }
    if (near_kink) continue;
    ++checked;
    const auto e = embedding_loss(f, ids, params);
    std::vector<double> x(f.data(), f.data() + f.size());
    std::vector<double> g(e.grad.data(), e.grad.data() + e.grad.size());
    const auto rep = finite_diff_check(
        [&](std::span<const double> p) {
          const Eigen::Map<const Eigen::MatrixXd> m(p.data(), 9, 4);
          return embedding_loss(Eigen::MatrixXd(m), ids, params).value;
        },
        x, g);
    worst = std::max(worst, rep.max_rel_error);
  }
  EXPECT_EQ(checked, 100);
  EXPECT_LE(worst, 1e-6);
}

TEST(GradientCheck, PushWithRespectToMeans) {
  std::mt19937_64 rng(26);
  const EmbeddingParams params;
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    ClusterSummary s;
    s.lane_ids = {0, 1, 2};
    s.counts = {1, 1, 1};
    s.means = Eigen::MatrixXd(3, 4);
    for (Eigen::Index i = 0; i < s.means.size(); ++i) s.means.data()[i] = u(rng);
    const auto l = push_loss(s, params);
    std::vector<double> x(s.means.data(), s.means.data() + s.means.size());
    std::vector<double> g(l.grad.data(), l.grad.data() + l.grad.size());
    const auto rep = finite_diff_check(
        [&](std::span<const double> p) {
          ClusterSummary q = s;
          q.means = Eigen::Map<const Eigen::MatrixXd>(p.data(), 3, 4);
          return push_loss(q, params).value;
        },
        x, g);
    worst = std::max(worst, rep.max_rel_error);
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(EmbeddingParams, Validation) {
  EmbeddingParams p;
  EXPECT_NO_THROW(p.validate());
  p.delta_pull = 3.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = EmbeddingParams{};
  p.d_emb = 0;
  EXPECT_THROW(p.validate(), ConfigError);
}

}  // namespace
}  // namespace lane3d
