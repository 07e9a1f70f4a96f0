#include "lane3d/scene_forge.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <utility>

#include "lane3d/error.h"
#include "lane3d/polyline.h"
#include "lane3d/rng.h"

namespace lane3d {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kRampLength = 20.0;     // meters over which a branch diverges
constexpr double kPathLeadIn = 10.0;     // path starts this far before the grid
constexpr double kVertexSpacing = 1.0;
constexpr int kBranchAttempts = 16;

// The longest piece of `points` inside `extent`; empty if none.
std::vector<PlanePoint3> longest_run(const std::vector<PlanePoint3>& points,
                                     const PlaneRect& extent) {
  if (points.size() < 2) return {};
  auto runs = clip_polyline_to_rect(points, extent);
  if (runs.empty()) return {};
  auto longest = std::max_element(runs.begin(), runs.end(), [](const auto& a, const auto& b) {
    return polyline_length(a) < polyline_length(b);
  });
  return std::move(*longest);
}

struct PathSample {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  double s = 0.0;
};

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double smoothstep(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  return t * t * (3.0 - 2.0 * t);
}

// Arc spline with piecewise-constant curvature, sampled every meter.
std::vector<PathSample> center_path(Rng& rng, const SceneConfig& cfg, const GridSpec& grid) {
  PathSample p;
  p.x = uniform(rng, -0.5, 0.5) * cfg.lane_spacing;
  p.y = grid.y_min - kPathLeadIn;
  p.theta = 0.5 * std::numbers::pi + uniform(rng, -0.05, 0.05);
  const double total = cfg.y_range + kPathLeadIn;

  std::vector<PathSample> path{p};
  double remaining = 0.0;
  double kappa = 0.0;
  while (p.s < total) {
    if (remaining <= 0.0) {
      remaining = uniform(rng, 15.0, 40.0);
      kappa = cfg.curvature_max > 0.0 ? uniform(rng, -cfg.curvature_max, cfg.curvature_max) : 0.0;
    }
    const double ds = kVertexSpacing;
    if (std::abs(kappa) > 1e-12) {
      const double next_theta = p.theta + kappa * ds;
      p.x += (std::sin(next_theta) - std::sin(p.theta)) / kappa;
      p.y -= (std::cos(next_theta) - std::cos(p.theta)) / kappa;
      p.theta = next_theta;
    } else {
      p.x += ds * std::cos(p.theta);
      p.y += ds * std::sin(p.theta);
    }
    p.s += ds;
    remaining -= ds;
    path.push_back(p);
  }
  return path;
}

template <typename OffsetFn>
std::vector<PlanePoint3> offset_lane(const std::vector<PathSample>& path, OffsetFn offset,
                                     double s_begin = -1.0) {
  std::vector<PlanePoint3> out;
  for (const auto& p : path) {
    if (p.s < s_begin) continue;
    const double o = offset(p.s);
    out.push_back({p.x - o * std::sin(p.theta), p.y + o * std::cos(p.theta), 0.0});
  }
  return out;
}

Topology pick_topology(Rng& rng, const TopologyWeights& w) {
  const double u = uniform(rng, 0.0, 1.0);
  double acc = w.parallel;
  if (u < acc) return Topology::kParallel;
  acc += w.split;
  if (u < acc) return Topology::kSplit;
  acc += w.merge;
  if (u < acc) return Topology::kMerge;
  acc += w.short_lane;
  if (u < acc) return Topology::kShort;
  if (w.perpendicular > 0.0) return Topology::kPerpendicular;
  // Rounding left u above the cumulative sum; fall back to the last
  // topology with positive weight.
  if (w.short_lane > 0.0) return Topology::kShort;
  if (w.merge > 0.0) return Topology::kMerge;
  if (w.split > 0.0) return Topology::kSplit;
  return Topology::kParallel;
}

// Arc length of the first path sample at or beyond y.
double arc_length_at_y(const std::vector<PathSample>& path, double y) {
  for (const auto& p : path) {
    if (p.y >= y) return p.s;
  }
  return path.back().s;
}

}  // namespace

std::string to_string(Topology t) {
  switch (t) {
    case Topology::kParallel: return "parallel";
    case Topology::kSplit: return "split";
    case Topology::kMerge: return "merge";
    case Topology::kShort: return "short";
    case Topology::kPerpendicular: return "perpendicular";
  }
  return "unknown";
}

void SceneConfig::validate(const GridSpec& grid) const {
  if (n_lanes < 1) throw ConfigError("scene: n_lanes must be at least 1");
  if (!(lane_spacing > 0.0)) throw ConfigError("scene: lane_spacing must be positive");
  if (!(curvature_max >= 0.0)) throw ConfigError("scene: curvature_max must be non-negative");
  if (!(surface_amplitude >= 0.0)) throw ConfigError("scene: surface_amplitude must be non-negative");
  if (!(surface_wavelength > 2.0 * grid.tile_length)) {
    throw ConfigError("scene: surface_wavelength must exceed two tile lengths");
  }
  const TopologyWeights& w = topology;
  for (double v : {w.parallel, w.split, w.merge, w.short_lane, w.perpendicular}) {
    if (!(v >= 0.0)) throw ConfigError("scene: topology weights must be non-negative");
  }
  const double sum = w.parallel + w.split + w.merge + w.short_lane + w.perpendicular;
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("scene: topology weights must sum to 1");
  if (!(y_range > 0.0)) throw ConfigError("scene: y_range must be positive");
  if (!(short_start_min <= short_start_max)) {
    throw ConfigError("scene: short_start_min must not exceed short_start_max");
  }
  if (!(min_lane_length > 0.0)) throw ConfigError("scene: min_lane_length must be positive");
}

double surface_height(double x, double y, const SurfaceParams& s) {
  if (s.amplitude == 0.0) return 0.0;
  return s.amplitude * std::sin(kTwoPi * y / s.wavelength_y + s.phase_y) *
         std::cos(kTwoPi * x / s.wavelength_x + s.phase_x);
}

Scene generate_scene(const SceneConfig& cfg, const GridSpec& grid, const CameraRig& rig) {
  grid.validate();
  cfg.validate(grid);
  rig.validate();
  Rng rng(cfg.seed);

  Scene scene;
  scene.rig = rig;
  scene.topology = pick_topology(rng, cfg.topology);
  scene.surface = {cfg.surface_amplitude, cfg.surface_wavelength, cfg.surface_wavelength,
                   uniform(rng, 0.0, kTwoPi), uniform(rng, 0.0, kTwoPi)};

  const auto path = center_path(rng, cfg, grid);
  const double spacing = cfg.lane_spacing;
  const double side = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
  const int outer = side > 0.0 ? cfg.n_lanes - 1 : 0;
  auto base_offset = [&](int k) { return (k - 0.5 * (cfg.n_lanes - 1)) * spacing; };
  const double outer_offset = base_offset(outer);

  std::vector<std::vector<PlanePoint3>> raw;
  for (int k = 0; k < cfg.n_lanes; ++k) {
    const double o = base_offset(k);
    raw.push_back(offset_lane(path, [o](double) { return o; }));
  }

  const double y0 = grid.y_min;
  std::vector<std::pair<int, int>> raw_pairs;
  switch (scene.topology) {
    case Topology::kParallel:
      break;
    case Topology::kSplit:
    case Topology::kMerge: {
      // A junction placed where the stem has already left the grid leaves a
      // branch that never separates from it inside the grid; redraw it, and
      // drop the branch if no draw separates.
      const PlaneRect extent = grid_rect(grid);
      const auto stem_run = longest_run(raw[outer], extent);
      auto separates = [&](const std::vector<PlanePoint3>& branch) {
        if (stem_run.size() < 2) return false;
        for (const auto& p : longest_run(branch, extent)) {
          if (nearest_on_polyline(stem_run, p.xy()).distance >= 0.5 * spacing) return true;
        }
        return false;
      };
      std::vector<PlanePoint3> branch;
      bool separated = false;
      for (int attempt = 0; attempt < kBranchAttempts; ++attempt) {
        if (scene.topology == Topology::kSplit) {
          scene.feature_y = y0 + uniform(rng, 10.0, 40.0);
          const double s_split = arc_length_at_y(path, scene.feature_y);
          branch = offset_lane(path, [&](double s) {
            return outer_offset + side * spacing * smoothstep((s - s_split) / kRampLength);
          });
        } else {
          scene.feature_y = y0 + uniform(rng, 30.0, 60.0);
          const double s_merge = arc_length_at_y(path, scene.feature_y);
          branch = offset_lane(path, [&](double s) {
            return outer_offset + side * spacing *
                                      (1.0 - smoothstep((s - (s_merge - kRampLength)) / kRampLength));
          });
        }
        if (separates(branch)) {
          separated = true;
          break;
        }
      }
      if (!separated) break;
      raw.push_back(std::move(branch));
      raw_pairs.emplace_back(outer, static_cast<int>(raw.size()) - 1);
      break;
    }
    case Topology::kShort: {
      const double y_start = y0 + uniform(rng, cfg.short_start_min, cfg.short_start_max);
      const double s_start = arc_length_at_y(path, y_start);
      const double o = outer_offset + side * spacing;
      raw.push_back(offset_lane(path, [o](double) { return o; }, s_start));
      scene.feature_y = raw.back().empty() ? y_start : raw.back().front().y;
      break;
    }
    case Topology::kPerpendicular: {
      // A lane inside the two outermost columns of the crossing road's tile
      // row competes with the road for its end tiles, or loses its own last
      // tiles to the road; the crossing goes in a row free of such lanes.
      const double margin = 2.0 * grid.tile_width;
      std::vector<std::vector<PlanePoint3>> kept;
      for (const auto& lane : raw) {
        auto run = longest_run(lane, grid_rect(grid));
        if (run.size() >= 2 && polyline_length(run) >= cfg.min_lane_length) kept.push_back(std::move(run));
      }
      auto row_blocked = [&](double row_lo) {
        const PlaneRect bands[2] = {
            {grid.x_min(), grid.x_min() + margin, row_lo, row_lo + grid.tile_length},
            {grid.x_max() - margin, grid.x_max(), row_lo, row_lo + grid.tile_length}};
        for (const auto& lane : kept) {
          for (const auto& band : bands) {
            if (!clip_polyline_to_rect(lane, band).empty()) return true;
          }
        }
        return false;
      };
      const double lo = y0 + 15.0;
      const double hi = y0 + 70.0;
      std::vector<std::pair<double, double>> free;
      double free_length = 0.0;
      const int first_row = static_cast<int>(std::floor((lo - grid.y_min) / grid.tile_length));
      for (int row = first_row;; ++row) {
        const double row_lo = grid.y_min + row * grid.tile_length;
        if (row_lo >= hi) break;
        if (row_blocked(row_lo)) continue;
        const double a = std::max(lo, row_lo);
        const double b = std::min(hi, row_lo + grid.tile_length);
        if (b > a) {
          free.emplace_back(a, b);
          free_length += b - a;
        }
      }
      if (free.empty()) {
        scene.feature_y = uniform(rng, lo, hi);
      } else {
        double u = uniform(rng, 0.0, free_length);
        scene.feature_y = free.back().second;
        for (const auto& [a, b] : free) {
          if (u < b - a) {
            scene.feature_y = a + u;
            break;
          }
          u -= b - a;
        }
      }
      const bool rightward = uniform(rng, 0.0, 1.0) < 0.5;
      const double x_from = rightward ? grid.x_min() - 2.0 : grid.x_max() + 2.0;
      const double x_to = rightward ? grid.x_max() + 2.0 : grid.x_min() - 2.0;
      const int n = static_cast<int>(std::ceil(std::abs(x_to - x_from) / kVertexSpacing));
      std::vector<PlanePoint3> lane;
      for (int i = 0; i <= n; ++i) {
        lane.push_back({x_from + (x_to - x_from) * i / n, scene.feature_y, 0.0});
      }
      raw.push_back(std::move(lane));
      break;
    }
  }

  const PlaneRect extent = grid_rect(grid);
  std::vector<int> final_id(raw.size(), -1);
  for (std::size_t k = 0; k < raw.size(); ++k) {
    auto run = longest_run(raw[k], extent);
    if (run.size() < 2 || polyline_length(run) < cfg.min_lane_length) continue;
    Lane3D lane;
    lane.id = static_cast<int>(scene.lanes.size());
    lane.points = std::move(run);
    for (auto& p : lane.points) p.z = surface_height(p.x, p.y, scene.surface);
    final_id[k] = lane.id;
    scene.lanes.push_back(std::move(lane));
  }
  for (const auto& [stem, branch] : raw_pairs) {
    if (final_id[stem] >= 0 && final_id[branch] >= 0) {
      scene.branch_pairs.push_back({final_id[stem], final_id[branch]});
    }
  }
  return scene;
}

void NoiseConfig::validate() const {
  for (double s : {sigma_r, sigma_phi, sigma_z, sigma_f}) {
    if (!(s >= 0.0)) throw ConfigError("noise: standard deviations must be non-negative");
  }
  for (double r : {drop_rate, fp_rate}) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("noise: rates must lie in [0, 1]");
  }
}

std::vector<Eigen::VectorXd> embedding_anchors(int count, const EmbeddingParams& params) {
  params.validate();
  const int d = params.d_emb;
  if (count < 0) throw ConfigError("anchor count must be non-negative");
  if (count > 2 * d + 1) {
    throw ConfigError("embedding dimension " + std::to_string(d) + " cannot separate " +
                      std::to_string(count) + " lanes by delta_push");
  }
  // Scaled simplex: s * e_i are delta_push apart, and t * (1, ..., 1) sits at
  // the same distance from each of them. The 1e-12 slack keeps rounded
  // distances at or above delta_push.
  const double s = params.delta_push / std::sqrt(2.0) * (1.0 + 1e-12);
  const double t = s * (1.0 + std::sqrt(1.0 + d)) / d;
  std::vector<Eigen::VectorXd> anchors;
  for (int i = 0; i < count; ++i) {
    Eigen::VectorXd a = Eigen::VectorXd::Zero(d);
    if (i < d) {
      a(i) = s;
    } else if (i == d) {
      a.setConstant(t);
    } else {
      a(i - d - 1) = -s;
    }
    anchors.push_back(std::move(a));
  }
  return anchors;
}

TilePredictionGrid oracle_predict(const TileTargetGrid& targets, const NoiseConfig& noise,
                                  const EmbeddingParams& params, double saturation) {
  validate_shape(targets);
  noise.validate();
  params.validate();

  std::map<int, int> anchor_of;
  for (const auto& t : targets.tiles) {
    if (t.c == 1) anchor_of.emplace(t.lane_id, 0);
  }
  int next = 0;
  for (auto& [id, idx] : anchor_of) idx = next++;
  const auto anchors = embedding_anchors(std::max<int>(1, next), params);

  TilePredictionGrid out =
      make_empty_predictions(targets.grid, targets.bins, params.d_emb, saturation);
  const GridSpec& grid = targets.grid;
  std::normal_distribution<double> gauss(0.0, 1.0);

  for (std::size_t k = 0; k < targets.tiles.size(); ++k) {
    // Per-tile stream: results do not depend on which other tiles drew noise.
    Rng rng(hash64(noise.seed, k));
    const TileTarget& t = targets.tiles[k];
    TilePrediction& p = out.tiles[k];
    Eigen::VectorXd jitter(params.d_emb);
    for (int i = 0; i < params.d_emb; ++i) jitter(i) = gauss(rng);

    double phi = 0.0;
    int anchor = 0;
    if (t.c == 1) {
      const bool dropped = uniform(rng, 0.0, 1.0) < noise.drop_rate;
      p.score_logit = dropped ? -saturation : saturation;
      p.r = t.r + noise.sigma_r * gauss(rng);
      phi = t.phi + noise.sigma_phi * gauss(rng);
      p.dz = t.dz + noise.sigma_z * gauss(rng);
      anchor = anchor_of.at(t.lane_id);
    } else {
      if (!(uniform(rng, 0.0, 1.0) < noise.fp_rate)) continue;
      p.score_logit = probability_to_logit(uniform(rng, 0.5, 1.0), saturation);
      p.r = uniform(rng, -0.5, 0.5) * grid.tile_width;
      phi = uniform(rng, 0.0, kTwoPi);
      p.dz = uniform(rng, -0.2, 0.2);
      anchor = std::uniform_int_distribution<int>(0, static_cast<int>(anchors.size()) - 1)(rng);
    }
    const SoftLabels labels = angle_to_soft_labels(phi, targets.bins);
    for (int i = 0; i < targets.bins.n_bins; ++i) {
      p.bin_logits[i] = probability_to_logit(labels.p[i], saturation);
    }
    p.d_bins = labels.d;
    p.embedding = anchors[anchor] + noise.sigma_f * jitter;
  }
  return out;
}

}  // namespace lane3d
