#include "lane3d/pipeline.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <sstream>
#include <thread>

#include "lane3d/error.h"
#include "lane3d/io.h"
#include "lane3d/lane_clustering.h"
#include "lane3d/loss_suite.h"
#include "lane3d/rng.h"

namespace lane3d {
namespace {

namespace fs = std::filesystem;

EvalConfig eval_config_for(const PipelineConfig& cfg) {
  EvalConfig e = cfg.eval;
  e.extent = grid_rect(cfg.grid);
  return e;
}

template <typename T>
T read_stage_file(const fs::path& path, T (*parse)(std::string_view)) {
  const std::string text = read_text_file(path);
  try {
    return parse(text);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

bool same_grid(const GridSpec& a, const GridSpec& b) {
  return a.n_cols == b.n_cols && a.n_rows == b.n_rows && a.tile_width == b.tile_width &&
         a.tile_length == b.tile_length && a.y_min == b.y_min;
}

template <typename Grid>
void check_grid_matches(const Grid& g, const PipelineConfig& cfg, const fs::path& path) {
  if (!same_grid(g.grid, cfg.grid)) {
    std::ostringstream msg;
    msg << path.string() << ": grid " << g.grid.n_cols << "x" << g.grid.n_rows
        << " tiles of " << format_double(g.grid.tile_width) << "x"
        << format_double(g.grid.tile_length) << " m does not match the configured "
        << cfg.grid.n_cols << "x" << cfg.grid.n_rows << " tiles of "
        << format_double(cfg.grid.tile_width) << "x" << format_double(cfg.grid.tile_length) << " m";
    throw DataError(msg.str());
  }
  if (g.bins.n_bins != cfg.bins.n_bins) {
    throw DataError(path.string() + ": " + std::to_string(g.bins.n_bins) +
                    " angle bins, configured " + std::to_string(cfg.bins.n_bins));
  }
}

void check_embedding_dim(int got, const PipelineConfig& cfg, const fs::path& path) {
  if (got != cfg.embedding.d_emb) {
    throw DataError(path.string() + ": embedding dimension " + std::to_string(got) +
                    ", configured " + std::to_string(cfg.embedding.d_emb));
  }
}

std::string svg_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

class SvgCanvas {
 public:
  SvgCanvas(const GridSpec& grid, double scale) : grid_(grid), scale_(scale) {}

  double px(double x) const { return (x - grid_.x_min()) * scale_; }
  double py(double y) const { return (grid_.y_max() - y) * scale_; }
  double width() const { return grid_.lateral_extent() * scale_; }
  double height() const { return grid_.longitudinal_extent() * scale_; }

  std::string open() const {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + svg_num(width()) +
           "\" height=\"" + svg_num(height()) + "\" viewBox=\"0 0 " + svg_num(width()) + " " +
           svg_num(height()) + "\">\n";
  }

  std::string polyline(const std::vector<PlanePoint3>& pts, const std::string& style) const {
    std::string s = "<polyline fill=\"none\" " + style + " points=\"";
    for (std::size_t k = 0; k < pts.size(); ++k) {
      if (k) s += ' ';
      s += svg_num(px(pts[k].x)) + "," + svg_num(py(pts[k].y));
    }
    return s + "\"/>\n";
  }

  std::string grid_lines() const {
    std::string s = "<g stroke=\"#d0d0d0\" stroke-width=\"0.5\">\n";
    for (int c = 0; c <= grid_.n_cols; ++c) {
      const double x = px(grid_.x_min() + c * grid_.tile_width);
      s += "<line x1=\"" + svg_num(x) + "\" y1=\"0\" x2=\"" + svg_num(x) + "\" y2=\"" +
           svg_num(height()) + "\"/>\n";
    }
    for (int r = 0; r <= grid_.n_rows; ++r) {
      const double y = py(grid_.y_min + r * grid_.tile_length);
      s += "<line x1=\"0\" y1=\"" + svg_num(y) + "\" x2=\"" + svg_num(width()) + "\" y2=\"" +
           svg_num(y) + "\"/>\n";
    }
    return s + "</g>\n";
  }

 private:
  GridSpec grid_;
  double scale_;
};

constexpr double kSvgScale = 20.0;  // pixels per meter

}  // namespace

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  {
    std::vector<std::jthread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      threads.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

Scene stage_generate(const PipelineConfig& cfg, std::size_t scene_index) {
  SceneConfig sc = cfg.scene;
  sc.seed = derive_seed(cfg.master_seed, scene_index, "generate");
  return generate_scene(sc, cfg.grid, cfg.rig);
}

TileTargetGrid stage_encode(const Scene& scene, const PipelineConfig& cfg) {
  return encode_scene(scene.lanes, cfg.grid, cfg.bins, EncodeOptions{cfg.decode.min_seg_len});
}

TilePredictionGrid stage_predict(const TileTargetGrid& targets, const PipelineConfig& cfg,
                                 std::size_t scene_index) {
  NoiseConfig noise = cfg.noise;
  noise.seed = derive_seed(cfg.master_seed, scene_index, "predict");
  return oracle_predict(targets, noise, cfg.embedding, cfg.decode.saturation);
}

std::vector<LaneSegment> stage_decode(const TilePredictionGrid& preds, const PipelineConfig& cfg) {
  return decode_grid(preds, cfg.decode.score_threshold);
}

std::vector<Detection> stage_cluster(const std::vector<LaneSegment>& segments,
                                     const PipelineConfig& cfg, ClusterMethod method) {
  const auto instances =
      method == ClusterMethod::kEmbedding
          ? cluster_segments(segments, cfg.cluster)
          : greedy_baseline(segments, cfg.greedy.angle_tol, cfg.greedy.gap_tol,
                            cfg.cluster.min_cluster_size);
  std::vector<Detection> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) {
    Detection d;
    d.curve = assemble_curve(inst, CurveEnds::kBorderEndpoints, cfg.grid, cfg.decode.min_seg_len);
    d.curve.lane_id = static_cast<int>(out.size());
    d.confidence = std::clamp(inst.confidence, 0.0, 1.0);
    out.push_back(std::move(d));
  }
  std::vector<Curve> curves;
  for (const auto& d : out) curves.push_back(d.curve);
  graft_branches(curves, cfg.grid, cfg.grid.tile_width, cfg.decode.min_seg_len);
  for (std::size_t k = 0; k < out.size(); ++k) out[k].curve = std::move(curves[k]);
  return out;
}

std::vector<Curve> ground_truth_curves(const Scene& scene) {
  std::vector<Curve> out;
  out.reserve(scene.lanes.size());
  for (const auto& lane : scene.lanes) out.push_back(Curve{lane.points, lane.id});
  return out;
}

SceneRun run_scene(const PipelineConfig& cfg, std::size_t scene_index, ClusterMethod method) {
  SceneRun run;
  run.scene = stage_generate(cfg, scene_index);
  run.targets = stage_encode(run.scene, cfg);
  run.predictions = stage_predict(run.targets, cfg, scene_index);
  run.segments = stage_decode(run.predictions, cfg);
  run.lanes = stage_cluster(run.segments, cfg, method);
  return run;
}

ExperimentResult run_experiment(const PipelineConfig& cfg, ClusterMethod method, int jobs) {
  cfg.validate();
  ExperimentResult result;
  result.scenes.resize(static_cast<std::size_t>(cfg.n_scenes));
  parallel_for(result.scenes.size(), jobs,
               [&](std::size_t i) { result.scenes[i] = run_scene(cfg, i, method); });
  std::vector<SceneDetections> dets;
  dets.reserve(result.scenes.size());
  for (const auto& run : result.scenes) dets.push_back({run.lanes, ground_truth_curves(run.scene)});
  result.report = evaluate(dets, eval_config_for(cfg));
  return result;
}

LossRow scene_loss(const TilePredictionGrid& preds, const TileTargetGrid& targets,
                   const PipelineConfig& cfg, std::size_t scene_index) {
  LossRow row;
  row.scene = scene_index;
  const TotalTileLoss total = total_tile_loss(preds, targets);
  row.terms = total.terms;
  row.tile_total = total.value;
  const EmbeddingLoss emb = embedding_loss(preds, targets, cfg.embedding);
  row.pull = emb.pull;
  row.push = emb.push;

  // Probe a fixed random subset of coordinates, skipping L1 kinks of the
  // regression fields (|prediction - target| within a few step sizes).
  const std::vector<double> x = pack_tile_parameters(preds);
  const std::vector<double> analytic = pack_tile_gradient(total.grad);
  const int nb = preds.bins.n_bins;
  const std::size_t stride = 3 + 2 * static_cast<std::size_t>(nb);
  auto near_kink = [&](std::size_t k) {
    const TileTarget& t = targets.tiles[k / stride];
    if (t.c == 0) return false;
    const std::size_t off = k % stride;
    if (off == 1) return std::abs(x[k] - t.r) < 1e-4;
    if (off == 2) return std::abs(x[k] - t.dz) < 1e-4;
    if (off >= 3 + static_cast<std::size_t>(nb)) {
      const std::size_t b = off - 3 - nb;
      return t.bin_mask[b] != 0 && std::abs(x[k] - t.d_bins[b]) < 1e-4;
    }
    return false;
  };
  Rng rng(derive_seed(cfg.master_seed, scene_index, "loss"));
  std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
  std::vector<std::size_t> coords;
  for (int attempt = 0; attempt < 4096 && coords.size() < 64; ++attempt) {
    const std::size_t k = pick(rng);
    if (!near_kink(k) && std::find(coords.begin(), coords.end(), k) == coords.end()) {
      coords.push_back(k);
    }
  }
  TilePredictionGrid work = preds;
  const auto fn = [&](std::span<const double> v) {
    unpack_tile_parameters(v, work);
    return total_tile_loss(work, targets).value;
  };
  const GradCheckReport check = finite_diff_check(fn, x, analytic, 1e-6, 1e-6, coords);
  row.grad_max_rel_error = check.max_rel_error;
  row.grad_passed = check.passed;
  return row;
}

std::string loss_rows_to_csv(const std::vector<LossRow>& rows) {
  std::ostringstream out;
  out << "scene,score,angle,offsets,tile_total,pull,push,grad_max_rel_error,grad_check\n";
  for (const auto& r : rows) {
    out << r.scene << "," << format_double(r.terms.score) << "," << format_double(r.terms.angle)
        << "," << format_double(r.terms.offsets) << "," << format_double(r.tile_total) << ","
        << format_double(r.pull) << "," << format_double(r.push) << ","
        << format_double(r.grad_max_rel_error) << "," << (r.grad_passed ? "pass" : "fail") << "\n";
  }
  return out.str();
}

std::string render_bev_svg(const Scene& scene, const std::vector<Detection>& lanes,
                           const GridSpec& grid) {
  const SvgCanvas canvas(grid, kSvgScale);
  std::string s = canvas.open();
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += canvas.grid_lines();
  for (const auto& lane : scene.lanes) {
    s += canvas.polyline(lane.points, "stroke=\"red\" stroke-width=\"3\"");
  }
  for (const auto& d : lanes) {
    s += canvas.polyline(d.curve.points, "stroke=\"blue\" stroke-width=\"1.5\"");
  }
  return s + "</svg>\n";
}

std::string render_score_svg(const TilePredictionGrid& preds) {
  const GridSpec& grid = preds.grid;
  const SvgCanvas canvas(grid, kSvgScale);
  std::string s = canvas.open();
  for (int row = 0; row < grid.n_rows; ++row) {
    for (int col = 0; col < grid.n_cols; ++col) {
      const double score = preds.at(row, col).score();
      const int red = static_cast<int>(std::lround(255.0 * (1.0 - score)));
      const int green = static_cast<int>(std::lround(255.0 * score));
      const PlaneRect rect = tile_rect(row, col, grid);
      s += "<rect x=\"" + svg_num(canvas.px(rect.x_lo)) + "\" y=\"" +
           svg_num(canvas.py(rect.y_hi)) + "\" width=\"" +
           svg_num(grid.tile_width * kSvgScale) + "\" height=\"" +
           svg_num(grid.tile_length * kSvgScale) + "\" fill=\"rgb(" + std::to_string(red) +
           "," + std::to_string(green) + ",0)\"/>\n";
    }
  }
  s += canvas.grid_lines();
  return s + "</svg>\n";
}

std::string scene_file_name(std::size_t scene_index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%04zu.json", scene_index);
  return buf;
}

void cmd_generate(const PipelineConfig& cfg, const fs::path& dir, int jobs) {
  cfg.validate();
  parallel_for(cfg.n_scenes, jobs, [&](std::size_t i) {
    write_text_file(dir / "scenes" / scene_file_name(i), scene_to_json(stage_generate(cfg, i)));
  });
}

void cmd_encode(const PipelineConfig& cfg, const fs::path& dir, int jobs) {
  cfg.validate();
  parallel_for(cfg.n_scenes, jobs, [&](std::size_t i) {
    const Scene scene = read_stage_file(dir / "scenes" / scene_file_name(i), &scene_from_json);
    write_text_file(dir / "targets" / scene_file_name(i), targets_to_json(stage_encode(scene, cfg)));
  });
}

void cmd_predict(const PipelineConfig& cfg, const fs::path& dir, int jobs) {
  cfg.validate();
  parallel_for(cfg.n_scenes, jobs, [&](std::size_t i) {
    const fs::path in = dir / "targets" / scene_file_name(i);
    const TileTargetGrid targets = read_stage_file(in, &targets_from_json);
    check_grid_matches(targets, cfg, in);
    write_text_file(dir / "predictions" / scene_file_name(i),
                    predictions_to_json(stage_predict(targets, cfg, i)));
  });
}

void cmd_decode(const PipelineConfig& cfg, const fs::path& dir, int jobs) {
  cfg.validate();
  parallel_for(cfg.n_scenes, jobs, [&](std::size_t i) {
    const fs::path in = dir / "predictions" / scene_file_name(i);
    const TilePredictionGrid preds = read_stage_file(in, &predictions_from_json);
    check_grid_matches(preds, cfg, in);
    check_embedding_dim(preds.embedding_dim, cfg, in);
    write_text_file(dir / "segments" / scene_file_name(i),
                    segments_to_json(stage_decode(preds, cfg), preds.embedding_dim));
  });
}

void cmd_cluster(const PipelineConfig& cfg, const fs::path& dir, int jobs, ClusterMethod method) {
  cfg.validate();
  parallel_for(cfg.n_scenes, jobs, [&](std::size_t i) {
    const fs::path in = dir / "segments" / scene_file_name(i);
    const auto segments = read_stage_file(in, &segments_from_json);
    for (const auto& s : segments) check_embedding_dim(static_cast<int>(s.embedding.size()), cfg, in);
    write_text_file(dir / "lanes" / scene_file_name(i),
                    lanes_to_json(stage_cluster(segments, cfg, method), method));
  });
}

EvalReport cmd_eval(const PipelineConfig& cfg, const fs::path& dir, int jobs) {
  cfg.validate();
  std::vector<SceneDetections> dets(static_cast<std::size_t>(cfg.n_scenes));
  parallel_for(dets.size(), jobs, [&](std::size_t i) {
    const Scene scene = read_stage_file(dir / "scenes" / scene_file_name(i), &scene_from_json);
    dets[i].gts = ground_truth_curves(scene);
    dets[i].preds = read_stage_file(dir / "lanes" / scene_file_name(i), &lanes_from_json);
  });
  const EvalConfig ecfg = eval_config_for(cfg);
  const EvalReport report = evaluate(dets, ecfg);
  write_text_file(dir / "report.csv", report_to_csv(report, ecfg));
  write_text_file(dir / "report.json", report_to_json(report, ecfg));
  return report;
}

void cmd_loss(const PipelineConfig& cfg, const fs::path& dir, int jobs) {
  cfg.validate();
  std::vector<LossRow> rows(static_cast<std::size_t>(cfg.n_scenes));
  parallel_for(rows.size(), jobs, [&](std::size_t i) {
    const fs::path tp = dir / "targets" / scene_file_name(i);
    const fs::path pp = dir / "predictions" / scene_file_name(i);
    const TileTargetGrid targets = read_stage_file(tp, &targets_from_json);
    const TilePredictionGrid preds = read_stage_file(pp, &predictions_from_json);
    check_grid_matches(targets, cfg, tp);
    check_grid_matches(preds, cfg, pp);
    check_embedding_dim(preds.embedding_dim, cfg, pp);
    rows[i] = scene_loss(preds, targets, cfg, i);
  });
  write_text_file(dir / "loss.csv", loss_rows_to_csv(rows));
}

void cmd_plot(const PipelineConfig& cfg, const fs::path& dir, int jobs) {
  cfg.validate();
  parallel_for(cfg.n_scenes, jobs, [&](std::size_t i) {
    const Scene scene = read_stage_file(dir / "scenes" / scene_file_name(i), &scene_from_json);
    const auto lanes = read_stage_file(dir / "lanes" / scene_file_name(i), &lanes_from_json);
    const fs::path pp = dir / "predictions" / scene_file_name(i);
    const TilePredictionGrid preds = read_stage_file(pp, &predictions_from_json);
    check_grid_matches(preds, cfg, pp);
    const std::string stem = fs::path(scene_file_name(i)).stem().string();
    write_text_file(dir / "plots" / (stem + "_bev.svg"), render_bev_svg(scene, lanes, cfg.grid));
    write_text_file(dir / "plots" / (stem + "_score.svg"), render_score_svg(preds));
  });
}

EvalReport cmd_pipeline(const PipelineConfig& cfg, const fs::path& dir, int jobs,
                        ClusterMethod method) {
  cfg.validate();
  write_text_file(dir / "config.json", config_to_json(cfg));
  cmd_generate(cfg, dir, jobs);
  cmd_encode(cfg, dir, jobs);
  cmd_predict(cfg, dir, jobs);
  cmd_decode(cfg, dir, jobs);
  cmd_cluster(cfg, dir, jobs, method);
  cmd_loss(cfg, dir, jobs);
  const EvalReport report = cmd_eval(cfg, dir, jobs);
  if (cfg.plots) cmd_plot(cfg, dir, jobs);
  return report;
}

}  // namespace lane3d
