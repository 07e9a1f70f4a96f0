// lane3d: tile-grid 3D lane experiments from the command line.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 1 otherwise.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "lane3d/error.h"
#include "lane3d/io.h"
#include "lane3d/pipeline.h"

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::string method;
  std::string out;
};

lane3d::PipelineConfig resolve_config(const Options& opt) {
  lane3d::PipelineConfig cfg;
  if (!opt.config_path.empty()) cfg = lane3d::load_config(opt.config_path);
  if (opt.seed) cfg.master_seed = *opt.seed;
  if (const char* env = std::getenv("LANE3D_OUTPUT_DIR"); env && *env) cfg.output_dir = env;
  if (!opt.out.empty()) cfg.output_dir = opt.out;
  if (!opt.method.empty()) cfg.method = lane3d::parse_cluster_method(opt.method);
  if (opt.jobs < 1) throw lane3d::ConfigError("--jobs must be at least 1");
  cfg.validate();
  return cfg;
}

void print_summary(const lane3d::EvalReport& r) {
  std::cout << "map " << lane3d::format_double(r.map_score) << "  recall@iou0.5 "
            << lane3d::format_double(r.recall_at_reference) << "  gt " << r.n_gt << "  pred "
            << r.n_pred << "  matched " << r.n_matched << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tile-grid 3D lane encoding, clustering and evaluation"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "JSON configuration file");
    sub->add_option("--seed", opt.seed, "master seed (overrides the config)");
    sub->add_option("--jobs", opt.jobs, "parallel workers")->check(CLI::PositiveNumber);
    sub->add_option("--out", opt.out, "work directory (overrides LANE3D_OUTPUT_DIR and the config)");
    return sub;
  };

  auto* generate = add_common(app.add_subcommand("generate", "write synthetic scenes"));
  auto* encode = add_common(app.add_subcommand("encode", "encode scenes into tile targets"));
  auto* predict = add_common(app.add_subcommand("predict", "oracle tile predictions from targets"));
  auto* decode = add_common(app.add_subcommand("decode", "decode predictions into tile segments"));
  auto* cluster = add_common(app.add_subcommand("cluster", "group segments into lane curves"));
  auto* eval = add_common(app.add_subcommand("eval", "evaluate lanes against scenes"));
  auto* loss = add_common(app.add_subcommand("loss", "loss terms and gradient check per scene"));
  auto* plot = add_common(app.add_subcommand("plot", "SVG plots of scenes and predictions"));
  auto* pipeline = add_common(app.add_subcommand("pipeline", "run every stage"));
  auto* dump = add_common(app.add_subcommand("config", "print the effective configuration"));
  for (auto* sub : {cluster, pipeline}) {
    sub->add_option("--method", opt.method, "embedding or greedy")
        ->check(CLI::IsMember({"embedding", "greedy"}));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const lane3d::PipelineConfig cfg = resolve_config(opt);
    const std::filesystem::path dir = cfg.output_dir;
    const int jobs = opt.jobs;
    if (generate->parsed()) lane3d::cmd_generate(cfg, dir, jobs);
    else if (encode->parsed()) lane3d::cmd_encode(cfg, dir, jobs);
    else if (predict->parsed()) lane3d::cmd_predict(cfg, dir, jobs);
    else if (decode->parsed()) lane3d::cmd_decode(cfg, dir, jobs);
    else if (cluster->parsed()) lane3d::cmd_cluster(cfg, dir, jobs, cfg.method);
    else if (eval->parsed()) print_summary(lane3d::cmd_eval(cfg, dir, jobs));
    else if (loss->parsed()) lane3d::cmd_loss(cfg, dir, jobs);
    else if (plot->parsed()) lane3d::cmd_plot(cfg, dir, jobs);
    else if (pipeline->parsed()) print_summary(lane3d::cmd_pipeline(cfg, dir, jobs, cfg.method));
    else if (dump->parsed()) std::cout << lane3d::config_to_json(cfg);
  } catch (const lane3d::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const lane3d::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
