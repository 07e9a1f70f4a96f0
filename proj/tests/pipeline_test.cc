#include <gtest/gtest.h>
#include <sys/wait.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "lane3d/error.h"
#include "lane3d/io.h"
#include "lane3d/pipeline.h"
#include "lane3d/rng.h"

namespace lane3d {
namespace {

namespace fs = std::filesystem;

// Exit status of the CLI with `args`; stdout and stderr go to `log`.
int run_cli(const std::string& args, const fs::path& log, const std::string& env = "") {
  const std::string cmd =
      env + " " + LANE3D_CLI_PATH + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("lane3d_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    config_ = root_ / "config.json";
    write_text_file(config_, R"({"n_scenes": 4, "noise": {"sigma_r": 0.1, "fp_rate": 0.01,
                                  "sigma_f": 0.1}})");
    log_ = root_ / "log.txt";
  }
  void TearDown() override { fs::remove_all(root_); }

  std::string common(const fs::path& out) const {
    return "--config " + config_.string() + " --out " + out.string();
  }

  fs::path root_, config_, log_;
};

TEST_F(CliTest, PipelineWritesEveryArtifact) {
  const fs::path out = root_ / "run";
  ASSERT_EQ(run_cli("pipeline " + common(out) + " --seed 3", log_), 0) << read_text_file(log_);
  for (const char* dir : {"scenes", "targets", "predictions", "segments", "lanes", "plots"}) {
    EXPECT_TRUE(fs::is_directory(out / dir)) << dir;
  }
  for (const char* file : {"report.csv", "report.json", "loss.csv", "config.json"}) {
    EXPECT_TRUE(fs::exists(out / file)) << file;
  }
  EXPECT_TRUE(fs::exists(out / "scenes" / "scene_0003.json"));
  EXPECT_FALSE(fs::exists(out / "scenes" / "scene_0004.json"));
  EXPECT_NE(read_text_file(log_).find("map "), std::string::npos);
  // The effective configuration reloads to the same document.
  const std::string saved = read_text_file(out / "config.json");
  EXPECT_EQ(config_to_json(parse_config(saved)), saved);
}

TEST_F(CliTest, SameSeedSameBytes) {
  ASSERT_EQ(run_cli("pipeline " + common(root_ / "a") + " --seed 11", log_), 0);
  ASSERT_EQ(run_cli("pipeline " + common(root_ / "b") + " --seed 11", log_), 0);
  ASSERT_EQ(run_cli("pipeline " + common(root_ / "c") + " --seed 12", log_), 0);
  for (const char* f : {"report.json", "report.csv", "loss.csv", "lanes/scene_0002.json"}) {
    EXPECT_EQ(read_text_file(root_ / "a" / f), read_text_file(root_ / "b" / f)) << f;
  }
  EXPECT_NE(read_text_file(root_ / "a" / "scenes/scene_0000.json"),
            read_text_file(root_ / "c" / "scenes/scene_0000.json"));
}

TEST_F(CliTest, ParallelJobsMatchSerial) {
  ASSERT_EQ(run_cli("pipeline " + common(root_ / "serial") + " --jobs 1", log_), 0);
  ASSERT_EQ(run_cli("pipeline " + common(root_ / "parallel") + " --jobs 8", log_), 0);
  for (const auto& entry : fs::recursive_directory_iterator(root_ / "serial")) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), root_ / "serial");
    if (rel == "config.json") continue;  // records its own output_dir
    EXPECT_EQ(read_text_file(entry.path()), read_text_file(root_ / "parallel" / rel)) << rel;
  }
}

TEST_F(CliTest, StagesComposeToPipeline) {
  const fs::path staged = root_ / "staged";
  for (const char* stage : {"generate", "encode", "predict", "decode", "cluster", "eval", "loss"}) {
    ASSERT_EQ(run_cli(std::string(stage) + " " + common(staged), log_), 0)
        << stage << ": " << read_text_file(log_);
  }
  ASSERT_EQ(run_cli("pipeline " + common(root_ / "whole"), log_), 0);
  EXPECT_EQ(read_text_file(staged / "report.json"), read_text_file(root_ / "whole" / "report.json"));
  EXPECT_EQ(read_text_file(staged / "loss.csv"), read_text_file(root_ / "whole" / "loss.csv"));
  ASSERT_EQ(run_cli("plot " + common(staged), log_), 0);
  EXPECT_TRUE(fs::exists(staged / "plots"));
}

TEST_F(CliTest, GreedyMethodRecorded) {
  const fs::path out = root_ / "greedy";
  ASSERT_EQ(run_cli("pipeline " + common(out) + " --method greedy", log_), 0);
  EXPECT_NE(read_text_file(out / "lanes" / "scene_0000.json").find("\"greedy\""), std::string::npos);
  EXPECT_EQ(run_cli("pipeline " + common(out) + " --method kmeans", log_), 2);
}

TEST_F(CliTest, OutputDirectoryPrecedence) {
  const fs::path env_dir = root_ / "from_env";
  ASSERT_EQ(run_cli("generate --config " + config_.string(), log_,
                    "LANE3D_OUTPUT_DIR=" + env_dir.string()),
            0);
  EXPECT_TRUE(fs::exists(env_dir / "scenes" / "scene_0000.json"));
  const fs::path flag_dir = root_ / "from_flag";
  ASSERT_EQ(run_cli("generate " + common(flag_dir), log_, "LANE3D_OUTPUT_DIR=" + env_dir.string()),
            0);
  EXPECT_TRUE(fs::exists(flag_dir / "scenes" / "scene_0000.json"));
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run_cli("--help", log_), 0);
  EXPECT_EQ(run_cli("", log_), 2);
  EXPECT_EQ(run_cli("pipeline --no-such-flag", log_), 2);
  EXPECT_EQ(run_cli("pipeline --jobs 0 --out " + (root_ / "x").string(), log_), 2);

  const fs::path bad = root_ / "bad.json";
  write_text_file(bad, R"({"scene": {"n_lane": 3}})");
  EXPECT_EQ(run_cli("pipeline --config " + bad.string() + " --out " + (root_ / "x").string(), log_), 2);
  EXPECT_NE(read_text_file(log_).find("config.scene.n_lane"), std::string::npos);
  EXPECT_EQ(run_cli("pipeline --config " + (root_ / "absent.json").string(), log_), 2);

  // Encoding without scenes is a data problem.
  EXPECT_EQ(run_cli("encode " + common(root_ / "empty"), log_), 3);
}

TEST_F(CliTest, StageMismatchIsDataError) {
  const fs::path out = root_ / "mismatch";
  ASSERT_EQ(run_cli("generate " + common(out), log_), 0);
  ASSERT_EQ(run_cli("encode " + common(out), log_), 0);
  const fs::path other = root_ / "other.json";
  write_text_file(other, R"({"n_scenes": 4, "bins": {"n_bins": 12}})");
  EXPECT_EQ(run_cli("predict --config " + other.string() + " --out " + out.string(), log_), 3);
  EXPECT_NE(read_text_file(log_).find("targets"), std::string::npos);

  write_text_file(out / "scenes" / "scene_0001.json", "{\"format\": \"lane3d.scene\"");
  EXPECT_EQ(run_cli("encode " + common(out), log_), 3);
  EXPECT_NE(read_text_file(log_).find("scene_0001.json"), std::string::npos);
}

TEST(ParallelFor, CoversEveryIndexOnce) {
  for (int jobs : {1, 3, 8}) {
    std::vector<std::atomic<int>> hits(100);
    parallel_for(hits.size(), jobs, [&](std::size_t i) { hits[i]++; });
    for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  }
}

TEST(ParallelFor, RethrowsLowestFailingIndex) {
  for (int jobs : {1, 4}) {
    try {
      parallel_for(50, jobs, [](std::size_t i) {
        if (i == 7 || i == 31) throw DataError("index " + std::to_string(i));
      });
      ADD_FAILURE() << "no exception";
    } catch (const DataError& e) {
      EXPECT_STREQ(e.what(), "index 7");
    }
  }
}

TEST(Experiment, JobsDoNotChangeResults) {
  PipelineConfig cfg;
  cfg.n_scenes = 6;
  cfg.noise.sigma_r = 0.2;
  cfg.noise.fp_rate = 0.02;
  const auto a = run_experiment(cfg, ClusterMethod::kEmbedding, 1);
  const auto b = run_experiment(cfg, ClusterMethod::kEmbedding, 6);
  EXPECT_EQ(report_to_json(a.report, cfg.eval), report_to_json(b.report, cfg.eval));
}

TEST(Experiment, ZeroNoiseIsPerfect) {
  PipelineConfig cfg;
  cfg.n_scenes = 10;
  cfg.scene.topology = {0.5, 0.0, 0.0, 0.25, 0.25};
  const auto r = run_experiment(cfg, ClusterMethod::kEmbedding).report;
  EXPECT_EQ(r.map_score, 1.0);
  EXPECT_EQ(r.n_matched, r.n_gt);
}

TEST(Experiment, SeedsDifferPerStageAndScene) {
  EXPECT_NE(derive_seed(0, 0, "generate"), derive_seed(0, 0, "predict"));
  EXPECT_NE(derive_seed(0, 0, "generate"), derive_seed(0, 1, "generate"));
  EXPECT_NE(derive_seed(0, 0, "generate"), derive_seed(1, 0, "generate"));
  PipelineConfig cfg;
  EXPECT_NE(scene_to_json(stage_generate(cfg, 0)), scene_to_json(stage_generate(cfg, 1)));
}

TEST(LossReport, GradientCheckPassesOnNoisyScene) {
  PipelineConfig cfg;
  cfg.noise.sigma_r = 0.2;
  cfg.noise.sigma_f = 0.3;
  const Scene scene = stage_generate(cfg, 2);
  const auto targets = stage_encode(scene, cfg);
  const auto preds = stage_predict(targets, cfg, 2);
  const LossRow row = scene_loss(preds, targets, cfg, 2);
  EXPECT_TRUE(row.grad_passed) << row.grad_max_rel_error;
  EXPECT_GT(row.tile_total, 0.0);
  EXPECT_NEAR(row.tile_total, row.terms.score + row.terms.angle + row.terms.offsets, 1e-9);
  const std::string csv = loss_rows_to_csv({row});
  EXPECT_EQ(csv.rfind("scene,score,angle,offsets,tile_total,pull,push,grad_max_rel_error,grad_check", 0),
            0u);
}

TEST(Plots, SvgContainsGroundTruthAndPredictions) {
  PipelineConfig cfg;
  const SceneRun run = run_scene(cfg, 0, ClusterMethod::kEmbedding);
  const std::string bev = render_bev_svg(run.scene, run.lanes, cfg.grid);
  EXPECT_EQ(bev.rfind("<svg", 0), 0u);
  EXPECT_NE(bev.find("red"), std::string::npos);
  EXPECT_NE(bev.find("blue"), std::string::npos);
  const std::string score = render_score_svg(run.predictions);
  EXPECT_EQ(score.rfind("<svg", 0), 0u);
  EXPECT_EQ(scene_file_name(7), "scene_0007.json");
}

}  // namespace
}  // namespace lane3d
