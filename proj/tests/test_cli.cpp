#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "handfit/cli.hpp"
#include "handfit/metrics.hpp"
#include "handfit/synthdata.hpp"
#include "handfit/train.hpp"
#include "testing.hpp"

using namespace handfit;
using handfit::testing::TempDir;
namespace fs = std::filesystem;

namespace {

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "handfit");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

// Small model, data and checkpoint shared by the command tests.
class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir = new TempDir("cli");
    std::ofstream(*dir / "tiny.json") << R"({"d_model": 8, "heads": 2, "image_size": 32, "batch_size": 2,
                                           "steps_phase1": 2, "steps_phase2": 2, "lr": 0.001})";
    ASSERT_EQ(cli({"gen-data", "--out", (*dir / "data").string(), "--count", "4", "--size", "32", "--hands", "2",
                   "--seed", "5"}),
              0);
    ASSERT_EQ(cli({"train", "--config", (*dir / "tiny.json").string(), "--data", (*dir / "data").string(), "--out",
                   (*dir / "run" / "ck.bin").string()}),
              0);
  }
  static void TearDownTestSuite() {
    delete dir;
    dir = nullptr;
  }
  static TempDir* dir;
};

TempDir* CliPipeline::dir = nullptr;

}  // namespace

TEST(GenData, WritesManifestAndIsReproducible) {
  TempDir a("gen_a"), b("gen_b");
  ASSERT_EQ(cli({"gen-data", "--out", a.path().string(), "--count", "3", "--seed", "9"}), 0);
  ASSERT_EQ(cli({"gen-data", "--out", b.path().string(), "--count", "3", "--seed", "9"}), 0);
  const DatasetManifest m = read_manifest(a.path());
  EXPECT_EQ(m.count, 3);
  EXPECT_TRUE(fs::exists(a / "effective_config.json"));
  for (const auto& e : fs::recursive_directory_iterator(a.path())) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a.path());
    EXPECT_EQ(slurp(e.path()), slurp(b / rel.string())) << rel;
  }
}

TEST(GenData, RejectsBadSize) {
  TempDir dir("gen_bad");
  ::testing::internal::CaptureStderr();
  EXPECT_EQ(cli({"gen-data", "--out", dir.path().string(), "--size", "63"}), 1);
  EXPECT_NE(::testing::internal::GetCapturedStderr().find("multiple of 32"), std::string::npos);
  EXPECT_EQ(cli({"gen-data", "--out", dir.path().string(), "--hands", "3"}), 1);
}

TEST(Binary, ExitCodes) {
  TempDir dir("bin");
  const std::string exe = HANDFIT_CLI_PATH;
  const std::string quiet = " > " + (dir / "log.txt").string() + " 2>&1";
  EXPECT_EQ(std::system((exe + " gen-data --out " + (dir / "d").string() + " --count 1" + quiet).c_str()), 0);
  EXPECT_EQ(WEXITSTATUS(std::system((exe + " gen-data --out " + (dir / "x").string() + " --size 63" + quiet).c_str())), 1);
  EXPECT_EQ(WEXITSTATUS(std::system((exe + " frobnicate" + quiet).c_str())), 1);
  EXPECT_EQ(WEXITSTATUS(std::system((exe + " eval --checkpoint " + (dir / "nope.bin").string() + " --data " +
                                     (dir / "d").string() + " --report " + (dir / "r.json").string() + quiet)
                                        .c_str())),
            2);
}

TEST(Config, UnknownKeyIsRejected) {
  EXPECT_THROW(run_config_from_json(nlohmann::json{{"d_modle", 8}}), std::invalid_argument);
  RunConfig rc = run_config_from_json(nlohmann::json{{"d_model", 16}, {"data", "x"}});
  EXPECT_EQ(rc.model.d_model, 16);
  EXPECT_EQ(rc.data, "x");
  apply_overrides(rc, {"lambda_hand=0.25", "edge={\"mode\": \"canny-hard\"}", "out=somewhere"});
  EXPECT_EQ(rc.model.lambda_hand, 0.25);
  EXPECT_EQ(rc.model.edge.mode, EdgeMode::CannyHard);
  EXPECT_EQ(rc.out, "somewhere");
  EXPECT_THROW(apply_overrides(rc, {"nokey=1"}), std::invalid_argument);
  EXPECT_THROW(apply_overrides(rc, {"missing_equals"}), std::invalid_argument);
  const RunConfig back = run_config_from_json(rc.to_json());
  EXPECT_EQ(back.to_json(), rc.to_json());
}

TEST(Ablation, CsvRoundTrip) {
  TempDir dir("csv");
  std::vector<AblationRow> rows;
  for (const std::string v : {"baseline", "full"})
    for (double w : kDefaultWHandGrid) {
      AblationRow r{v, w, 1234, {}};
      for (std::size_t k = 0; k < kAblationMetrics.size(); ++k) r.metrics[kAblationMetrics[k]] = 0.1 * k + w;
      rows.push_back(r);
    }
  rows[3].metrics.erase("ssim");
  write_ablation_csv(dir / "a.csv", rows);
  const auto back = read_ablation_csv(dir / "a.csv");
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].variant, rows[i].variant);
    EXPECT_EQ(back[i].w_hand, rows[i].w_hand);
    EXPECT_EQ(back[i].param_count, rows[i].param_count);
    EXPECT_EQ(back[i].metrics, rows[i].metrics);
  }
}

TEST_F(CliPipeline, TrainWritesCheckpointLogAndConfig) {
  const Checkpoint ck = load_checkpoint(*dir / "run" / "ck.bin");
  EXPECT_EQ(ck.step, 4);
  EXPECT_EQ(ck.config.d_model, 8);
  const nlohmann::json eff = read_json(*dir / "run" / "effective_config.json");
  EXPECT_EQ(eff.at("d_model"), 8);
  std::ifstream log(*dir / "run" / "ck.bin.loss.csv");
  int lines = 0;
  for (std::string l; std::getline(log, l);) ++lines;
  EXPECT_EQ(lines, 5);
}

TEST_F(CliPipeline, PairedEvalReportsAllMetrics) {
  const fs::path report = *dir / "eval" / "paired.json";
  ASSERT_EQ(cli({"eval", "--checkpoint", (*dir / "run" / "ck.bin").string(), "--data", (*dir / "data").string(),
                 "--report", report.string(), "--steps", "2"}),
            0);
  const EvalReport r = EvalReport::from_json(slurp(report));
  for (const auto& k : kAblationMetrics) EXPECT_TRUE(r.metrics.count(k)) << k;
  EXPECT_EQ(r.samples, 4);
  EXPECT_TRUE(fs::exists(*dir / "eval" / "effective_config.json"));
}

TEST_F(CliPipeline, UnpairedEvalOmitsSsim) {
  const fs::path report = *dir / "eval_u" / "r.json";
  const std::string ck = (*dir / "run" / "ck.bin").string(), data = (*dir / "data").string();
  ASSERT_EQ(cli({"eval", "--checkpoint", ck, "--data", data, "--mode", "unpaired", "--report", report.string(),
                 "--steps", "2"}),
            0);
  const EvalReport r = EvalReport::from_json(slurp(report));
  EXPECT_EQ(r.metrics.count("ssim"), 0u);
  EXPECT_EQ(r.metrics.count("fid_h"), 1u);
  ::testing::internal::CaptureStderr();
  EXPECT_EQ(cli({"eval", "--checkpoint", ck, "--data", data, "--mode", "unpaired", "--metrics", "ssim,fid",
                 "--report", report.string()}),
            1);
  EXPECT_NE(::testing::internal::GetCapturedStderr().find("ssim needs pixel ground truth"), std::string::npos);
}

TEST_F(CliPipeline, InferIsDeterministic) {
  const std::string ck = (*dir / "run" / "ck.bin").string(), data = (*dir / "data").string();
  ASSERT_EQ(cli({"infer", "--checkpoint", ck, "--data", data, "--out", (*dir / "inf_a").string(), "--steps", "2",
                 "--seed", "4", "--limit", "2"}),
            0);
  ASSERT_EQ(cli({"infer", "--checkpoint", ck, "--data", data, "--out", (*dir / "inf_b").string(), "--steps", "2",
                 "--seed", "4", "--limit", "2"}),
            0);
  const std::string id = sample_id(0);
  EXPECT_EQ(slurp(*dir / "inf_a" / (id + ".png")), slurp(*dir / "inf_b" / (id + ".png")));
  EXPECT_TRUE(fs::exists(*dir / "inf_a" / (sample_id(1) + "_raw.png")));
  EXPECT_FALSE(fs::exists(*dir / "inf_a" / (sample_id(2) + ".png")));
  EXPECT_EQ(read_json(*dir / "inf_a" / "effective_config.json").at("seed"), 4);
}

TEST_F(CliPipeline, AblateEmitsCompleteCsv) {
  const fs::path out = *dir / "ablate";
  ASSERT_EQ(cli({"ablate", "--config", (*dir / "tiny.json").string(), "--data", (*dir / "data").string(), "--out",
                 out.string(), "--variants", "baseline,hpa_struct_appear", "--train-all", "--eval-steps", "1",
                 "--limit", "2"}),
            0);
  const auto rows = read_ablation_csv(out / "ablation.csv");
  ASSERT_EQ(rows.size(), 2 * kDefaultWHandGrid.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].w_hand, kDefaultWHandGrid[i % kDefaultWHandGrid.size()]);
    for (const auto& m : kAblationMetrics) EXPECT_TRUE(rows[i].metrics.count(m)) << m;
  }
  EXPECT_LT(rows.front().param_count, rows.back().param_count);
  EXPECT_TRUE(fs::exists(out / "plot_fid_h.png"));
  EXPECT_TRUE(fs::exists(out / "checkpoints" / "baseline.bin"));
  EXPECT_EQ(cli({"ablate", "--data", (*dir / "data").string(), "--out", (*dir / "ablate2").string()}), 1);
}
