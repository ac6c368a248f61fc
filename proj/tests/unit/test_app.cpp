#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "rtify/checkpoint.hpp"
#include "rtify/config.hpp"
#include "rtify/error.hpp"
#include "rtify/hash.hpp"
#include "rtify/pipeline.hpp"
#include "rtify/stats.hpp"
#include "tempdir.hpp"

namespace rtify {
namespace {

using testing::TempDir;

const std::filesystem::path kSmoke = std::filesystem::path(RTIFY_SOURCE_DIR) / "configs" / "smoke.ini";

TEST(Config, DefaultsNeedOnlyASeed) {
  const auto cfg = parse_config("[run]\nseed = 3\n");
  EXPECT_EQ(cfg.run.seed, 3u);
  EXPECT_EQ(cfg.run.workers, 1);
  EXPECT_EQ(cfg.stimuli.coherences.size(), 7u);
}

TEST(Config, MissingSeedRejectedUnlessOverridden) {
  EXPECT_THROW(parse_config("[stimuli]\nn_dots = 20\n"), ConfigError);
  EXPECT_EQ(parse_config("[stimuli]\nn_dots = 20\n", 99).run.seed, 99u);
  EXPECT_EQ(parse_config("[run]\nseed = 1\n", 99).run.seed, 99u);
}

TEST(Config, UnknownNamesRejected) {
  EXPECT_THROW(parse_config("[run]\nseed = 1\nsed = 2\n"), ConfigError);
  EXPECT_THROW(parse_config("[run]\nseed = 1\n[bakbone]\nhidden = 4\n"), ConfigError);
  try {
    parse_config("[run]\nseed = 1\n[rtify]\nmlp = 4\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("mlp"), std::string::npos);
  }
}

TEST(Config, BadValuesRejected) {
  EXPECT_THROW(parse_config("[run]\nseed = x\n"), ConfigError);
  EXPECT_THROW(parse_config("[run]\nseed = 1\nworkers = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("[run]\nseed = 1\n[rtify]\npolicy = sometimes\n"), ConfigError);
  EXPECT_THROW(parse_config("[run]\nseed = 1\n[objectives]\nlambda = -1\n"), ConfigError);
}

TEST(Config, HashIgnoresWorkersButNotSeed) {
  const auto a = parse_config("[run]\nseed = 1\nworkers = 1\n");
  const auto b = parse_config("[run]\nseed = 1\nworkers = 4\n");
  const auto c = parse_config("[run]\nseed = 2\n");
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), c.hash());
  EXPECT_EQ(a.hash().size(), 16u);
}

TEST(Config, CanonicalFormReparsesToSameHash) {
  const auto cfg = load_config(kSmoke);
  std::string ini;
  std::string section;
  std::istringstream lines(cfg.canonical());
  for (std::string line; std::getline(lines, line);) {
    const auto dot = line.find('.');
    const auto sec = line.substr(0, dot);
    if (sec != section) ini += "[" + (section = sec) + "]\n";
    ini += line.substr(dot + 1) + "\n";
  }
  EXPECT_EQ(parse_config(ini).hash(), cfg.hash());
}

TEST(Config, MissingFileIsIoError) { EXPECT_THROW(load_config("/nonexistent/x.ini"), IoError); }

TEST(Stats, SpearmanReferenceValue) {
  // Ten paired observations with one known answer: rho = -29/165.
  const std::vector<double> iq{106, 100, 86, 101, 99, 103, 97, 113, 112, 110};
  const std::vector<double> tv{7, 27, 2, 50, 28, 29, 20, 12, 6, 17};
  const auto r = stats::spearman(iq, tv);
  EXPECT_NEAR(r.rho, -29.0 / 165.0, 1e-12);
  EXPECT_NEAR(r.p_value, 0.6272, 1e-3);
  EXPECT_EQ(r.n, 10u);
}

TEST(Stats, SpearmanMonotoneAndTies) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  const std::vector<double> y{1, 4, 9, 16, 25};
  EXPECT_NEAR(stats::spearman(x, y).rho, 1.0, 1e-12);
  const std::vector<double> down{9, 7, 7, 3, 1};
  EXPECT_NEAR(stats::spearman(x, down).rho, -1.0 + 1e-12, 0.06);
  EXPECT_EQ(stats::ranks(down), (std::vector<double>{5, 3.5, 3.5, 2, 1}));
}

TEST(Checkpoint, RoundTripPreservesEverything) {
  TempDir dir;
  Checkpoint c;
  c.module = "rtify";
  c.seed = 12345678901234ULL;
  c.config_hash = "0123456789abcdef";
  c.meta = {{"epochs", 3}, {"note", "x"}};
  c.params.set("w", diff::BasicArray<float>(diff::Shape{2, 3}, {1, -2, 3.5f, 0, 1e-7f, -1e7f}));
  c.params.set("theta", diff::BasicArray<float>::scalar(0.25f));
  c.save(dir / "a.ckpt");
  const auto back = Checkpoint::load(dir / "a.ckpt");
  EXPECT_EQ(back.module, c.module);
  EXPECT_EQ(back.seed, c.seed);
  EXPECT_EQ(back.config_hash, c.config_hash);
  EXPECT_EQ(back.meta, c.meta);
  EXPECT_TRUE(back.params == c.params);
  EXPECT_EQ(back.params.checksum(), c.params.checksum());
}

TEST(Checkpoint, CorruptFilesAreIoErrors) {
  TempDir dir;
  EXPECT_THROW(Checkpoint::load(dir / "missing.ckpt"), IoError);
  std::ofstream(dir / "junk.ckpt") << "hello\n";
  EXPECT_THROW(Checkpoint::load(dir / "junk.ckpt"), IoError);

  Checkpoint c;
  c.module = "backbone";
  c.params.set("w", diff::BasicArray<float>(diff::Shape{4, 4}, 1.0f));
  c.save(dir / "full.ckpt");
  const auto bytes = testing::slurp(dir / "full.ckpt");
  std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 5);
  EXPECT_THROW(Checkpoint::load(dir / "short.ckpt"), IoError);
}

TEST(Summary, SchemaValidator) {
  nlohmann::json ok = {{"tool_version", "0.1.0"},
                       {"config_hash", "abc"},
                       {"module", "rtify"},
                       {"pooled", nlohmann::json::object()},
                       {"files", {"scatter.csv"}},
                       {"conditions",
                        {{{"condition_id", 0},
                          {"coherence", 0.0},
                          {"accuracy", 0.5},
                          {"mean_correct_rt_ms", nullptr},
                          {"histogram_mse", 1e-6}}}}};
  EXPECT_TRUE(app::validate_summary(ok).empty());
  auto bad = ok;
  bad["module"] = "other";
  bad["conditions"][0].erase("accuracy");
  bad.erase("files");
  EXPECT_EQ(app::validate_summary(bad).size(), 3u);
}

class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir;
    cfg_ = new ExperimentConfig(load_config(kSmoke));
    const app::RunLayout run{dir_->path()};
    app::gen_stimuli(*cfg_, run.dataset());
    app::simulate_reference(*cfg_, run.reference_train(), run.reference_eval());
    app::train_backbone(*cfg_, run.dataset(), run.backbone(), run.root / "backbone_log.csv");
  }
  static void TearDownTestSuite() {
    delete cfg_;
    delete dir_;
  }
  static app::EvalRequest eval_request(const std::filesystem::path& ckpt, const std::string& tag) {
    const app::RunLayout run{dir_->path()};
    app::EvalRequest req;
    req.checkpoint = ckpt;
    req.dataset_dir = run.dataset();
    req.reference_eval = run.reference_eval();
    req.reference_train = run.reference_train();
    req.metrics_out = run.root / ("metrics_" + tag + ".json");
    req.trials_out = run.root / ("trials_" + tag + ".csv");
    req.histograms_out = run.root / ("hist_" + tag + ".csv");
    return req;
  }
  static TempDir* dir_;
  static ExperimentConfig* cfg_;
};
TempDir* Pipeline::dir_ = nullptr;
ExperimentConfig* Pipeline::cfg_ = nullptr;

TEST_F(Pipeline, FitEvalExportAndSchemas) {
  const app::RunLayout run{dir_->path()};
  const auto hist_csv = run.root / "fit_rt_histograms.csv";
  const auto fit = app::fit_rt(*cfg_, run.backbone(), run.reference_train(), run.dataset(),
                               objectives::FitMode::kFull, run.rtify(), hist_csv, run.root / "fit_rt_log.csv");
  EXPECT_EQ(fit.final_mse.size(), 7u);
  EXPECT_EQ(fit.log.size(), 4u);

  const auto hist = testing::slurp(hist_csv);
  EXPECT_NE(hist.find("condition_id,bin_center_ms,density_model,density_reference\n"), std::string::npos);
  EXPECT_NE(hist.find(cfg_->hash()), std::string::npos);
  EXPECT_NE(hist.find(kToolVersion), std::string::npos);

  auto req = eval_request(run.rtify(), "a");
  req.compare_entropy = true;
  req.metrics_out = run.metrics();
  req.trials_out = run.eval_trials();
  req.histograms_out = run.eval_histograms();
  const auto m = app::evaluate(*cfg_, req);
  ASSERT_EQ(m.at("conditions").size(), 7u);
  for (const auto& c : m.at("conditions")) {
    EXPECT_TRUE(c.contains("accuracy"));
    EXPECT_TRUE(c.contains("histogram_mse"));
    EXPECT_TRUE(c.contains("mean_correct_rt_ms"));
    EXPECT_TRUE(c.contains("mean_incorrect_rt_ms"));
  }
  EXPECT_TRUE(m.contains("entropy_baseline"));

  const auto summary = app::export_bundle(run.root);
  EXPECT_TRUE(app::validate_summary(summary).empty());
  EXPECT_TRUE(std::filesystem::exists(run.export_dir() / "summary.json"));
  EXPECT_NE(testing::slurp(run.export_dir() / "scatter.csv").find("stimulus_id,reference_rt_ms,model_rt_ms"),
            std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(run.export_dir() / "histogram_condition_0.csv"));
}

TEST_F(Pipeline, EvalIsAPureFunctionOfCheckpointAndData) {
  const app::RunLayout run{dir_->path()};
  const auto a = app::evaluate(*cfg_, eval_request(run.backbone(), "b1"));
  const auto b = app::evaluate(*cfg_, eval_request(run.backbone(), "b2"));
  EXPECT_EQ(a, b);
  EXPECT_EQ(testing::slurp(run.root / "trials_b1.csv"), testing::slurp(run.root / "trials_b2.csv"));
}

TEST_F(Pipeline, SelfPenaltyAndWongWangProduceLoadableCheckpoints) {
  const app::RunLayout run{dir_->path()};
  const auto sp = app::train_selfpenalty(*cfg_, run.backbone(), run.dataset(), 0.01, run.root / "sp.ckpt",
                                         run.root / "sp_log.csv");
  ASSERT_FALSE(sp.log.empty());
  EXPECT_GE(sp.log.back().accuracy, 0.0);
  EXPECT_EQ(Checkpoint::load(run.root / "sp.ckpt").module, "rtify");

  const auto ww = app::fit_ww(*cfg_, run.backbone(), run.reference_train(), run.dataset(), run.wongwang(),
                              run.root / "ww_hist.csv", run.root / "ww_log.csv", run.root / "ww_traj.csv");
  EXPECT_EQ(ww.final_mse.size(), 7u);
  const auto ckpt = Checkpoint::load(run.wongwang());
  EXPECT_EQ(ckpt.module, "wongwang");
  EXPECT_EQ(ckpt.config_hash, cfg_->hash());
  EXPECT_TRUE(std::filesystem::exists(run.root / "ww_traj.csv"));
  const auto m = app::evaluate(*cfg_, eval_request(run.wongwang(), "ww"));
  EXPECT_EQ(m.at("checkpoint").at("module"), "wongwang");
}

TEST_F(Pipeline, MissingInputsAreIoErrors) {
  const app::RunLayout run{dir_->path()};
  EXPECT_THROW(app::fit_rt(*cfg_, run.root / "nope.ckpt", run.reference_train(), run.dataset(),
                           objectives::FitMode::kFull, run.root / "x.ckpt", run.root / "x.csv", run.root / "y.csv"),
               IoError);
  EXPECT_THROW(app::train_backbone(*cfg_, run.root / "no_dataset", run.root / "x.ckpt", run.root / "x.csv"),
               IoError);
}

int cli(const std::string& args) {
  const std::string cmd = std::string(RTIFY_CLI) + " --quiet " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  const auto out = " --out " + dir.path().string();
  std::ofstream(dir / "bad.ini") << "[run]\nseed = 1\nfoo = 2\n";
  std::ofstream(dir / "ok.ini") << "[run]\nseed = 1\n";
  EXPECT_EQ(cli("--config " + (dir / "bad.ini").string() + out + " gen-stimuli"), 2);
  EXPECT_EQ(cli("--config " + (dir / "ok.ini").string() + out + " --workers 0 gen-stimuli"), 2);
  EXPECT_EQ(cli("--config " + (dir / "ok.ini").string() + out + " no-such-command"), 2);
  EXPECT_EQ(cli("--config " + (dir / "ok.ini").string() + out + " train-backbone"), 4);
  EXPECT_EQ(cli("--config " + (dir / "ok.ini").string() + out + " eval --checkpoint missing.ckpt"), 4);
  EXPECT_EQ(cli("--config " + kSmoke.string() + out + " simulate-ddm"), 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "reference_eval.csv"));
}

}  // namespace
}  // namespace rtify
