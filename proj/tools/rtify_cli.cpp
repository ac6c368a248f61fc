#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "rtify/error.hpp"
#include "rtify/pipeline.hpp"

namespace {

namespace fs = std::filesystem;
using rtify::app::RunLayout;

struct Globals {
  fs::path config;
  std::optional<std::uint64_t> seed;
  fs::path out = ".";
  std::optional<int> workers;
  bool quiet = false;
};

rtify::ExperimentConfig load(const Globals& g) {
  auto cfg = rtify::load_config(g.config, g.seed);
  if (g.workers) {
    if (*g.workers < 1) throw rtify::ConfigError("--workers must be >= 1");
    cfg.run.workers = *g.workers;
  }
  return cfg;
}

void print_row(const std::string& label, const std::vector<double>& values) {
  std::cout << label;
  for (double v : values) std::cout << '\t' << v;
  std::cout << '\n';
}

fs::path or_default(const fs::path& given, const fs::path& fallback) { return given.empty() ? fallback : given; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable stopping times for recurrent classifiers"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "experiment config (INI)")->required()->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "override [run] seed");
  app.add_option("--out", g.out, "run directory")->capture_default_str();
  app.add_option("--workers", g.workers, "worker threads");
  app.add_flag("--quiet", g.quiet, "only warnings and errors");
  app.fallthrough();

  fs::path dataset, backbone_ckpt, reference, checkpoint;
  auto* gen = app.add_subcommand("gen-stimuli", "generate the random-dot dataset");
  auto* ddm = app.add_subcommand("simulate-ddm", "simulate DDM reference RTs (train and eval samples)");

  auto* train = app.add_subcommand("train-backbone", "train the recurrent classifier with BPTT");
  train->add_option("--dataset", dataset, "dataset directory (default: <out>/dataset)");

  std::string mode = "full";
  auto* fit = app.add_subcommand("fit-rt", "fit the stopping rule to reference RT histograms");
  fit->add_option("--mode", mode, "full | correct-only")->check(CLI::IsMember({"full", "correct-only"}));

  std::optional<double> lambda;
  auto* sp = app.add_subcommand("train-selfpenalty", "train the stopping rule with the speed penalty");
  sp->add_option("--lambda", lambda, "speed penalty weight (default: [objectives] lambda)");

  bool dump_trajectory = false;
  auto* ww = app.add_subcommand("fit-ww", "fit the Wong-Wang head to reference RT histograms");
  ww->add_flag("--dump-trajectory", dump_trajectory, "write S_i(t) of the first training trial");

  bool compare_entropy = false;
  std::string split = "test";
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", checkpoint, "checkpoint (default: <out>/rtify.ckpt)");
  ev->add_option("--split", split, "dataset split")->capture_default_str();
  ev->add_flag("--compare-entropy", compare_entropy, "also fit and score the entropy-threshold baseline");

  auto* ex = app.add_subcommand("export", "write plot bundles from <out>/metrics.json");

  for (auto* sub : {train, fit, sp, ww, ev}) {
    if (sub != train) sub->add_option("--dataset", dataset, "dataset directory (default: <out>/dataset)");
    if (sub == fit || sub == sp || sub == ww)
      sub->add_option("--backbone", backbone_ckpt, "backbone checkpoint (default: <out>/backbone.ckpt)");
    if (sub == fit || sub == ww)
      sub->add_option("--reference", reference, "reference RTs (default: <out>/reference_train.csv)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  spdlog::set_level(g.quiet ? spdlog::level::warn : spdlog::level::info);
  if (const char* lvl = std::getenv("RTIFY_LOG")) spdlog::set_level(spdlog::level::from_str(lvl));
  spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");

  try {
    const auto cfg = load(g);
    const RunLayout run{g.out};
    fs::create_directories(run.root);
    const auto data_dir = or_default(dataset, run.dataset());
    const auto bb = or_default(backbone_ckpt, run.backbone());
    const auto ref = or_default(reference, run.reference_train());
    spdlog::info("config {} seed {}", cfg.hash(), cfg.run.seed);

    if (gen->parsed()) {
      rtify::app::gen_stimuli(cfg, data_dir);
    } else if (ddm->parsed()) {
      rtify::app::simulate_reference(cfg, run.reference_train(), run.reference_eval());
    } else if (train->parsed()) {
      const auto o = rtify::app::train_backbone(cfg, data_dir, run.backbone(), run.root / "backbone_log.csv");
      print_row("coherence", cfg.stimuli.coherences);
      print_row("accuracy", o.final_accuracy);
    } else if (fit->parsed()) {
      const auto o = rtify::app::fit_rt(cfg, bb, ref, data_dir, rtify::objectives::parse_fit_mode(mode), run.rtify(),
                                        run.root / "fit_rt_histograms.csv", run.root / "fit_rt_log.csv");
      print_row("initial_mse", o.initial_mse);
      print_row("final_mse", o.final_mse);
    } else if (sp->parsed()) {
      const auto o = rtify::app::train_selfpenalty(cfg, bb, data_dir, lambda.value_or(cfg.objectives.self_penalty.lambda),
                                                   run.rtify(), run.root / "selfpenalty_log.csv");
      if (!o.log.empty()) {
        const auto& last = o.log.back();
        std::cout << "mean_tau\t" << last.mean_tau << "\naccuracy\t" << last.accuracy << '\n';
      }
    } else if (ww->parsed()) {
      std::optional<fs::path> traj;
      if (dump_trajectory) traj = run.root / "ww_trajectory.csv";
      const auto o = rtify::app::fit_ww(cfg, bb, ref, data_dir, run.wongwang(), run.root / "ww_histograms.csv",
                                        run.root / "ww_log.csv", traj);
      print_row("initial_mse", o.initial_mse);
      print_row("final_mse", o.final_mse);
    } else if (ev->parsed()) {
      rtify::app::EvalRequest req;
      req.checkpoint = or_default(checkpoint, run.rtify());
      req.dataset_dir = data_dir;
      if (fs::exists(run.reference_eval())) req.reference_eval = run.reference_eval();
      if (fs::exists(run.reference_train())) req.reference_train = run.reference_train();
      req.compare_entropy = compare_entropy;
      req.split = split;
      req.metrics_out = run.metrics();
      req.trials_out = run.eval_trials();
      req.histograms_out = run.eval_histograms();
      rtify::app::evaluate(cfg, req);
      std::cout << run.metrics().string() << '\n';
    } else if (ex->parsed()) {
      rtify::app::export_bundle(run.root);
      std::cout << run.export_dir().string() << '\n';
    }
  } catch (const rtify::ConfigError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const rtify::NumericError& e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const rtify::IoError& e) {
    spdlog::error("{}", e.what());
    return 4;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
