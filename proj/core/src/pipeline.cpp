#include "rtify/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "rtify/hash.hpp"
#include "rtify/rng.hpp"
#include "rtify/stats.hpp"

namespace rtify::app {

namespace {

constexpr const char* kBackbonePrefix = "backbone/";

std::ofstream open_csv(const fs::path& path, const std::string& config_hash, const std::string& header) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.precision(10);
  out << objectives::provenance_line(config_hash) << '\n' << header << '\n';
  return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing: " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

// NaN and infinities are not representable in JSON.
nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

stimuli::Dataset load_checked_dataset(const fs::path& dir, const ExperimentConfig& cfg) {
  auto ds = stimuli::load_dataset(dir);
  if (ds.config_hash != cfg.hash()) {
    spdlog::warn("dataset {} was generated with config {} (current {})", dir.string(), ds.config_hash, cfg.hash());
  }
  return ds;
}

std::vector<int> labels_of(const stimuli::Split& s) {
  std::vector<int> out;
  for (const auto& t : s.trials) out.push_back(t.label);
  return out;
}

std::vector<int> conditions_of(const stimuli::Split& s) {
  std::vector<int> out;
  for (const auto& t : s.trials) out.push_back(t.condition);
  return out;
}

std::vector<std::vector<double>> load_reference(const fs::path& path, int n_conditions) {
  auto ref = objectives::read_reference_csv(path);
  if (static_cast<int>(ref.by_condition.size()) != n_conditions) {
    throw ConfigError("reference " + path.string() + " has " + std::to_string(ref.by_condition.size()) +
                      " conditions, dataset has " + std::to_string(n_conditions));
  }
  return std::move(ref.by_condition);
}

std::vector<double> per_condition_mse(const std::vector<std::vector<double>>& model,
                                      const std::vector<std::vector<double>>& reference,
                                      const objectives::HistogramSpec& spec) {
  std::vector<double> out;
  for (std::size_t c = 0; c < model.size(); ++c) {
    if (model[c].empty()) {
      out.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    out.push_back(objectives::histogram_mse(objectives::soft_histogram(model[c], spec),
                                            objectives::soft_histogram(reference[c], spec)));
  }
  return out;
}

std::vector<std::vector<double>> mode_view(const std::vector<std::vector<double>>& rts, objectives::FitMode mode) {
  if (mode == objectives::FitMode::kFull) return rts;
  std::vector<std::vector<double>> out;
  for (const auto& r : rts) out.push_back(objectives::positive_part(r));
  return out;
}

void write_histograms(const fs::path& path, const std::vector<std::vector<double>>& model,
                      const std::vector<std::vector<double>>& reference, const objectives::HistogramSpec& spec,
                      const std::string& config_hash) {
  std::vector<objectives::Histogram> hm, hr;
  for (std::size_t c = 0; c < model.size(); ++c) {
    hm.push_back(model[c].empty() ? objectives::Histogram{spec, std::vector<double>(spec.bins, 0.0)}
                                  : objectives::soft_histogram(model[c], spec));
    hr.push_back(objectives::soft_histogram(reference[c], spec));
  }
  objectives::write_histogram_csv(path, hm, hr, config_hash);
}

void write_fit_log(const fs::path& path, const std::vector<training::EpochLog>& log, const std::string& hash) {
  auto out = open_csv(path, hash, "epoch,loss,mse,mean_tau,accuracy,censored_fraction");
  for (const auto& e : log) {
    out << e.epoch << ',' << e.loss << ',' << e.mse << ',' << e.mean_tau << ',' << e.accuracy << ','
        << e.censored_fraction << '\n';
  }
}

Checkpoint make_checkpoint(const std::string& module, const ExperimentConfig& cfg, diff::ParamSet params,
                           nlohmann::json meta) {
  Checkpoint ck;
  ck.module = module;
  ck.seed = cfg.run.seed;
  ck.config_hash = cfg.hash();
  ck.meta = std::move(meta);
  ck.params = std::move(params);
  return ck;
}

nlohmann::json stop_meta(const stopping::Options& o) {
  return {{"policy", stopping::to_string(o.policy)},
          {"t0_ms", o.t0_ms},
          {"frame_ms", o.frame_ms},
          {"eps_den", o.eps_den},
          {"readout_tau_gradient", o.readout_tau_gradient}};
}

stopping::Options stop_from_meta(const nlohmann::json& meta, stopping::Options fallback) {
  if (meta.contains("policy")) fallback.policy = stopping::parse_policy(meta.at("policy").get<std::string>());
  if (meta.contains("t0_ms")) fallback.t0_ms = meta.at("t0_ms").get<double>();
  if (meta.contains("frame_ms")) fallback.frame_ms = meta.at("frame_ms").get<double>();
  return fallback;
}

nlohmann::json ww_meta(const wongwang::WwParams& p, double t0_ms) {
  return {{"populations", p.populations}, {"dt", p.dt},         {"s0", p.s0},
          {"continuous_transfer", p.continuous_transfer},      {"t0_ms", t0_ms},
          {"natural", {{"a", p.a},
                       {"b", p.b},
                       {"d", p.d},
                       {"gamma", p.gamma},
                       {"tau_s", p.tau_s},
                       {"j_self", p.j_self},
                       {"j_inh", p.j_inh},
                       {"j_in", p.j_in},
                       {"i0", p.i0},
                       {"sigma", p.sigma},
                       {"theta", p.theta}}}};
}

wongwang::WwParams ww_from_checkpoint(const Checkpoint& ck) {
  wongwang::WwParams fixed;
  fixed.populations = ck.meta.at("populations").get<int>();
  fixed.dt = ck.meta.at("dt").get<double>();
  fixed.s0 = ck.meta.at("s0").get<double>();
  fixed.continuous_transfer = ck.meta.at("continuous_transfer").get<bool>();
  diff::ParamSet raw;
  for (const auto& [name, value] : ck.params)
    if (name.rfind(kBackbonePrefix, 0) != 0) raw.set(name, value);
  return wongwang::from_raw(raw, fixed);
}

diff::ParamSet without_backbone(const diff::ParamSet& params) {
  diff::ParamSet out;
  for (const auto& [name, value] : params)
    if (name.rfind(kBackbonePrefix, 0) != 0) out.set(name, value);
  return out;
}

int ww_max_steps(const ExperimentConfig& cfg, double t0_ms, double dt) {
  auto opt = cfg.wongwang.fit;
  opt.t0_ms = t0_ms;
  return opt.max_steps > 0 ? opt.max_steps : wongwang::default_max_steps(opt, dt);
}

}  // namespace

diff::ParamSet backbone_params(const Checkpoint& ckpt) {
  if (ckpt.module == "backbone") return ckpt.params;
  auto p = ckpt.params.subset(kBackbonePrefix);
  if (p.size() == 0) throw ConfigError("checkpoint (" + ckpt.module + ") carries no backbone parameters");
  return p;
}

std::vector<wongwang::Drive> static_drives(const std::vector<backbone::HiddenTrace>& traces) {
  std::vector<wongwang::Drive> out;
  out.reserve(traces.size());
  for (const auto& tr : traces) {
    std::vector<double> mean(tr.classes, 0.0);
    for (int t = 0; t < tr.n_steps; ++t)
      for (int c = 0; c < tr.classes; ++c) mean[c] += tr.logits_at(t)[c];
    for (auto& m : mean) m /= tr.n_steps;
    out.push_back(wongwang::Drive::constant(std::move(mean)));
  }
  return out;
}

stimuli::Dataset gen_stimuli(const ExperimentConfig& cfg, const fs::path& dataset_dir) {
  auto ds = stimuli::make_dataset(cfg.stimuli, cfg.run.workers);
  ds.config_hash = cfg.hash();
  stimuli::save_dataset(ds, dataset_dir);
  spdlog::info("wrote {} records to {}", ds.n_records(), dataset_dir.string());
  return ds;
}

void simulate_reference(const ExperimentConfig& cfg, const fs::path& train_csv, const fs::path& eval_csv) {
  std::vector<std::vector<double>> train, eval;
  const auto& coh = cfg.stimuli.coherences;
  for (std::size_t c = 0; c < coh.size(); ++c) {
    const auto a = reference::simulate_ddm(cfg.reference.ddm, coh[c], cfg.reference.train_trials_per_condition,
                                           derive_seed(cfg.run.seed, {tag(Stream::kReferenceTrain), c}),
                                           cfg.run.workers);
    const auto b = reference::simulate_ddm(cfg.reference.ddm, coh[c], cfg.reference.eval_trials_per_condition,
                                           derive_seed(cfg.run.seed, {tag(Stream::kReferenceEval), c}),
                                           cfg.run.workers);
    train.push_back(reference::signed_rts(a));
    eval.push_back(reference::signed_rts(b));
    std::size_t censored = 0;
    for (const auto& t : a) censored += t.censored ? 1 : 0;
    spdlog::info("reference c={:.3f}: accuracy {:.3f} (closed form {:.3f}), censored {}", coh[c],
                 std::count_if(a.begin(), a.end(), [](const auto& t) { return t.correct; }) /
                     static_cast<double>(a.size()),
                 reference::ddm_accuracy(cfg.reference.ddm, coh[c]), censored);
  }
  objectives::write_reference_csv(train_csv, train, cfg.hash());
  objectives::write_reference_csv(eval_csv, eval, cfg.hash());
}

BackboneOutcome train_backbone(const ExperimentConfig& cfg, const fs::path& dataset_dir, const fs::path& ckpt_out,
                               const fs::path& log_csv) {
  const auto ds = load_checked_dataset(dataset_dir, cfg);
  const auto& train = ds.split("train");
  const auto* warm = ds.has_split("warmup") ? &ds.split("warmup") : nullptr;
  const auto& eval = ds.has_split("test") ? ds.split("test") : train;
  auto params = backbone::init_params({stimuli::kChannels, cfg.backbone.hidden, ds.n_classes()}, cfg.run.seed);

  const nlohmann::json base_meta = {{"readout_loss", backbone::to_string(cfg.backbone.schedule.loss)},
                                    {"hidden", cfg.backbone.hidden}};
  auto save = [&](const diff::ParamSet& p, int epochs_done) {
    auto meta = base_meta;
    meta["epochs_completed"] = epochs_done;
    make_checkpoint("backbone", cfg, p, meta).save(ckpt_out);
  };
  save(params, 0);

  auto out = open_csv(log_csv, cfg.hash(), [&] {
    std::string h = "epoch,warmup,loss";
    for (int c = 0; c < ds.n_conditions(); ++c) h += ",accuracy_c" + std::to_string(c);
    return h;
  }());
  auto result = backbone::train_bptt(train, warm, eval, ds.n_conditions(), params, cfg.backbone.schedule,
                                     [&](const diff::ParamSet& p, const backbone::EpochLog& e) {
                                       save(p, e.epoch + 1);
                                       out << e.epoch << ',' << (e.warmup ? 1 : 0) << ',' << e.loss;
                                       for (double a : e.accuracy) out << ',' << a;
                                       out << '\n' << std::flush;
                                       spdlog::info("backbone epoch {}{}: loss {:.4f}", e.epoch,
                                                    e.warmup ? " (warm-up)" : "", e.loss);
                                     });
  BackboneOutcome outcome;
  outcome.log = result.log;
  outcome.final_accuracy = backbone::accuracy_by_condition(
      eval.trials, backbone::forward_all(eval.trials, result.params, cfg.run.workers), ds.n_conditions(),
      cfg.backbone.schedule.loss);
  return outcome;
}

FitOutcome fit_rt(const ExperimentConfig& cfg, const fs::path& backbone_ckpt, const fs::path& reference_csv,
                  const fs::path& dataset_dir, objectives::FitMode mode, const fs::path& ckpt_out,
                  const fs::path& hist_csv, const fs::path& log_csv) {
  const auto bck = Checkpoint::load(backbone_ckpt);
  const auto bparams = backbone_params(bck);
  const auto ds = load_checked_dataset(dataset_dir, cfg);
  const auto& train = ds.split("train");
  const auto traces = backbone::forward_all(train.trials, bparams, cfg.run.workers);
  const auto labels = labels_of(train);
  const auto conditions = conditions_of(train);
  const auto ref = load_reference(reference_csv, ds.n_conditions());

  auto opt = cfg.objectives.fit;
  opt.mode = mode;
  const auto init =
      training::init_rtify(traces, cfg.rtify.mlp_hidden, cfg.rtify.bias_init, cfg.rtify.theta_init_scale,
                           cfg.run.seed, training::median_reference_step(ref, opt.stop, traces.front().n_steps));
  auto rts_of = [&](const diff::ParamSet& p) {
    return training::signed_rts_by_condition(stopping::decide_all(traces, p, opt.stop, cfg.run.workers), labels,
                                             conditions, ds.n_conditions());
  };
  FitOutcome outcome;
  outcome.initial_mse = per_condition_mse(mode_view(rts_of(init), mode), mode_view(ref, mode), opt.hist);

  nlohmann::json meta = stop_meta(opt.stop);
  meta["objective"] = "fit-rt";
  meta["mode"] = objectives::to_string(mode);
  meta["mlp_hidden"] = cfg.rtify.mlp_hidden;
  auto save = [&](const diff::ParamSet& p) {
    auto all = p;
    all.merge(bparams, kBackbonePrefix);
    make_checkpoint("rtify", cfg, std::move(all), meta).save(ckpt_out);
  };
  auto result = training::fit_rt(traces, labels, conditions, ref, init, opt,
                                 [&](const diff::ParamSet& p, const training::EpochLog& e) {
                                   save(p);
                                   spdlog::debug("fit-rt epoch {}: loss {:.3e} mse {:.3e} tau {:.1f} acc {:.3f}",
                                                 e.epoch, e.loss, e.mse, e.mean_tau, e.accuracy);
                                 });
  if (opt.epochs == 0) save(init);
  outcome.log = result.log;
  const auto final_rts = rts_of(result.params);
  outcome.final_mse = per_condition_mse(mode_view(final_rts, mode), mode_view(ref, mode), opt.hist);
  write_histograms(hist_csv, mode_view(final_rts, mode), mode_view(ref, mode), opt.hist, cfg.hash());
  write_fit_log(log_csv, result.log, cfg.hash());
  return outcome;
}

FitOutcome train_selfpenalty(const ExperimentConfig& cfg, const fs::path& backbone_ckpt, const fs::path& dataset_dir,
                             double lambda, const fs::path& ckpt_out, const fs::path& log_csv) {
  const auto bck = Checkpoint::load(backbone_ckpt);
  const auto bparams = backbone_params(bck);
  const auto ds = load_checked_dataset(dataset_dir, cfg);
  const auto& train = ds.split("train");
  const auto traces = backbone::forward_all(train.trials, bparams, cfg.run.workers);
  const auto labels = labels_of(train);

  auto opt = cfg.objectives.self_penalty;
  opt.lambda = lambda;
  const auto init = training::init_rtify(traces, cfg.rtify.mlp_hidden, cfg.rtify.bias_init,
                                         cfg.rtify.theta_init_scale, cfg.run.seed);
  nlohmann::json meta = stop_meta(opt.stop);
  meta["objective"] = "selfpenalty";
  meta["lambda"] = lambda;
  meta["mlp_hidden"] = cfg.rtify.mlp_hidden;
  auto save = [&](const diff::ParamSet& p) {
    auto all = p;
    all.merge(bparams, kBackbonePrefix);
    make_checkpoint("rtify", cfg, std::move(all), meta).save(ckpt_out);
  };
  auto result = training::train_self_penalty(traces, labels, init, opt,
                                             [&](const diff::ParamSet& p, const training::EpochLog& e) {
                                               save(p);
                                               spdlog::debug("selfpenalty epoch {}: loss {:.4f} tau {:.1f} acc {:.3f}",
                                                             e.epoch, e.loss, e.mean_tau, e.accuracy);
                                             });
  if (opt.epochs == 0) save(init);
  write_fit_log(log_csv, result.log, cfg.hash());
  FitOutcome outcome;
  outcome.log = result.log;
  return outcome;
}

WwOutcome fit_ww(const ExperimentConfig& cfg, const fs::path& backbone_ckpt, const fs::path& reference_csv,
                 const fs::path& dataset_dir, const fs::path& ckpt_out, const fs::path& hist_csv,
                 const fs::path& log_csv, const std::optional<fs::path>& trajectory_csv) {
  const auto bck = Checkpoint::load(backbone_ckpt);
  const auto bparams = backbone_params(bck);
  const auto ds = load_checked_dataset(dataset_dir, cfg);
  const auto& train = ds.split("train");
  const auto drives = static_drives(backbone::forward_all(train.trials, bparams, cfg.run.workers));
  const auto labels = labels_of(train);
  const auto conditions = conditions_of(train);
  const auto ref = load_reference(reference_csv, ds.n_conditions());
  const auto& opt = cfg.wongwang.fit;
  const auto init = wongwang::from_raw(wongwang::to_raw(cfg.wongwang.params), cfg.wongwang.params);
  const int max_steps = ww_max_steps(cfg, opt.t0_ms, init.dt);

  auto rts_of = [&](const wongwang::WwParams& p) {
    return training::signed_rts_by_condition(
        wongwang::simulate_all(drives, p, max_steps, cfg.run.seed, opt.t0_ms, cfg.run.workers), labels, conditions,
        ds.n_conditions());
  };
  WwOutcome outcome;
  outcome.initial_mse = per_condition_mse(mode_view(rts_of(init), opt.mode), mode_view(ref, opt.mode), opt.hist);

  auto save = [&](const diff::ParamSet& raw) {
    auto all = raw;
    all.merge(bparams, kBackbonePrefix);
    make_checkpoint("wongwang", cfg, std::move(all), ww_meta(wongwang::from_raw(raw, init), opt.t0_ms))
        .save(ckpt_out);
  };
  save(wongwang::to_raw(init));
  auto result = wongwang::ww_fit(drives, labels, conditions, ref, init, opt,
                                 [&](const diff::ParamSet& raw, const wongwang::FitLog& e) {
                                   save(raw);
                                   spdlog::debug("fit-ww epoch {}: loss {:.3e} mse {:.3e}", e.epoch, e.loss, e.mse);
                                 });
  outcome.log = result.log;
  const auto final_rts = rts_of(result.params);
  outcome.final_mse = per_condition_mse(mode_view(final_rts, opt.mode), mode_view(ref, opt.mode), opt.hist);
  write_histograms(hist_csv, mode_view(final_rts, opt.mode), mode_view(ref, opt.mode), opt.hist, cfg.hash());
  {
    auto out = open_csv(log_csv, cfg.hash(), "epoch,loss,mse");
    for (const auto& e : result.log) out << e.epoch << ',' << e.loss << ',' << e.mse << '\n';
  }
  if (trajectory_csv) {
    const auto run = wongwang::ww_run(drives.front(), result.params, max_steps,
                                      derive_seed(cfg.run.seed, {tag(Stream::kWwNoise), 0, 0}), opt.t0_ms, true);
    wongwang::write_trajectory_csv(*trajectory_csv, run, result.params.populations, cfg.hash());
  }
  return outcome;
}

nlohmann::json evaluate(const ExperimentConfig& cfg, const EvalRequest& req) {
  const auto ck = Checkpoint::load(req.checkpoint);
  const auto bparams = backbone_params(ck);
  const auto ds = load_checked_dataset(req.dataset_dir, cfg);
  const auto& split = ds.split(req.split);
  const int n_cond = ds.n_conditions();
  const auto traces = backbone::forward_all(split.trials, bparams, cfg.run.workers);
  const auto labels = labels_of(split);
  const auto conditions = conditions_of(split);
  const auto hist = cfg.objectives.hist;

  std::optional<std::vector<std::vector<double>>> ref_eval;
  if (req.reference_eval) ref_eval = load_reference(*req.reference_eval, n_cond);

  nlohmann::json m;
  m["tool_version"] = kToolVersion;
  m["config_hash"] = cfg.hash();
  m["checkpoint"] = {{"path", req.checkpoint.filename().string()},
                     {"module", ck.module},
                     {"config_hash", ck.config_hash},
                     {"meta", ck.meta}};
  m["split"] = req.split;

  std::optional<std::vector<stopping::Decision>> decisions;
  stopping::Options stop = cfg.rtify.stop;
  if (ck.module == "rtify") {
    stop = stop_from_meta(ck.meta, stop);
    decisions = stopping::decide_all(traces, without_backbone(ck.params), stop, cfg.run.workers);
  } else if (ck.module == "wongwang") {
    const auto p = ww_from_checkpoint(ck);
    const double t0 = ck.meta.at("t0_ms").get<double>();
    decisions = wongwang::simulate_all(static_drives(traces), p, ww_max_steps(cfg, t0, p.dt), cfg.run.seed, t0,
                                       cfg.run.workers);
  } else if (ck.module != "backbone") {
    throw ConfigError("eval: unknown checkpoint module '" + ck.module + "'");
  }

  auto conds = nlohmann::json::array();
  std::vector<std::vector<double>> model_rts(n_cond);
  std::vector<double> mse(n_cond, std::numeric_limits<double>::quiet_NaN());
  if (decisions) {
    model_rts = training::signed_rts_by_condition(*decisions, labels, conditions, n_cond);
    if (ref_eval) mse = per_condition_mse(model_rts, *ref_eval, hist);
  }
  const auto accuracy_backbone =
      backbone::accuracy_by_condition(split.trials, traces, n_cond, cfg.backbone.schedule.loss);

  std::vector<double> coh_correct, rt_correct;
  double pooled_acc = 0.0, pooled_mse = 0.0;
  int mse_count = 0;
  for (int c = 0; c < n_cond; ++c) {
    nlohmann::json e;
    e["condition_id"] = c;
    e["coherence"] = ds.spec.coherences[c];
    e["backbone_accuracy"] = accuracy_backbone[c];
    if (decisions) {
      double n = 0, hit = 0, cens = 0, tau = 0, rt_c = 0, rt_i = 0, n_i = 0;
      for (std::size_t i = 0; i < decisions->size(); ++i) {
        if (conditions[i] != c) continue;
        const auto& d = (*decisions)[i];
        n += 1;
        tau += d.tau;
        cens += d.crossed ? 0 : 1;
        if (d.choice == labels[i]) {
          hit += 1;
          rt_c += d.rt_ms;
          coh_correct.push_back(ds.spec.coherences[c]);
          rt_correct.push_back(d.rt_ms);
        } else {
          n_i += 1;
          rt_i += d.rt_ms;
        }
      }
      e["n_trials"] = n;
      e["accuracy"] = hit / n;
      e["mean_tau"] = tau / n;
      e["censored_fraction"] = cens / n;
      e["mean_correct_rt_ms"] = num(hit > 0 ? rt_c / hit : std::numeric_limits<double>::quiet_NaN());
      e["mean_incorrect_rt_ms"] = num(n_i > 0 ? rt_i / n_i : std::numeric_limits<double>::quiet_NaN());
      e["histogram_mse"] = num(mse[c]);
      pooled_acc += hit / n;
      if (std::isfinite(mse[c])) pooled_mse += mse[c], ++mse_count;
    }
    if (ref_eval) {
      const auto& r = (*ref_eval)[c];
      const auto pos = objectives::positive_part(r);
      e["reference_accuracy"] = static_cast<double>(pos.size()) / r.size();
      e["reference_mean_correct_rt_ms"] = pos.empty() ? nlohmann::json(nullptr) : num(stats::mean(pos));
    }
    conds.push_back(e);
  }
  m["conditions"] = conds;
  if (decisions) {
    m["pooled"] = {{"accuracy", pooled_acc / n_cond},
                   {"histogram_mse", num(mse_count ? pooled_mse / mse_count : std::numeric_limits<double>::quiet_NaN())}};
    if (coh_correct.size() >= 3) {
      try {
        const auto sp = stats::spearman(coh_correct, rt_correct);
        m["rt_coherence_spearman"] = {{"rho", num(sp.rho)}, {"p_value", num(sp.p_value)}, {"n", sp.n}};
      } catch (const NumericError&) {
        m["rt_coherence_spearman"] = nullptr;
      }
    }
  }

  if (req.compare_entropy) {
    if (!req.reference_train || !ref_eval) {
      throw ConfigError("eval --compare-entropy needs both reference files");
    }
    const auto ref_train = load_reference(*req.reference_train, n_cond);
    const auto& fit_split = ds.split("train");
    const auto fit_traces = backbone::forward_all(fit_split.trials, bparams, cfg.run.workers);
    std::vector<objectives::Histogram> ref_hist;
    for (const auto& r : ref_train) ref_hist.push_back(objectives::soft_histogram(r, hist));
    const auto grid = reference::entropy_grid(cfg.reference.entropy_grid, ds.n_classes());
    const auto fit = reference::fit_entropy_threshold(fit_traces, labels_of(fit_split), conditions_of(fit_split),
                                                      ref_hist, grid, hist, stop, cfg.run.workers);
    std::vector<stopping::Decision> ent(traces.size());
    for (std::size_t i = 0; i < traces.size(); ++i) ent[i] = reference::entropy_threshold_rt(traces[i], fit.threshold, stop);
    const auto ent_mse = per_condition_mse(training::signed_rts_by_condition(ent, labels, conditions, n_cond),
                                           *ref_eval, hist);
    int better = 0;
    auto rows = nlohmann::json::array();
    for (int c = 0; c < n_cond; ++c) {
      const bool win = decisions && mse[c] < ent_mse[c];
      better += win ? 1 : 0;
      rows.push_back({{"condition_id", c}, {"entropy_mse", num(ent_mse[c])}, {"model_mse", num(mse[c])},
                      {"model_better", win}});
    }
    m["entropy_baseline"] = {{"threshold", fit.threshold},
                             {"train_mse", fit.mse},
                             {"conditions", rows},
                             {"model_better_count", better}};
  }

  if (!req.metrics_out.empty()) write_json(req.metrics_out, m);
  if (decisions && !req.trials_out.empty()) {
    auto out = open_csv(req.trials_out, cfg.hash(), "trial_id,condition_id,label,choice,tau,crossed,rt_ms");
    for (std::size_t i = 0; i < decisions->size(); ++i) {
      const auto& d = (*decisions)[i];
      out << i << ',' << conditions[i] << ',' << labels[i] << ',' << d.choice << ',' << d.tau << ','
          << (d.crossed ? 1 : 0) << ',' << d.rt_ms << '\n';
    }
  }
  if (decisions && ref_eval && !req.histograms_out.empty()) {
    write_histograms(req.histograms_out, model_rts, *ref_eval, hist, cfg.hash());
  }
  return m;
}

nlohmann::json export_bundle(const fs::path& run_dir) {
  const RunLayout layout{run_dir};
  const auto metrics = read_json(layout.metrics());
  const std::string hash = metrics.at("config_hash").get<std::string>();
  const auto dir = layout.export_dir();
  fs::create_directories(dir);

  auto files = nlohmann::json::array();
  if (fs::exists(layout.eval_histograms())) {
    const auto rows = objectives::read_histogram_csv(layout.eval_histograms());
    std::map<int, std::vector<objectives::HistogramRow>> by_cond;
    for (const auto& r : rows) by_cond[r.condition_id].push_back(r);
    for (const auto& [c, rs] : by_cond) {
      const auto name = "histogram_condition_" + std::to_string(c) + ".csv";
      auto out = open_csv(dir / name, hash, "bin_center_ms,density_model,density_reference");
      for (const auto& r : rs) out << r.bin_center_ms << ',' << r.density_model << ',' << r.density_reference << '\n';
      files.push_back(name);
    }
  }
  {
    auto out = open_csv(dir / "scatter.csv", hash, "stimulus_id,reference_rt_ms,model_rt_ms");
    for (const auto& c : metrics.at("conditions")) {
      const auto ref = c.value("reference_mean_correct_rt_ms", nlohmann::json(nullptr));
      const auto mod = c.value("mean_correct_rt_ms", nlohmann::json(nullptr));
      if (ref.is_null() || mod.is_null()) continue;
      out << c.at("condition_id").get<int>() << ',' << ref.get<double>() << ',' << mod.get<double>() << '\n';
    }
    files.push_back("scatter.csv");
  }
  nlohmann::json summary;
  summary["tool_version"] = kToolVersion;
  summary["config_hash"] = hash;
  summary["module"] = metrics.at("checkpoint").at("module");
  auto conds = nlohmann::json::array();
  for (const auto& c : metrics.at("conditions")) {
    conds.push_back({{"condition_id", c.at("condition_id")},
                     {"coherence", c.at("coherence")},
                     {"accuracy", c.value("accuracy", c.at("backbone_accuracy"))},
                     {"mean_correct_rt_ms", c.value("mean_correct_rt_ms", nlohmann::json(nullptr))},
                     {"histogram_mse", c.value("histogram_mse", nlohmann::json(nullptr))}});
  }
  summary["conditions"] = conds;
  summary["pooled"] = metrics.value("pooled", nlohmann::json::object());
  summary["files"] = files;
  const auto problems = validate_summary(summary);
  if (!problems.empty()) throw NumericError("export: summary fails its schema: " + problems.front());
  write_json(dir / "summary.json", summary);
  return summary;
}

std::vector<std::string> validate_summary(const nlohmann::json& s) {
  std::vector<std::string> bad;
  auto need = [&](const nlohmann::json& obj, const char* key, auto pred, const char* what) {
    if (!obj.is_object() || !obj.contains(key)) {
      bad.push_back(std::string("missing '") + key + "'");
    } else if (!pred(obj.at(key))) {
      bad.push_back(std::string("'") + key + "' must be " + what);
    }
  };
  auto is_string = [](const nlohmann::json& v) { return v.is_string(); };
  auto is_number = [](const nlohmann::json& v) { return v.is_number(); };
  auto num_or_null = [](const nlohmann::json& v) { return v.is_number() || v.is_null(); };
  auto is_uint = [](const nlohmann::json& v) { return v.is_number_unsigned() || (v.is_number_integer() && v >= 0); };
  need(s, "tool_version", is_string, "a string");
  need(s, "config_hash", is_string, "a string");
  need(s, "module", [](const nlohmann::json& v) {
    return v.is_string() && (v == "backbone" || v == "rtify" || v == "wongwang");
  }, "one of backbone, rtify, wongwang");
  need(s, "conditions", [](const nlohmann::json& v) { return v.is_array() && !v.empty(); }, "a non-empty array");
  need(s, "pooled", [](const nlohmann::json& v) { return v.is_object(); }, "an object");
  need(s, "files", [](const nlohmann::json& v) {
    return v.is_array() && std::all_of(v.begin(), v.end(), [](const auto& f) { return f.is_string(); });
  }, "an array of strings");
  if (s.contains("conditions") && s.at("conditions").is_array()) {
    for (const auto& c : s.at("conditions")) {
      need(c, "condition_id", is_uint, "a non-negative integer");
      need(c, "coherence", is_number, "a number");
      need(c, "accuracy", is_number, "a number");
      need(c, "mean_correct_rt_ms", num_or_null, "a number or null");
      need(c, "histogram_mse", num_or_null, "a number or null");
    }
  }
  return bad;
}

}  // namespace rtify::app
