#include "rtify/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "rtify/hash.hpp"

namespace rtify {

namespace {

struct Field {
  std::string section;
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& name, const std::string& value, const char* want) {
  throw ConfigError("config: " + name + " = '" + value + "' is not " + want);
}

double to_double(const std::string& name, const std::string& v) {
  double out = 0.0;
  const auto t = trim(v);
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec != std::errc() || p != t.data() + t.size()) bad_value(name, v, "a number");
  return out;
}

long long to_int(const std::string& name, const std::string& v) {
  long long out = 0;
  const auto t = trim(v);
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec != std::errc() || p != t.data() + t.size()) bad_value(name, v, "an integer");
  return out;
}

std::uint64_t to_u64(const std::string& name, const std::string& v) {
  std::uint64_t out = 0;
  const auto t = trim(v);
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec != std::errc() || p != t.data() + t.size()) bad_value(name, v, "an unsigned integer");
  return out;
}

bool to_bool(const std::string& name, const std::string& v) {
  const auto t = trim(v);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  bad_value(name, v, "a boolean");
}

std::vector<double> to_list(const std::string& name, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(to_double(name, cell));
  if (out.empty()) bad_value(name, v, "a comma-separated list");
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string fmt_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
  return out;
}

#define RTIFY_NUM(SEC, KEY, EXPR)                                                                       \
  Field {                                                                                               \
    SEC, KEY, [](ExperimentConfig& c, const std::string& v) { EXPR = to_double(SEC "." KEY, v); },      \
        [](const ExperimentConfig& c) { return fmt(EXPR); }                                             \
  }
#define RTIFY_INT(SEC, KEY, EXPR)                                                                                    \
  Field {                                                                                                            \
    SEC, KEY, [](ExperimentConfig& c, const std::string& v) { EXPR = static_cast<int>(to_int(SEC "." KEY, v)); },     \
        [](const ExperimentConfig& c) { return std::to_string(EXPR); }                                               \
  }
#define RTIFY_BOOL(SEC, KEY, EXPR)                                                                  \
  Field {                                                                                           \
    SEC, KEY, [](ExperimentConfig& c, const std::string& v) { EXPR = to_bool(SEC "." KEY, v); },    \
        [](const ExperimentConfig& c) { return std::string(EXPR ? "true" : "false"); }              \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"run", "seed", [](ExperimentConfig& c, const std::string& v) { c.run.seed = to_u64("run.seed", v); },
            [](const ExperimentConfig& c) { return std::to_string(c.run.seed); }},
      RTIFY_INT("run", "workers", c.run.workers),

      RTIFY_INT("stimuli", "n_dots", c.stimuli.base.n_dots),
      RTIFY_INT("stimuli", "n_frames", c.stimuli.base.n_frames),
      RTIFY_NUM("stimuli", "frame_rate_hz", c.stimuli.base.frame_rate_hz),
      RTIFY_NUM("stimuli", "field_size", c.stimuli.base.field_size),
      RTIFY_NUM("stimuli", "dot_step", c.stimuli.base.dot_step),
      Field{"stimuli", "coherences",
            [](ExperimentConfig& c, const std::string& v) { c.stimuli.coherences = to_list("stimuli.coherences", v); },
            [](const ExperimentConfig& c) { return fmt_list(c.stimuli.coherences); }},
      Field{"stimuli", "directions_deg",
            [](ExperimentConfig& c, const std::string& v) {
              c.stimuli.directions_deg = to_list("stimuli.directions_deg", v);
            },
            [](const ExperimentConfig& c) { return fmt_list(c.stimuli.directions_deg); }},
      RTIFY_INT("stimuli", "train_per_condition", c.stimuli.train_per_condition),
      RTIFY_INT("stimuli", "test_per_condition", c.stimuli.test_per_condition),
      RTIFY_INT("stimuli", "warmup_trials", c.stimuli.warmup_trials),
      RTIFY_NUM("stimuli", "warmup_coherence", c.stimuli.warmup_coherence),

      RTIFY_INT("backbone", "hidden", c.backbone.hidden),
      RTIFY_INT("backbone", "epochs", c.backbone.schedule.epochs),
      RTIFY_INT("backbone", "warmup_epochs", c.backbone.schedule.warmup_epochs),
      RTIFY_NUM("backbone", "lr", c.backbone.schedule.lr),
      RTIFY_NUM("backbone", "warmup_lr", c.backbone.schedule.warmup_lr),
      RTIFY_INT("backbone", "batch_size", c.backbone.schedule.batch_size),
      RTIFY_NUM("backbone", "clip_norm", c.backbone.schedule.clip_norm),
      Field{"backbone", "readout_loss",
            [](ExperimentConfig& c, const std::string& v) {
              c.backbone.schedule.loss = backbone::parse_readout_loss(trim(v));
            },
            [](const ExperimentConfig& c) { return backbone::to_string(c.backbone.schedule.loss); }},

      RTIFY_INT("rtify", "mlp_hidden", c.rtify.mlp_hidden),
      RTIFY_NUM("rtify", "bias_init", c.rtify.bias_init),
      RTIFY_NUM("rtify", "theta_init_scale", c.rtify.theta_init_scale),
      RTIFY_NUM("rtify", "eps_den", c.rtify.stop.eps_den),
      RTIFY_NUM("rtify", "t0_ms", c.rtify.stop.t0_ms),
      RTIFY_BOOL("rtify", "readout_tau_gradient", c.rtify.stop.readout_tau_gradient),
      Field{"rtify", "policy",
            [](ExperimentConfig& c, const std::string& v) { c.rtify.stop.policy = stopping::parse_policy(trim(v)); },
            [](const ExperimentConfig& c) { return stopping::to_string(c.rtify.stop.policy); }},

      RTIFY_NUM("objectives", "t_max_ms", c.objectives.hist.t_max_ms),
      RTIFY_INT("objectives", "bins", c.objectives.hist.bins),
      RTIFY_NUM("objectives", "bandwidth_ms", c.objectives.hist.bandwidth_ms),
      RTIFY_NUM("objectives", "bandwidth_start_ms", c.objectives.fit.bandwidth_start_ms),
      RTIFY_INT("objectives", "anneal_epochs", c.objectives.fit.anneal_epochs),
      RTIFY_INT("objectives", "fit_epochs", c.objectives.fit.epochs),
      RTIFY_NUM("objectives", "fit_lr", c.objectives.fit.lr),
      RTIFY_NUM("objectives", "theta_lr_scale", c.objectives.fit.theta_lr_scale),
      RTIFY_NUM("objectives", "censor_weight", c.objectives.fit.censor_weight),
      RTIFY_NUM("objectives", "clip_norm", c.objectives.fit.clip_norm),
      Field{"objectives", "mode",
            [](ExperimentConfig& c, const std::string& v) { c.objectives.fit.mode = objectives::parse_fit_mode(trim(v)); },
            [](const ExperimentConfig& c) { return objectives::to_string(c.objectives.fit.mode); }},
      RTIFY_NUM("objectives", "lambda", c.objectives.self_penalty.lambda),
      RTIFY_INT("objectives", "selfpenalty_epochs", c.objectives.self_penalty.epochs),
      RTIFY_NUM("objectives", "selfpenalty_lr", c.objectives.self_penalty.lr),
      RTIFY_NUM("objectives", "selfpenalty_theta_lr_scale", c.objectives.self_penalty.theta_lr_scale),
      RTIFY_NUM("objectives", "selfpenalty_censor_weight", c.objectives.self_penalty.censor_weight),

      RTIFY_NUM("wongwang", "a", c.wongwang.params.a),
      RTIFY_NUM("wongwang", "b", c.wongwang.params.b),
      RTIFY_NUM("wongwang", "d", c.wongwang.params.d),
      RTIFY_NUM("wongwang", "gamma", c.wongwang.params.gamma),
      RTIFY_NUM("wongwang", "tau_s", c.wongwang.params.tau_s),
      RTIFY_NUM("wongwang", "j_self", c.wongwang.params.j_self),
      RTIFY_NUM("wongwang", "j_inh", c.wongwang.params.j_inh),
      RTIFY_NUM("wongwang", "j_in", c.wongwang.params.j_in),
      RTIFY_NUM("wongwang", "i0", c.wongwang.params.i0),
      RTIFY_NUM("wongwang", "sigma", c.wongwang.params.sigma),
      RTIFY_NUM("wongwang", "dt", c.wongwang.params.dt),
      RTIFY_NUM("wongwang", "theta", c.wongwang.params.theta),
      RTIFY_NUM("wongwang", "s0", c.wongwang.params.s0),
      RTIFY_BOOL("wongwang", "continuous_transfer", c.wongwang.params.continuous_transfer),
      RTIFY_NUM("wongwang", "t0_ms", c.wongwang.fit.t0_ms),
      RTIFY_INT("wongwang", "epochs", c.wongwang.fit.epochs),
      RTIFY_NUM("wongwang", "lr", c.wongwang.fit.lr),
      RTIFY_NUM("wongwang", "bandwidth_start_ms", c.wongwang.fit.bandwidth_start_ms),
      RTIFY_INT("wongwang", "anneal_epochs", c.wongwang.fit.anneal_epochs),
      RTIFY_NUM("wongwang", "censor_weight", c.wongwang.fit.censor_weight),

      RTIFY_NUM("reference", "drift", c.reference.ddm.drift),
      RTIFY_NUM("reference", "bound", c.reference.ddm.bound),
      RTIFY_NUM("reference", "noise", c.reference.ddm.noise),
      RTIFY_NUM("reference", "t0_ms", c.reference.ddm.t0_ms),
      RTIFY_NUM("reference", "dt_ms", c.reference.ddm.dt_ms),
      RTIFY_NUM("reference", "max_rt_ms", c.reference.ddm.max_rt_ms),
      RTIFY_INT("reference", "train_trials_per_condition", c.reference.train_trials_per_condition),
      RTIFY_INT("reference", "eval_trials_per_condition", c.reference.eval_trials_per_condition),
      RTIFY_INT("reference", "entropy_grid", c.reference.entropy_grid),
  };
  return table;
}

#undef RTIFY_NUM
#undef RTIFY_INT
#undef RTIFY_BOOL

ExperimentConfig defaults() {
  ExperimentConfig c;
  c.stimuli.coherences.assign(stimuli::kCanonicalCoherences.begin(), stimuli::kCanonicalCoherences.end());
  c.stimuli.test_per_condition = 100;
  c.stimuli.warmup_trials = 200;
  c.backbone.schedule.epochs = 30;
  c.backbone.schedule.clip_norm = 1.0;
  c.objectives.self_penalty.censor_weight = 0.0;
  c.objectives.fit.lr = 1e-3;
  c.objectives.fit.epochs = 300;
  c.objectives.self_penalty.lr = 1e-2;
  c.objectives.self_penalty.epochs = 400;
  return c;
}

// Derived values shared between sections.
void resolve(ExperimentConfig& c) {
  c.stimuli.seed = c.run.seed;
  c.backbone.schedule.seed = c.run.seed;
  c.rtify.stop.frame_ms = 1000.0 / c.stimuli.base.frame_rate_hz;
  c.objectives.fit.hist = c.objectives.hist;
  c.objectives.fit.stop = c.rtify.stop;
  c.objectives.self_penalty.stop = c.rtify.stop;
  c.wongwang.fit.hist = c.objectives.hist;
  c.wongwang.fit.seed = c.run.seed;
  c.wongwang.fit.workers = c.run.workers;
  c.wongwang.params.populations = static_cast<int>(c.stimuli.directions_deg.size());
}

void validate(const ExperimentConfig& c) {
  if (c.run.workers < 1) throw ConfigError("config: run.workers must be >= 1");
  c.stimuli.validate();
  if (c.backbone.hidden < 1) throw ConfigError("config: backbone.hidden must be >= 1");
  if (c.backbone.schedule.batch_size < 1) throw ConfigError("config: backbone.batch_size must be >= 1");
  if (c.backbone.schedule.epochs < 0 || c.backbone.schedule.warmup_epochs < 0) {
    throw ConfigError("config: backbone epoch counts must be >= 0");
  }
  if (c.rtify.mlp_hidden < 1) throw ConfigError("config: rtify.mlp_hidden must be >= 1");
  if (!(c.rtify.stop.eps_den > 0.0)) throw ConfigError("config: rtify.eps_den must be > 0");
  c.objectives.hist.validate();
  if (c.objectives.fit.epochs < 0 || c.objectives.self_penalty.epochs < 0 || c.wongwang.fit.epochs < 0) {
    throw ConfigError("config: epoch counts must be >= 0");
  }
  if (c.objectives.self_penalty.lambda < 0.0) throw ConfigError("config: objectives.lambda must be >= 0");
  c.wongwang.params.validate();
  c.reference.ddm.validate();
  if (c.reference.train_trials_per_condition < 1 || c.reference.eval_trials_per_condition < 1) {
    throw ConfigError("config: reference trial counts must be >= 1");
  }
  if (c.reference.entropy_grid < 1) throw ConfigError("config: reference.entropy_grid must be >= 1");
}

}  // namespace

std::string ExperimentConfig::canonical() const {
  std::vector<std::string> lines;
  for (const auto& f : fields()) {
    // Results do not depend on the worker count, so it stays out of the hash.
    if (f.section == "run" && f.key == "workers") continue;
    lines.push_back(f.section + "." + f.key + "=" + f.get(*this));
  }
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

std::string ExperimentConfig::hash() const {
  Fnv1a h;
  h.update(canonical());
  return h.hex();
}

ExperimentConfig parse_config(const std::string& text, std::optional<std::uint64_t> seed_override) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig cfg = defaults();
  bool has_seed = false;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("config: key '" + section + "' outside a section");
    bool known_section = false;
    for (const auto& f : fields()) known_section |= f.section == section;
    if (!known_section) throw ConfigError("config: unknown section [" + section + "]");
    for (const auto& [key, node] : body) {
      const auto it = std::find_if(fields().begin(), fields().end(),
                                   [&](const Field& f) { return f.section == section && f.key == key; });
      if (it == fields().end()) throw ConfigError("config: unknown key '" + key + "' in [" + section + "]");
      it->set(cfg, node.data());
      if (section == "run" && key == "seed") has_seed = true;
    }
  }
  if (seed_override) {
    cfg.run.seed = *seed_override;
    has_seed = true;
  }
  if (!has_seed) throw ConfigError("config: [run] seed is required");
  resolve(cfg);
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), seed_override);
}

}  // namespace rtify
