#include "rtify/wongwang.hpp"

#include <algorithm>
#include <fstream>
#include <random>

#include "rtify/diff/adam.hpp"
#include "rtify/parallel.hpp"
#include "rtify/rng.hpp"

namespace rtify::wongwang {

void WwParams::validate() const {
  if (populations < 2) throw ConfigError("wongwang: populations must be >= 2");
  if (!(tau_s > 0.0)) throw ConfigError("wongwang: tau_s must be > 0");
  if (!(dt > 0.0)) throw ConfigError("wongwang: dt must be > 0");
  if (dt > tau_s / 5.0) throw ConfigError("wongwang: dt must be <= tau_s / 5");
  if (!(theta >= 0.0 && theta <= 1.0)) throw ConfigError("wongwang: theta must lie in [0, 1]");
  if (!(s0 >= 0.0 && s0 <= 1.0)) throw ConfigError("wongwang: s0 must lie in [0, 1]");
  if (!(sigma >= 0.0)) throw ConfigError("wongwang: sigma must be >= 0");
  if (!(d > 0.0)) throw ConfigError("wongwang: d must be > 0");
  for (double v : {a, b, gamma, j_self, j_inh, j_in, i0}) {
    if (!std::isfinite(v)) throw ConfigError("wongwang: parameters must be finite");
  }
}

TransferParts transfer_parts(double u, double d, double gamma, bool continuous) {
  TransferParts t;
  if (!continuous && u <= 0.0) return t;
  const double z = d * u;
  double g, dg_du, dg_dd;
  if (std::abs(z) < 1e-4) {
    // u / (1 - e^{-du}) = (1/d)(1 + z/2 + z^2/12 + ...)
    g = (1.0 + z / 2.0 + z * z / 12.0) / d;
    dg_du = 0.5 + z / 6.0;
    dg_dd = -1.0 / (d * d) + u * u / 12.0;
  } else if (z < -50.0) {
    return t;
  } else {
    const double e = std::exp(-z);
    const double den = 1.0 - e;
    g = u / den;
    dg_du = (den - z * e) / (den * den);
    dg_dd = -u * u * e / (den * den);
  }
  t.f = gamma * g;
  t.df_du = gamma * dg_du;
  t.df_dd = gamma * dg_dd;
  t.df_dgamma = g;
  return t;
}

double sum_others(std::span<const double> s, std::size_t i) {
  if (s.size() == 2) return s[1 - i];
  std::vector<double> rest;
  rest.reserve(s.size() - 1);
  for (std::size_t j = 0; j < s.size(); ++j)
    if (j != i) rest.push_back(s[j]);
  std::sort(rest.begin(), rest.end());
  double acc = 0.0;
  for (double v : rest) acc += v;
  return acc;
}

namespace {

StepScalars scalars_of(const WwParams& p) {
  return {p.a, p.b, p.d, p.gamma, p.tau_s, p.j_self, p.j_inh, p.j_in, p.i0, p.sigma, p.dt, p.continuous_transfer};
}

struct Unit {
  double x, others, f;
  TransferParts tp;
  double q;  // unclamped update
};

Unit unit_update(double s, double others, double logit, double eta, const StepScalars& k) {
  Unit u;
  u.others = others;
  u.x = k.j_self * s - k.j_inh * others + k.j_in * logit + k.i0 + k.sigma * eta / std::sqrt(k.dt);
  u.tp = transfer_parts(k.a * u.x - k.b, k.d, k.gamma, k.continuous);
  u.f = u.tp.f;
  u.q = s - k.dt * s / k.tau_s + (k.dt / 1000.0) * (1.0 - s) * u.f;
  return u;
}

void step_row(std::span<const double> s, std::span<const double> logits, std::span<const double> eta,
              const StepScalars& k, std::span<double> out) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto u = unit_update(s[i], sum_others(s, i), logits[i], eta[i], k);
    out[i] = std::clamp(u.q, 0.0, 1.0);
  }
}

void check_finite_state(std::span<const double> s) {
  for (double v : s)
    if (!std::isfinite(v)) throw NumericError("ww_step: non-finite state");
}

}  // namespace

std::vector<double> ww_step(std::span<const double> s, std::span<const double> logits, const WwParams& p,
                            std::span<const double> noise) {
  if (s.size() != static_cast<std::size_t>(p.populations) || logits.size() != s.size() || noise.size() != s.size()) {
    throw ShapeError("ww_step: expected " + std::to_string(p.populations) + " populations");
  }
  std::vector<double> out(s.size());
  step_row(s, logits, noise, scalars_of(p), out);
  check_finite_state(out);
  return out;
}

Drive Drive::constant(std::vector<double> logits) {
  Drive d;
  d.frames = 1;
  d.populations = static_cast<int>(logits.size());
  d.logits = std::move(logits);
  return d;
}

std::span<const double> Drive::at_step(int step, double dt) const {
  int frame = 0;
  if (frames > 1 && frame_ms > 0.0) {
    frame = std::min(frames - 1, static_cast<int>(std::floor((step - 1) * dt / frame_ms)));
  }
  return {logits.data() + static_cast<std::size_t>(frame) * populations, static_cast<std::size_t>(populations)};
}

namespace {

int argmax(std::span<const double> s) { return static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin()); }
double max_of(std::span<const double> s) { return *std::max_element(s.begin(), s.end()); }

}  // namespace

WwRun ww_run(const Drive& drive, const WwParams& p, int max_steps, std::uint64_t seed, double t0_ms,
             bool record_trajectory, bool run_to_end) {
  p.validate();
  if (max_steps < 1) throw ConfigError("ww_run: max_steps must be >= 1");
  if (drive.populations != p.populations) throw ShapeError("ww_run: drive does not match population count");
  const auto m = static_cast<std::size_t>(p.populations);
  const auto k = scalars_of(p);
  Rng rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> s(m, p.s0), next(m), eta(m);
  WwRun run;
  if (record_trajectory) run.trajectory = s;
  for (int t = 1; t <= max_steps; ++t) {
    for (auto& e : eta) e = n01(rng);
    step_row(s, drive.at_step(t, p.dt), eta, k, next);
    check_finite_state(next);
    s.swap(next);
    run.steps = t;
    if (record_trajectory) run.trajectory.insert(run.trajectory.end(), s.begin(), s.end());
    if (!run.decision.crossed && max_of(s) > p.theta) {
      run.decision.crossed = true;
      run.decision.tau = t;
      run.decision.choice = argmax(s);
      if (!run_to_end) break;
    }
  }
  if (!run.decision.crossed) {
    run.decision.tau = max_steps;
    run.decision.choice = argmax(s);
  }
  run.decision.rt_ms = t0_ms + run.decision.tau * p.dt;
  return run;
}

void write_trajectory_csv(const std::filesystem::path& path, const WwRun& run, int populations,
                          const std::string& config_hash) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.precision(10);
  out << objectives::provenance_line(config_hash) << "\nstep";
  for (int i = 1; i <= populations; ++i) out << ",S_" << i;
  out << '\n';
  const std::size_t rows = run.trajectory.size() / populations;
  for (std::size_t r = 0; r < rows; ++r) {
    out << r;
    for (int i = 0; i < populations; ++i) out << ',' << run.trajectory[r * populations + i];
    out << '\n';
  }
  if (!out) throw IoError("failed writing: " + path.string());
}

diff::ParamSet to_raw(const WwParams& p) {
  p.validate();
  if (!(p.theta > 0.0 && p.theta < 1.0)) throw ConfigError("wongwang: trainable theta must lie in (0, 1)");
  diff::ParamSet raw;
  auto put_log = [&](const char* name, double v) {
    if (!(v > 0.0)) throw ConfigError(std::string("wongwang: ") + name + " must be > 0 to be trained");
    raw.set(name, diff::Array::scalar(static_cast<float>(std::log(v))));
  };
  put_log("log_a", p.a);
  put_log("log_b", p.b);
  put_log("log_d", p.d);
  put_log("log_gamma", p.gamma);
  put_log("log_tau_s", p.tau_s);
  put_log("log_j_self", p.j_self);
  put_log("log_j_inh", p.j_inh);
  put_log("log_j_in", p.j_in);
  put_log("log_i0", p.i0);
  if (p.sigma > 0.0) put_log("log_sigma", p.sigma);
  raw.set("logit_theta", diff::Array::scalar(static_cast<float>(std::log(p.theta / (1.0 - p.theta)))));
  return raw;
}

WwParams from_raw(const diff::ParamSet& raw, const WwParams& fixed) {
  WwParams p = fixed;
  auto get = [&](const char* name) { return std::exp(static_cast<double>(raw.at(name).item())); };
  p.a = get("log_a");
  p.b = get("log_b");
  p.d = get("log_d");
  p.gamma = get("log_gamma");
  p.tau_s = get("log_tau_s");
  p.j_self = get("log_j_self");
  p.j_inh = get("log_j_inh");
  p.j_in = get("log_j_in");
  p.i0 = get("log_i0");
  p.sigma = raw.contains("log_sigma") ? get("log_sigma") : 0.0;
  p.theta = 1.0 / (1.0 + std::exp(-static_cast<double>(raw.at("logit_theta").item())));
  return p;
}

template <class T>
diff::Var<T> ww_step_node(const diff::Var<T>& s, const WwVars<T>& v, const diff::BasicArray<T>& drive,
                          const diff::BasicArray<T>& noise, double dt, bool continuous) {
  const auto& sv = s.value();
  const std::size_t n = sv.rows(), m = sv.cols();
  if (drive.rows() != n || drive.cols() != m || noise.rows() != n || noise.cols() != m) {
    throw ShapeError("ww_step: drive/noise shape does not match state " + diff::shape_string(sv.shape()));
  }
  auto val = [](const diff::Var<T>& x) { return static_cast<double>(x.value().item()); };
  const StepScalars k{val(v.a),      val(v.b),    val(v.d),  val(v.gamma), val(v.tau_s), val(v.j_self),
                      val(v.j_inh),  val(v.j_in), val(v.i0), val(v.sigma), dt,           continuous};

  std::vector<double> s_in(n * m), l_in(n * m), e_in(n * m);
  for (std::size_t i = 0; i < n * m; ++i) {
    s_in[i] = static_cast<double>(sv[i]);
    l_in[i] = static_cast<double>(drive[i]);
    e_in[i] = static_cast<double>(noise[i]);
  }
  auto out = diff::BasicArray<T>::matrix(n, m);
  std::vector<double> row(m);
  for (std::size_t b = 0; b < n; ++b) {
    step_row({s_in.data() + b * m, m}, {l_in.data() + b * m, m}, {e_in.data() + b * m, m}, k, row);
    for (std::size_t i = 0; i < m; ++i) out(b, i) = static_cast<T>(row[i]);
  }

  // Backward, per element with D = upstream (zero where the update was clamped):
  //   dx   = D c f'(u) a,  c = (dt/1000)(1 - S)
  //   dS_i = D (1 - dt/tau_s - (dt/1000) f) + J_self dx_i - J_inh sum_{k != i} dx_k
  //   parameters collect dx (or du = D c f') times their coefficient in x (or u).
  auto vjp = [k, n, m, s_in = std::move(s_in), l_in = std::move(l_in),
              e_in = std::move(e_in)](const diff::BasicArray<T>& g) {
    auto ds = diff::BasicArray<T>::matrix(n, m);
    double ga = 0, gb = 0, gd = 0, ggamma = 0, gtau = 0, gself = 0, ginh = 0, gin = 0, gi0 = 0, gsigma = 0;
    std::vector<double> dx(m), direct(m);
    for (std::size_t b = 0; b < n; ++b) {
      std::span<const double> srow(s_in.data() + b * m, m);
      for (std::size_t i = 0; i < m; ++i) {
        const double s = srow[i];
        const auto u = unit_update(s, sum_others(srow, i), l_in[b * m + i], e_in[b * m + i], k);
        const double d_up = (u.q < 0.0 || u.q > 1.0) ? 0.0 : static_cast<double>(g(b, i));
        const double c = (k.dt / 1000.0) * (1.0 - s);
        const double du = d_up * c * u.tp.df_du;
        dx[i] = du * k.a;
        direct[i] = d_up * (1.0 - k.dt / k.tau_s - (k.dt / 1000.0) * u.f);
        ga += du * u.x;
        gb -= du;
        gd += d_up * c * u.tp.df_dd;
        ggamma += d_up * c * u.tp.df_dgamma;
        gtau += d_up * k.dt * s / (k.tau_s * k.tau_s);
        gself += dx[i] * s;
        ginh -= dx[i] * u.others;
        gin += dx[i] * l_in[b * m + i];
        gi0 += dx[i];
        gsigma += dx[i] * e_in[b * m + i] / std::sqrt(k.dt);
      }
      double dx_total = 0.0;
      for (double v : dx) dx_total += v;
      for (std::size_t i = 0; i < m; ++i) {
        ds(b, i) = static_cast<T>(direct[i] + k.j_self * dx[i] - k.j_inh * (dx_total - dx[i]));
      }
    }
    auto sc = [](double v) { return diff::BasicArray<T>::scalar(static_cast<T>(v)); };
    return std::vector<diff::BasicArray<T>>{std::move(ds), sc(ga),    sc(gb),   sc(gd),  sc(ggamma), sc(gtau),
                                            sc(gself),     sc(ginh), sc(gin), sc(gi0), sc(gsigma)};
  };
  return diff::custom_op<T>("ww_step", std::move(out),
                            {s, v.a, v.b, v.d, v.gamma, v.tau_s, v.j_self, v.j_inh, v.j_in, v.i0, v.sigma},
                            std::move(vjp));
}

template diff::Var<float> ww_step_node<float>(const diff::Var<float>&, const WwVars<float>&,
                                              const diff::BasicArray<float>&, const diff::BasicArray<float>&, double,
                                              bool);
template diff::Var<double> ww_step_node<double>(const diff::Var<double>&, const WwVars<double>&,
                                                const diff::BasicArray<double>&, const diff::BasicArray<double>&,
                                                double, bool);

int default_max_steps(const FitOptions& opt, double dt) {
  const int steps = static_cast<int>(std::floor((opt.hist.t_max_ms - opt.t0_ms) / dt));
  if (steps < 1) throw ConfigError("wongwang: t0 leaves no room below the histogram range");
  return steps;
}

std::vector<stopping::Decision> simulate_all(const std::vector<Drive>& drives, const WwParams& p, int max_steps,
                                             std::uint64_t seed, double t0_ms, int workers) {
  std::vector<stopping::Decision> out(drives.size());
  parallel_for(drives.size(), workers, [&](std::size_t i) {
    out[i] = ww_run(drives[i], p, max_steps, derive_seed(seed, {tag(Stream::kWwNoise), 0, i}), t0_ms).decision;
  });
  return out;
}

FitResult ww_fit(const std::vector<Drive>& drives, const std::vector<int>& labels, const std::vector<int>& conditions,
                 const std::vector<std::vector<double>>& reference_rts, const WwParams& init, const FitOptions& opt,
                 const FitCallback& on_epoch) {
  if (drives.empty()) throw ConfigError("ww_fit: no trials");
  if (drives.size() != labels.size() || drives.size() != conditions.size()) {
    throw ShapeError("ww_fit: drives, labels and conditions differ in length");
  }
  if (reference_rts.empty()) throw ConfigError("ww_fit: no reference conditions");
  const int max_steps = opt.max_steps > 0 ? opt.max_steps : default_max_steps(opt, init.dt);
  const std::size_t n = drives.size();
  const auto m = static_cast<std::size_t>(init.populations);
  for (const auto& d : drives)
    if (d.populations != init.populations) throw ShapeError("ww_fit: drive does not match population count");

  FitResult result;
  result.raw = to_raw(init);
  diff::Adam adam({.lr = opt.lr});

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    auto spec = opt.hist;
    spec.bandwidth_ms = objectives::annealed_bandwidth(opt.bandwidth_start_ms, opt.hist.bandwidth_ms,
                                                       opt.anneal_epochs, epoch);
    std::vector<objectives::Histogram> ref;
    for (const auto& r : reference_rts) {
      ref.push_back(objectives::soft_histogram(
          opt.mode == objectives::FitMode::kCorrectOnly ? objectives::positive_part(r) : r, spec));
    }

    const WwParams natural = from_raw(result.raw, init);
    diff::Tape<double> tape;
    diff::Bound<double> bound(tape, result.raw);
    const auto v = natural_vars(tape, bound);

    std::vector<Rng> rngs;
    rngs.reserve(n);
    for (std::size_t b = 0; b < n; ++b) rngs.emplace_back(derive_seed(opt.seed, {tag(Stream::kWwNoise), 1u + epoch, b}));
    std::normal_distribution<double> n01(0.0, 1.0);

    std::vector<diff::Var<double>> states{tape.constant(diff::BasicArray<double>(diff::Shape{n, m}, natural.s0))};
    std::vector<stopping::Decision> decisions(n);
    std::vector<double> increments(n, 0.0);
    std::size_t open = n;
    try {
      for (int t = 1; t <= max_steps && open > 0; ++t) {
        auto drive = diff::BasicArray<double>::matrix(n, m);
        auto noise = diff::BasicArray<double>::matrix(n, m);
        for (std::size_t b = 0; b < n; ++b) {
          const auto l = drives[b].at_step(t, natural.dt);
          for (std::size_t i = 0; i < m; ++i) {
            drive(b, i) = l[i];
            noise(b, i) = n01(rngs[b]);
          }
        }
        states.push_back(ww_step_node(states.back(), v, drive, noise, natural.dt, natural.continuous_transfer));
        const auto& cur = states.back().value();
        const auto& prev = states[states.size() - 2].value();
        for (std::size_t b = 0; b < n; ++b) {
          if (decisions[b].crossed) continue;
          std::span<const double> row(cur.data() + b * m, m);
          if (max_of(row) > natural.theta) {
            decisions[b].crossed = true;
            decisions[b].tau = t;
            decisions[b].choice = argmax(row);
            increments[b] = max_of(row) - max_of({prev.data() + b * m, m});
            --open;
          }
        }
      }
    } catch (const NumericError& e) {
      throw NumericError("ww_fit: diverged in epoch " + std::to_string(epoch) + ": " + e.what());
    }
    const int last = static_cast<int>(states.size()) - 1;
    std::vector<diff::Pick> at_tau, at_end;
    for (std::size_t b = 0; b < n; ++b) {
      auto& d = decisions[b];
      const auto& fin = states[last].value();
      if (!d.crossed) {
        d.tau = last;
        d.choice = argmax({fin.data() + b * m, m});
      }
      d.rt_ms = opt.t0_ms + d.tau * natural.dt;
      at_tau.push_back({static_cast<std::size_t>(d.tau), b, static_cast<std::size_t>(d.choice)});
      at_end.push_back({static_cast<std::size_t>(last), b, static_cast<std::size_t>(argmax({fin.data() + b * m, m}))});
    }
    auto phi_tau = diff::gather(states, at_tau);
    auto phi_end = diff::gather(states, at_end);
    auto tau = stopping::stopping_time_node(phi_tau, v.theta, decisions, increments, opt.eps_den);
    auto rts = objectives::signed_rt_node(tau, decisions, labels, natural.dt, opt.t0_ms);
    auto mse = objectives::rt_fit_loss(rts, conditions, ref, spec, opt.mode);
    auto loss = mse;
    if (opt.censor_weight > 0.0) {
      loss = loss + diff::scale(objectives::censor_penalty(phi_end, v.theta, decisions), opt.censor_weight);
    }
    FitLog entry{epoch, loss.value().item(), mse.value().item()};
    adam.step(result.raw, bound.gradients(tape.backward(loss)));
    result.log.push_back(entry);
    if (on_epoch) on_epoch(result.raw, entry);
  }
  result.params = from_raw(result.raw, init);
  return result;
}

}  // namespace rtify::wongwang
