#include "rtify/backbone.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rtify/diff/adam.hpp"
#include "rtify/parallel.hpp"
#include "rtify/rng.hpp"

namespace rtify::backbone {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;

ConstMap view(const diff::Array& a) {
  return ConstMap(a.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
}

diff::Array gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  diff::Array a = diff::Array::matrix(rows, cols);
  for (auto& v : a.values()) v = static_cast<float>(n(rng));
  return a;
}

}  // namespace

diff::ParamSet init_params(const RnnShape& shape, std::uint64_t seed) {
  if (shape.input_dim < 1 || shape.hidden < 1 || shape.classes < 2) throw ConfigError("backbone: invalid shape");
  Rng rng(derive_seed(seed, {tag(Stream::kBackboneInit)}));
  const auto d = static_cast<std::size_t>(shape.input_dim);
  const auto k = static_cast<std::size_t>(shape.hidden);
  const auto c = static_cast<std::size_t>(shape.classes);
  diff::ParamSet p;
  p.set("W_in", gaussian(d, k, 1.0 / std::sqrt(static_cast<double>(d)), rng));
  p.set("W_rec", gaussian(k, k, 0.9 / std::sqrt(static_cast<double>(k)), rng));
  p.set("b", diff::Array::matrix(1, k));
  p.set("W_out", gaussian(k, c, 1.0 / std::sqrt(static_cast<double>(k)), rng));
  p.set("b_out", diff::Array::matrix(1, c));
  return p;
}

RnnShape shape_of(const diff::ParamSet& params) {
  RnnShape s;
  s.input_dim = static_cast<int>(params.at("W_in").rows());
  s.hidden = static_cast<int>(params.at("W_in").cols());
  s.classes = static_cast<int>(params.at("W_out").cols());
  return s;
}

void validate(const diff::ParamSet& params) {
  const auto s = shape_of(params);
  const auto k = static_cast<std::size_t>(s.hidden);
  const auto c = static_cast<std::size_t>(s.classes);
  auto expect = [&](const char* name, std::size_t r, std::size_t cc) {
    const auto& a = params.at(name);
    if (a.rows() != r || a.cols() != cc) throw ShapeError(std::string("backbone: bad shape for ") + name);
    if (!a.all_finite()) throw NumericError(std::string("backbone: non-finite values in ") + name);
  };
  expect("W_rec", k, k);
  expect("b", 1, k);
  expect("W_out", k, c);
  expect("b_out", 1, c);
}

HiddenTrace forward(const stimuli::EvidenceStream& stream, const diff::ParamSet& params) {
  const auto s = shape_of(params);
  if (s.input_dim != stimuli::kChannels) {
    throw ShapeError("backbone: stream has " + std::to_string(stimuli::kChannels) + " channels, W_in expects " +
                     std::to_string(s.input_dim));
  }
  HiddenTrace tr;
  tr.n_steps = stream.n_frames;
  tr.hidden = s.hidden;
  tr.classes = s.classes;
  tr.h.resize(static_cast<std::size_t>(tr.n_steps) * s.hidden);
  tr.logits.resize(static_cast<std::size_t>(tr.n_steps) * s.classes);
  const auto w_in = view(params.at("W_in"));
  const auto w_rec = view(params.at("W_rec"));
  const auto b = view(params.at("b"));
  const auto w_out = view(params.at("W_out"));
  const auto b_out = view(params.at("b_out"));
  RowMat h = RowMat::Zero(1, s.hidden);
  for (int t = 0; t < tr.n_steps; ++t) {
    Eigen::Map<const RowMat> x(stream.channels.data() + static_cast<std::size_t>(t) * stimuli::kChannels, 1,
                               stimuli::kChannels);
    RowMat pre = x * w_in + b;
    if (t > 0) pre.noalias() += h * w_rec;
    h = pre.array().tanh().matrix();
    RowMat l = h * w_out + b_out;
    std::copy(h.data(), h.data() + s.hidden, tr.h.begin() + static_cast<std::ptrdiff_t>(t) * s.hidden);
    std::copy(l.data(), l.data() + s.classes, tr.logits.begin() + static_cast<std::ptrdiff_t>(t) * s.classes);
  }
  return tr;
}

std::vector<HiddenTrace> forward_all(const std::vector<stimuli::Trial>& trials, const diff::ParamSet& params,
                                     int workers) {
  validate(params);
  std::vector<HiddenTrace> out(trials.size());
  parallel_for(trials.size(), workers, [&](std::size_t i) { out[i] = forward(trials[i].stream, params); });
  return out;
}

ReadoutLoss parse_readout_loss(const std::string& token) {
  if (token == "per-step") return ReadoutLoss::kPerStep;
  if (token == "mean-pooled") return ReadoutLoss::kMeanPooled;
  if (token == "final") return ReadoutLoss::kFinal;
  throw ConfigError("backbone: unknown readout_loss '" + token + "' (per-step, mean-pooled, final)");
}

std::string to_string(ReadoutLoss loss) {
  switch (loss) {
    case ReadoutLoss::kPerStep: return "per-step";
    case ReadoutLoss::kMeanPooled: return "mean-pooled";
    case ReadoutLoss::kFinal: return "final";
  }
  return "?";
}

int classify(const HiddenTrace& trace, ReadoutLoss loss) {
  std::vector<double> score(trace.classes, 0.0);
  if (loss == ReadoutLoss::kFinal) {
    const float* l = trace.logits_at(trace.n_steps - 1);
    for (int c = 0; c < trace.classes; ++c) score[c] = l[c];
  } else {
    for (int t = 0; t < trace.n_steps; ++t) {
      const float* l = trace.logits_at(t);
      for (int c = 0; c < trace.classes; ++c) score[c] += l[c];
    }
  }
  return static_cast<int>(std::max_element(score.begin(), score.end()) - score.begin());
}

std::vector<double> accuracy_by_condition(const std::vector<stimuli::Trial>& trials,
                                          const std::vector<HiddenTrace>& traces, int n_conditions, ReadoutLoss loss) {
  std::vector<double> hit(n_conditions, 0.0), count(n_conditions, 0.0);
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const int c = trials[i].condition;
    if (c < 0 || c >= n_conditions) continue;
    count[c] += 1;
    hit[c] += classify(traces[i], loss) == trials[i].label ? 1.0 : 0.0;
  }
  for (int c = 0; c < n_conditions; ++c) hit[c] = count[c] > 0 ? hit[c] / count[c] : 0.0;
  return hit;
}

TrainResult train_bptt(const stimuli::Split& train, const stimuli::Split* warmup, const stimuli::Split& eval,
                       int n_conditions, diff::ParamSet params, const TrainSchedule& schedule,
                       const EpochCallback& on_epoch) {
  if (train.trials.empty()) throw ConfigError("train_bptt: empty training split");
  if (schedule.epochs < 0 || schedule.warmup_epochs < 0) throw ConfigError("train_bptt: negative epoch count");
  if (schedule.batch_size < 1) throw ConfigError("train_bptt: batch_size must be >= 1");
  validate(params);

  TrainResult result;
  diff::Adam adam({.lr = schedule.lr, .clip_norm = schedule.clip_norm});
  Rng shuffle_rng(derive_seed(schedule.seed, {tag(Stream::kBackboneShuffle)}));

  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    const bool in_warmup = warmup != nullptr && !warmup->trials.empty() && epoch < schedule.warmup_epochs;
    const auto& split = in_warmup ? *warmup : train;
    adam.set_lr(in_warmup ? schedule.warmup_lr : schedule.lr);

    std::vector<std::size_t> order(split.trials.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += schedule.batch_size) {
      const std::size_t stop = std::min(order.size(), start + schedule.batch_size);
      std::vector<const stimuli::Trial*> batch;
      std::vector<int> labels;
      for (std::size_t i = start; i < stop; ++i) {
        batch.push_back(&split.trials[order[i]]);
        labels.push_back(split.trials[order[i]].label);
      }
      diff::Tape<float> tape;
      diff::Bound<float> bound(tape, params);
      auto net = unroll(tape, bound, batch_inputs<float>(batch));
      diff::Var<float> loss;
      try {
        loss = readout_loss(net, labels, schedule.loss);
      } catch (const NumericError& e) {
        throw NumericError("train_bptt: diverged in epoch " + std::to_string(epoch) + ": " + e.what());
      }
      const double lv = loss.value().item();
      if (!std::isfinite(lv)) throw NumericError("train_bptt: loss is not finite in epoch " + std::to_string(epoch));
      adam.step(params, bound.gradients(tape.backward(loss)));
      loss_sum += lv * static_cast<double>(batch.size());
      seen += batch.size();
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.warmup = in_warmup;
    entry.loss = loss_sum / static_cast<double>(seen);
    entry.accuracy = accuracy_by_condition(eval.trials, forward_all(eval.trials, params), n_conditions, schedule.loss);
    result.log.push_back(entry);
    if (on_epoch) on_epoch(params, entry);
  }
  result.params = std::move(params);
  return result;
}

}  // namespace rtify::backbone
