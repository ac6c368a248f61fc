#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rtify/dataset.hpp"
#include "rtify/diff/bind.hpp"
#include "rtify/diff/ops.hpp"
#include "rtify/diff/params.hpp"

namespace rtify::backbone {

/// Vanilla tanh RNN:
///   h_t = tanh(x_t W_in + h_{t-1} W_rec + b),  h_0 = 0
///   l_t = h_t W_out + b_out
/// Parameters live in a ParamSet under the names W_in, W_rec, b, W_out, b_out.
struct RnnShape {
  int input_dim = stimuli::kChannels;
  int hidden = 64;
  int classes = 2;
};

diff::ParamSet init_params(const RnnShape& shape, std::uint64_t seed);
RnnShape shape_of(const diff::ParamSet& params);
void validate(const diff::ParamSet& params);

/// Per-step hidden states (n_steps x hidden) and logits (n_steps x classes).
struct HiddenTrace {
  int n_steps = 0;
  int hidden = 0;
  int classes = 0;
  std::vector<float> h;
  std::vector<float> logits;

  const float* h_at(int t) const { return h.data() + static_cast<std::size_t>(t) * hidden; }
  const float* logits_at(int t) const { return logits.data() + static_cast<std::size_t>(t) * classes; }
};

HiddenTrace forward(const stimuli::EvidenceStream& stream, const diff::ParamSet& params);
std::vector<HiddenTrace> forward_all(const std::vector<stimuli::Trial>& trials, const diff::ParamSet& params,
                                     int workers = 1);

enum class ReadoutLoss { kPerStep, kMeanPooled, kFinal };
ReadoutLoss parse_readout_loss(const std::string& token);
std::string to_string(ReadoutLoss loss);

/// Class predicted for a whole clip: argmax of summed logits, or of the last
/// step's logits under kFinal.
int classify(const HiddenTrace& trace, ReadoutLoss loss);

/// Step inputs for a batch: element t is a (batch x input_dim) matrix.
template <class T>
std::vector<diff::BasicArray<T>> batch_inputs(const std::vector<const stimuli::Trial*>& batch) {
  const int steps = batch.front()->stream.n_frames;
  std::vector<diff::BasicArray<T>> xs;
  xs.reserve(steps);
  for (int t = 0; t < steps; ++t) {
    auto x = diff::BasicArray<T>::matrix(batch.size(), stimuli::kChannels);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      if (batch[b]->stream.n_frames != steps) throw ShapeError("backbone: batch mixes sequence lengths");
      for (int k = 0; k < stimuli::kChannels; ++k) x(b, k) = static_cast<T>(batch[b]->stream.at(t, k));
    }
    xs.push_back(std::move(x));
  }
  return xs;
}

template <class T>
struct Unrolled {
  std::vector<diff::Var<T>> hidden;
  std::vector<diff::Var<T>> logits;
};

/// Records the unrolled network on the tape.
template <class T>
Unrolled<T> unroll(diff::Tape<T>& tape, const diff::Bound<T>& p, const std::vector<diff::BasicArray<T>>& xs) {
  if (xs.empty()) throw ShapeError("backbone: empty input sequence");
  const auto& w_in = p["W_in"];
  const auto& w_rec = p["W_rec"];
  const auto& b = p["b"];
  const auto& w_out = p["W_out"];
  const auto& b_out = p["b_out"];
  if (xs.front().cols() != w_in.value().rows()) {
    throw ShapeError("backbone: input dimension " + std::to_string(xs.front().cols()) + " but W_in expects " +
                     std::to_string(w_in.value().rows()));
  }
  Unrolled<T> out;
  diff::Var<T> h;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    auto pre = diff::matmul(tape.constant(xs[t]), w_in) + b;
    if (t > 0) pre = pre + diff::matmul(h, w_rec);
    h = diff::tanh(pre);
    out.hidden.push_back(h);
    out.logits.push_back(diff::matmul(h, w_out) + b_out);
  }
  return out;
}

/// Training loss of one batch under the chosen readout.
template <class T>
diff::Var<T> readout_loss(const Unrolled<T>& net, const std::vector<int>& labels, ReadoutLoss kind) {
  switch (kind) {
    case ReadoutLoss::kFinal:
      return diff::cross_entropy(net.logits.back(), labels);
    case ReadoutLoss::kMeanPooled: {
      auto acc = net.logits.front();
      for (std::size_t t = 1; t < net.logits.size(); ++t) acc = acc + net.logits[t];
      return diff::cross_entropy(diff::scale(acc, T{1} / static_cast<T>(net.logits.size())), labels);
    }
    case ReadoutLoss::kPerStep:
    default: {
      auto acc = diff::cross_entropy(net.logits.front(), labels);
      for (std::size_t t = 1; t < net.logits.size(); ++t) acc = acc + diff::cross_entropy(net.logits[t], labels);
      return diff::scale(acc, T{1} / static_cast<T>(net.logits.size()));
    }
  }
}

struct TrainSchedule {
  int epochs = 100;
  /// Leading epochs trained on the warm-up split (near-full coherence).
  int warmup_epochs = 10;
  double lr = 1e-3;
  double warmup_lr = 1e-3;
  int batch_size = 50;
  ReadoutLoss loss = ReadoutLoss::kPerStep;
  double clip_norm = 0.0;
  std::uint64_t seed = 0;
};

struct EpochLog {
  int epoch = 0;
  bool warmup = false;
  double loss = 0.0;
  std::vector<double> accuracy;  // per condition on the evaluation split
};

struct TrainResult {
  diff::ParamSet params;
  std::vector<EpochLog> log;
};

/// Called after every completed epoch (e.g. to write a checkpoint).
using EpochCallback = std::function<void(const diff::ParamSet&, const EpochLog&)>;

/// BPTT with Adam. Raises NumericError if the loss diverges; parameters from
/// the last completed epoch have already been handed to `on_epoch`.
TrainResult train_bptt(const stimuli::Split& train, const stimuli::Split* warmup, const stimuli::Split& eval,
                       int n_conditions, diff::ParamSet params, const TrainSchedule& schedule,
                       const EpochCallback& on_epoch = {});

/// Fraction correct per condition.
std::vector<double> accuracy_by_condition(const std::vector<stimuli::Trial>& trials,
                                          const std::vector<HiddenTrace>& traces, int n_conditions, ReadoutLoss loss);

}  // namespace rtify::backbone
