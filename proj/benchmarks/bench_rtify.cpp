#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "rtify/backbone.hpp"
#include "rtify/objectives.hpp"
#include "rtify/stopping.hpp"
#include "rtify/wongwang.hpp"

namespace {

using namespace rtify;

stimuli::EvidenceStream random_stream(int frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  stimuli::EvidenceStream s;
  s.n_frames = frames;
  s.channels.resize(static_cast<std::size_t>(frames) * stimuli::kChannels);
  for (auto& v : s.channels) v = u(rng);
  return s;
}

void BM_BackboneForward(benchmark::State& state) {
  const int hidden = static_cast<int>(state.range(0));
  const auto params = backbone::init_params({stimuli::kChannels, hidden, 2}, 1);
  const auto stream = random_stream(120, 2);
  for (auto _ : state) benchmark::DoNotOptimize(backbone::forward(stream, params));
  state.SetItemsProcessed(state.iterations() * 120);
}
BENCHMARK(BM_BackboneForward)->Arg(16)->Arg(64)->Arg(128);

// Forward and backward of the stopping rule over a batch of 120-step traces.
void BM_RunBatch(benchmark::State& state) {
  const auto batch_size = static_cast<std::size_t>(state.range(0));
  const auto bparams = backbone::init_params({stimuli::kChannels, 64, 2}, 3);
  std::vector<backbone::HiddenTrace> traces;
  for (std::size_t i = 0; i < batch_size; ++i) traces.push_back(backbone::forward(random_stream(120, 10 + i), bparams));
  std::vector<const backbone::HiddenTrace*> batch;
  for (const auto& t : traces) batch.push_back(&t);
  auto params = stopping::init_params({64, 32}, 0.1, 4);
  stopping::Options opt;
  opt.policy = stopping::ReadoutPolicy::kAtTau;
  params.set("theta", diff::Array::scalar(static_cast<float>(stopping::init_theta(traces, params, 0.75))));
  for (auto _ : state) {
    diff::Tape<float> tape;
    diff::Bound<float> p(tape, params);
    auto fwd = stopping::run_batch(tape, p, batch, opt);
    auto loss = diff::cross_entropy(fwd.readout, std::vector<int>(batch_size, 0)) + diff::mean(fwd.tau);
    benchmark::DoNotOptimize(p.gradients(tape.backward(loss)));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch_size));
}
BENCHMARK(BM_RunBatch)->Arg(32)->Arg(128);

void BM_WwStep(benchmark::State& state) {
  const wongwang::WwParams p;
  std::vector<double> s{0.1, 0.1};
  const std::vector<double> logits{0.5, -0.5}, noise{0.01, -0.02};
  for (auto _ : state) {
    s = wongwang::ww_step(s, logits, p, noise);
    benchmark::DoNotOptimize(s.data());
  }
}
BENCHMARK(BM_WwStep);

void BM_SoftHistogram(benchmark::State& state) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-2000.0, 2000.0);
  std::vector<double> rts(static_cast<std::size_t>(state.range(0)));
  for (auto& v : rts) v = u(rng);
  const objectives::HistogramSpec spec;
  for (auto _ : state) benchmark::DoNotOptimize(objectives::soft_histogram(rts, spec));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SoftHistogram)->Arg(500)->Arg(2000);

}  // namespace

BENCHMARK_MAIN();
