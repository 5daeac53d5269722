// Optimised kernels against their serial references. Run with
// OMP_NUM_THREADS=N to see the parallel scaling.
#include <benchmark/benchmark.h>

#include <random>

#include "semg/dsp.hpp"
#include "semg/ingest.hpp"
#include "semg/model.hpp"
#include "semg/nn/layers.hpp"
#include "semg/nn/reference.hpp"

using namespace semg;

namespace {

template <typename T>
nn::Tensor<T> noise(nn::Shape shape, std::uint64_t seed) {
  nn::Tensor<T> t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  for (auto& v : t.vec()) v = static_cast<T>(d(rng));
  return t;
}

// Feature-block sized conv: (batch, 129, 32, cin) -> cout.
template <typename T>
struct ConvCase {
  nn::Tensor<T> x, gy;
  nn::ConvParams<T> p;
  ConvCase(std::size_t batch, std::size_t cin, std::size_t cout)
      : x(noise<T>({batch, 129, 32, cin}, 1)), gy(noise<T>({batch, 129, 32, cout}, 2)),
        p(nn::ConvParams<T>::zeros(3, 3, cin, cout)) {
    p.kernel = noise<T>({3, 3, cin, cout}, 3);
  }
};

void BM_ConvForward(benchmark::State& st) {
  ConvCase<float> c(4, static_cast<std::size_t>(st.range(0)), static_cast<std::size_t>(st.range(1)));
  for (auto _ : st) benchmark::DoNotOptimize(nn::conv2d_forward(c.x, c.p));
}
void BM_ConvForwardReference(benchmark::State& st) {
  ConvCase<float> c(4, static_cast<std::size_t>(st.range(0)), static_cast<std::size_t>(st.range(1)));
  for (auto _ : st) benchmark::DoNotOptimize(nn::reference::conv2d_forward(c.x, c.p));
}
void BM_ConvBackward(benchmark::State& st) {
  ConvCase<float> c(4, static_cast<std::size_t>(st.range(0)), static_cast<std::size_t>(st.range(1)));
  for (auto _ : st) {
    nn::ConvParams<float> g;
    benchmark::DoNotOptimize(nn::conv2d_backward(c.x, c.p, c.gy, g));
  }
}
void BM_ConvBackwardReference(benchmark::State& st) {
  ConvCase<float> c(4, static_cast<std::size_t>(st.range(0)), static_cast<std::size_t>(st.range(1)));
  for (auto _ : st) {
    nn::ConvParams<float> g;
    benchmark::DoNotOptimize(nn::reference::conv2d_backward(c.x, c.p, c.gy, g));
  }
}

#define CONV_ARGS ->Args({2, 16})->Args({16, 32})->Args({32, 32})->Unit(benchmark::kMillisecond)
BENCHMARK(BM_ConvForward) CONV_ARGS;
BENCHMARK(BM_ConvForwardReference) CONV_ARGS;
BENCHMARK(BM_ConvBackward) CONV_ARGS;
BENCHMARK(BM_ConvBackwardReference) CONV_ARGS;

void BM_Featurize(benchmark::State& st) {
  const auto segs = synth_dataset(1, 22, 2);
  for (auto _ : st) benchmark::DoNotOptimize(dsp::featurize_batch(segs));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(segs.size()));
}
void BM_FeaturizeSerial(benchmark::State& st) {
  const auto segs = synth_dataset(1, 22, 2);
  for (auto _ : st) benchmark::DoNotOptimize(dsp::serial::featurize_batch(segs));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(segs.size()));
}
BENCHMARK(BM_Featurize)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FeaturizeSerial)->Unit(benchmark::kMillisecond);

void BM_Resample(benchmark::State& st) {
  RawWindow w;
  w.samples.resize(kWindowLen);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> d(0.0, 1.0);
  for (auto& v : w.samples) v = d(rng);
  resample_window(w);  // builds the cached filter bank outside the timed loop
  for (auto _ : st) benchmark::DoNotOptimize(resample_window(w));
}
BENCHMARK(BM_Resample)->Unit(benchmark::kMicrosecond);

// One training step of the default network at batch 32.
void BM_TrainStep(benchmark::State& st) {
  auto s = model::init<float>(model::ModelConfig{}, 0);
  s.standardization.mean = {0.0f, 0.0f};
  s.standardization.std = {1.0f, 1.0f};
  const auto x = noise<float>({32, 129, 32, 2}, 5);
  std::vector<int> labels(32);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 3);
  for (auto _ : st) {
    model::ForwardCache<float> cache;
    const auto out = model::forward(s, x, nn::Mode::Train, &cache);
    const auto sx = nn::softmax_xent(out.logits, std::span<const int>(labels));
    model::ModelGrads<float> g;
    benchmark::DoNotOptimize(model::backward(s, cache, sx.grad_logits, g));
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
