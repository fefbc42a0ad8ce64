#include <benchmark/benchmark.h>

#include "tdir/data.hpp"
#include "tdir/model.hpp"
#include "tdir/train.hpp"

namespace {

tdir::WindowedSample default_sample() {
  tdir::SynthConfig sc;
  sc.subjects_per_class = 1;
  sc.n_classes = 1;
  sc.ar_coefficients = {{0.5, 0.2}};
  const auto ds = tdir::synth_generate(sc);
  return tdir::slice_windows(tdir::zscore_normalize(ds.records[0]), 20);
}

void BM_Conv1d(benchmark::State& state) {
  const std::size_t cin = state.range(0), cout = state.range(1);
  tdir::Tensor<float> x({cin, 20}), w({cout, cin, 4}), b({cout});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.01f * static_cast<float>(i % 17);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.001f * static_cast<float>(i % 13);
  for (auto _ : state) {
    tdir::Tape<float> tape;
    auto y = tape.conv1d(tape.constant_ref(x), tape.param(w), tape.param(b));
    tape.backward(tape.sum(y));
    benchmark::DoNotOptimize(tape.value(y).values.data());
  }
}
BENCHMARK(BM_Conv1d)->Args({53, 64})->Args({64, 128});

void BM_ModelForward(benchmark::State& state) {
  const tdir::ModelConfig cfg;
  const auto params = tdir::init_params(cfg, 1);
  const auto sample = default_sample();
  for (auto _ : state) {
    auto probs = tdir::predict(params, sample, cfg);
    benchmark::DoNotOptimize(probs.data());
  }
}
BENCHMARK(BM_ModelForward)->Unit(benchmark::kMillisecond);

void BM_ModelForwardBackward(benchmark::State& state) {
  const tdir::ModelConfig cfg;
  const auto params = tdir::init_params(cfg, 1);
  const auto sample = default_sample();
  const std::vector<const tdir::WindowedSample*> batch(static_cast<std::size_t>(state.range(0)), &sample);
  for (auto _ : state) {
    auto bg = tdir::batch_gradients(params, batch, cfg, 1);
    benchmark::DoNotOptimize(bg.loss_sum);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ModelForwardBackward)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace
