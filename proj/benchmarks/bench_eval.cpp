#include <benchmark/benchmark.h>

#include "tdir/eval.hpp"
#include "tdir/rng.hpp"

namespace {

tdir::ScoredSet random_set(std::size_t n) {
  tdir::Rng rng(3);
  tdir::ScoredSet s;
  for (std::size_t i = 0; i < n; ++i) {
    s.labels.push_back(static_cast<int>(i % 2));
    s.scores.push_back(std::round(rng.uniform() * 100.0) / 100.0);
  }
  return s;
}

void BM_AucRank(benchmark::State& state) {
  const auto s = random_set(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(tdir::auc(s));
}
BENCHMARK(BM_AucRank)->Arg(64)->Arg(1024);

void BM_AucBruteForce(benchmark::State& state) {
  const auto s = random_set(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(tdir::auc_bruteforce_oracle(s));
}
BENCHMARK(BM_AucBruteForce)->Arg(64)->Arg(1024);

}  // namespace
