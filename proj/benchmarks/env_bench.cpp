#include <benchmark/benchmark.h>

#include <vector>

#include "bench_market.hpp"
#include "pricelab/env.hpp"
#include "pricelab/marl.hpp"

namespace pricelab {
namespace {

void BM_EnvStep(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  PricingEnv env(bench::make_market(n), bench::make_env_config());
  std::vector<int> actions(n, 2);
  std::uint64_t episode = 0;
  env.reset(env.first_start(), episode);
  for (auto _ : state) {
    if (env.done()) env.reset(env.first_start(), ++episode);
    benchmark::DoNotOptimize(env.step(actions));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_EnvStep)->Arg(3)->Arg(60);

void BM_Observe(benchmark::State& state) {
  PricingEnv env(bench::make_market(60), bench::make_env_config());
  env.reset(env.first_start(), 1);
  for (auto _ : state) benchmark::DoNotOptimize(env.observe());
}
BENCHMARK(BM_Observe);

void BM_GaeSequence(benchmark::State& state) {
  const std::size_t T = static_cast<std::size_t>(state.range(0));
  RngStream rng(3);
  std::vector<double> r(T), v(T);
  std::vector<std::uint8_t> d(T, 0);
  for (std::size_t t = 0; t < T; ++t) {
    r[t] = rng.normal();
    v[t] = rng.normal();
    d[t] = t % 19 == 18;
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(compute_gae(r, v, d, 0.0, 1.0, 0.95));
  }
}
BENCHMARK(BM_GaeSequence)->Arg(128)->Arg(4096);

}  // namespace
}  // namespace pricelab
