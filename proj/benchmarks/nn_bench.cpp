#include <benchmark/benchmark.h>

#include <vector>

#include "bench_market.hpp"
#include "pricelab/gat.hpp"
#include "pricelab/marl.hpp"

namespace pricelab {
namespace {

struct PolicyFixture {
  explicit PolicyFixture(Architecture arch, std::size_t blocks)
      : market(bench::make_market(60)),
        policy(default_policy_options(arch, 5)),
        graph(nn::AttentionGraph::from_item_graph(market->graph(), blocks)),
        obs(60 * blocks, obs::kDim) {
    RngStream rng(7);
    policy.params().init_uniform_fan_in(rng);
    for (double& x : obs.data) x = rng.normal();
    for (std::size_t b = 0; b < blocks; ++b) keys.push_back(rng.next_u64());
  }
  std::shared_ptr<const MarketModel> market;
  PolicySet policy;
  nn::AttentionGraph graph;
  nn::Matrix obs;
  std::vector<RngKey> keys;
};

void BM_PolicyForward(benchmark::State& state) {
  const auto arch = state.range(0) ? Architecture::kMappoGat : Architecture::kMappo;
  PolicyFixture f(arch, 1);
  for (auto _ : state) {
    nn::Tape tape;
    auto pass = f.policy.forward(tape, f.obs, f.graph, f.keys, false);
    benchmark::DoNotOptimize(pass.logits.value().data.data());
  }
  state.SetLabel(to_string(arch));
}
BENCHMARK(BM_PolicyForward)->Arg(0)->Arg(1);

// Forward and backward over a minibatch of 8 env-steps of 60 agents.
void BM_PolicyBackward(benchmark::State& state) {
  const auto arch = state.range(0) ? Architecture::kMappoGat : Architecture::kMappo;
  PolicyFixture f(arch, 8);
  for (auto _ : state) {
    nn::Tape tape;
    auto pass = f.policy.forward(tape, f.obs, f.graph, f.keys, true);
    f.policy.params().zero_grad();
    tape.backward(nn::mean_all(nn::log_softmax_rows(pass.logits)));
    benchmark::ClobberMemory();
  }
  state.SetLabel(to_string(arch));
}
BENCHMARK(BM_PolicyBackward)->Arg(0)->Arg(1);

void BM_MatmulTape(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  nn::Matrix a(n, 64, 0.5), b(64, 64, 0.25);
  for (auto _ : state) {
    nn::Tape tape;
    benchmark::DoNotOptimize(
        nn::matmul(tape.constant(a), tape.constant(b)).value().data.data());
  }
}
BENCHMARK(BM_MatmulTape)->Arg(60)->Arg(480);

}  // namespace
}  // namespace pricelab
