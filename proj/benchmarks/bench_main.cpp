#include <benchmark/benchmark.h>

#include <random>

#include "dorl/agent.hpp"
#include "dorl/data.hpp"
#include "dorl/penalty.hpp"
#include "dorl/theory.hpp"
#include "dorl/user_model.hpp"

namespace {

using namespace dorl;

LogTable smoke_logs(std::size_t events_per_user) {
  const auto world = generate_world(WorldParams{}, 1);
  return generate_logs(world, BehaviorPolicyConfig{}, events_per_user, 2);
}

void BM_BuildEntropyIndex(benchmark::State& state) {
  const auto logs = smoke_logs(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(build_entropy_index(logs, {1, 2, 3}));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(logs.records.size()));
}
BENCHMARK(BM_BuildEntropyIndex)->Arg(100)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_GpmEpoch(benchmark::State& state) {
  const auto logs = smoke_logs(100);
  TrainConfig cfg;
  cfg.ensemble_size = 1;
  cfg.epochs = 1;
  cfg.dim = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(train_ensemble(logs, cfg));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(logs.records.size()));
}
BENCHMARK(BM_GpmEpoch)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_PolicyGradientStep(benchmark::State& state) {
  const auto n_items = static_cast<std::size_t>(state.range(0));
  StateTrackerConfig tracker;
  ActorCriticHyper hyper;
  auto ac = ActorCritic::create(n_items, tracker, hyper);
  Transition tr;
  for (std::size_t k = 0; k < tracker.window; ++k) {
    tr.window_items.push_back(k);
    tr.window_rewards.push_back(0.5);
  }
  tr.mask.assign(n_items, true);
  tr.action = n_items / 2;
  tr.advantage = 0.3;
  tr.target = 1.0;
  auto grad = zero_like(ac);
  for (auto _ : state) benchmark::DoNotOptimize(accumulate_transition_gradient(ac, tr, grad));
}
BENCHMARK(BM_PolicyGradientStep)->Arg(200)->Arg(2000);

void BM_ValueFunction(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const auto s = static_cast<std::size_t>(state.range(0));
  const auto m = theory::random_mdp(s, 3, 0.99, rng);
  const auto pi = theory::random_policy(s, 3, rng);
  for (auto _ : state) benchmark::DoNotOptimize(theory::value_function(m, pi));
}
BENCHMARK(BM_ValueFunction)->Arg(5)->Arg(50)->Arg(200);

}  // namespace
BENCHMARK_MAIN();
