#include <benchmark/benchmark.h>

#include <map>

#include "trajclust/caae.hpp"
#include "trajclust/coloring.hpp"
#include "trajclust/metrics.hpp"
#include "trajclust/pgkmeans.hpp"

using namespace trajclust;

namespace {

const Dataset& takeball(std::size_t episodes) {
  static std::map<std::size_t, Dataset> cache;
  auto it = cache.find(episodes);
  if (it == cache.end()) it = cache.emplace(episodes, generate(envs::EnvId::takeball, episodes, 1)).first;
  return it->second;
}

void BM_Generate(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(generate(envs::EnvId::diagonal, state.range(0), 1));
  state.SetItemsProcessed(state.iterations() * state.range(0) * 5);
}
BENCHMARK(BM_Generate)->Arg(100)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_TabularFit(benchmark::State& state) {
  const Dataset& d = takeball(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(policy::fit(policy::Family::tabular, d));
  state.SetItemsProcessed(state.iterations() * d.total_steps());
}
BENCHMARK(BM_TabularFit)->Arg(100)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_EStep(benchmark::State& state) {
  const Dataset& d = takeball(1000);
  std::vector<std::size_t> labels(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) labels[i] = i % state.range(0);
  const auto pol = pgk::m_step(d, pgk::ClusterAssignment(labels, state.range(0)), policy::Family::tabular);
  for (auto _ : state) benchmark::DoNotOptimize(pgk::e_step(d, pol));
  state.SetItemsProcessed(state.iterations() * d.size() * state.range(0));
}
BENCHMARK(BM_EStep)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_PgkRun(benchmark::State& state) {
  const Dataset& d = takeball(1000);
  pgk::PgkConfig c;
  c.k = 6;
  c.k_star = 4;
  for (auto _ : state) benchmark::DoNotOptimize(pgk::run(d, c));
}
BENCHMARK(BM_PgkRun)->Unit(benchmark::kMillisecond);

void BM_CaaeLossGradients(benchmark::State& state) {
  const Dataset& d = takeball(100);
  const caae::CaaeModel m(observation_space(d), action_space(d.meta.env), 4, {}, 0);
  std::vector<const Trajectory*> batch;
  for (std::size_t i = 0; i < static_cast<std::size_t>(state.range(0)); ++i) batch.push_back(&d.trajectories[i * 5]);
  for (auto _ : state) benchmark::DoNotOptimize(caae::loss_gradients(m, batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_CaaeLossGradients)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_BuildGraph(benchmark::State& state) {
  const Dataset d = generate(envs::EnvId::diagonal, state.range(0), 1);
  for (auto _ : state) benchmark::DoNotOptimize(coloring::build_graph(d));
}
BENCHMARK(BM_BuildGraph)->Arg(20)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_Nmi(benchmark::State& state) {
  std::vector<std::size_t> a(state.range(0)), b(state.range(0));
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = i % 4;
    b[i] = (i * 7) % 5;
  }
  for (auto _ : state) benchmark::DoNotOptimize(metrics::nmi(a, b));
}
BENCHMARK(BM_Nmi)->Arg(4000)->Arg(100000);

}  // namespace

BENCHMARK_MAIN();
