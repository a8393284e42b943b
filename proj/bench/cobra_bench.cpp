// Serial reference vs OpenMP-parallel kernels.

#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "cobra/cbi.hpp"
#include "cobra/contagion.hpp"
#include "cobra/mock.hpp"
#include "cobra/regulation.hpp"
#include "cobra/rng.hpp"

using namespace cobra;

namespace {

Execution mode(const benchmark::State& state) { return state.range(0) ? Execution::Parallel : Execution::Serial; }

const Testbed& testbed() {
  static const Testbed tb = Testbed::bundled();
  return tb;
}

void BM_WeightedScores(benchmark::State& state) {
  Rng rng(1);
  std::vector<OptionDistribution> ds;
  for (int i = 0; i < 100000; ++i) {
    std::array<double, kOptionCount> m{};
    for (double& x : m) x = -std::log(1.0 - rng.uniform());
    ds.push_back(OptionDistribution::normalized(m));
  }
  std::vector<double> out(ds.size());
  for (auto _ : state) {
    weighted_scores(ds, out, mode(state));
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(ds.size()));
}
BENCHMARK(BM_WeightedScores)->Arg(0)->Arg(1);

void BM_MeasureExact(benchmark::State& state) {
  MockAgentSpec s;
  s.base_bias = 2.4;
  s.noise = 0.3;
  const auto agent = make_mock(s);
  const auto& p = testbed().find("milgram_obedience");
  Seed seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(measure(*agent, p, ++seed, {mode(state)}).value);
}
BENCHMARK(BM_MeasureExact)->Arg(0)->Arg(1);

void BM_MeasureSampled(benchmark::State& state) {
  MockAgentSpec s;
  s.base_bias = 2.4;
  s.noise = 0.3;
  s.exact_probs = false;
  BackendConfig cfg = mock_config("sampler");
  cfg.max_samples = 200;
  const auto agent = make_mock(s, cfg);
  const auto& p = testbed().find("milgram_obedience");
  Seed seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(measure(*agent, p, ++seed, {mode(state)}).value);
}
BENCHMARK(BM_MeasureSampled)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_DoseResponse(benchmark::State& state) {
  std::vector<ContagionAgent> agents;
  for (double k : {0.01, 0.02, 0.03}) {
    MockAgentSpec s;
    s.base_bias = 2.0;
    s.contagion_kappa = k;
    agents.push_back({std::to_string(k), 2.0, make_mock(s)});
  }
  const PostCorpus corpus = PostCorpus::bundled();
  DoseResponseOptions opt;
  opt.trials_per_cell = 10;
  opt.execution = mode(state);
  for (auto _ : state) {
    benchmark::DoNotOptimize(run_dose_response(agents, corpus, LexiconScorer{}, 1, opt).cells.size());
  }
}
BENCHMARK(BM_DoseResponse)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
