#include <benchmark/benchmark.h>

#include "cbr/intervene.hpp"
#include "cbr/log.hpp"
#include "cbr/oracle.hpp"
#include "cbr/subspace.hpp"
#include "cbr/tensorstore.hpp"

using namespace cbr;

namespace {

struct Fixture {
  PlantSpec spec;
  SynthOutput data;
};

// Planted city data at SNR 10, built once per sample count.
const Fixture& fixture(std::size_t n) {
  static std::map<std::size_t, Fixture> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  set_warning_sink([](std::string_view) {});
  Fixture f;
  f.spec = make_plant(PlantOptions{});
  f.spec.noise_sigma = sigma_for_snr(f.spec, 15, 10.0);
  SynthOptions so;
  so.n_samples = n;
  f.data = synth_dataset(f.spec, so);
  return cache.emplace(n, std::move(f)).first->second;
}

void BM_FitPls(benchmark::State& state) {
  const auto& D = fixture(static_cast<std::size_t>(state.range(0))).data.by_layer.at(15);
  const int k = static_cast<int>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(fit_pls(D.H, D.Y, k));
  state.SetItemsProcessed(state.iterations() * D.size());
}
BENCHMARK(BM_FitPls)->Args({100, 2})->Args({1000, 2})->Args({1000, 5})->Unit(benchmark::kMillisecond);

void BM_FitPcr(benchmark::State& state) {
  const auto& D = fixture(static_cast<std::size_t>(state.range(0))).data.by_layer.at(15);
  const int k = static_cast<int>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(fit_pcr(D.H, D.Y, k));
  state.SetItemsProcessed(state.iterations() * D.size());
}
BENCHMARK(BM_FitPcr)->Args({100, 2})->Args({1000, 2})->Args({1000, 5})->Unit(benchmark::kMillisecond);

void BM_ActivationCodec(benchmark::State& state) {
  ActivationFile f(64, {10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20}, 4096);
  for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] = static_cast<float>(i % 97) * 0.01f;
  for (auto _ : state) benchmark::DoNotOptimize(decode_activations(encode_activations(f)));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(f.data.size() * sizeof(float)));
}
BENCHMARK(BM_ActivationCodec)->Unit(benchmark::kMillisecond);

void BM_OracleGridLandscape(benchmark::State& state) {
  const Fixture& f = fixture(100);
  const auto& D = f.data.by_layer.at(15);
  const ProbeModel probe = fit_pls(D.H, D.Y, 2).orthonormalized();
  const PlanInputs in{&f.data.corpus, &D, &f.data.manifest};
  GridOptions g;
  g.alpha = 1.0;
  g.n_points = static_cast<int>(state.range(0));
  g.n_samples = 20;
  const PlanSet plans = plan_grid_sampling(probe, D, in, g);
  const OracleWorld world{&f.spec, &f.data, 15};
  for (auto _ : state) benchmark::DoNotOptimize(oracle_grid_landscape(plans, world));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(plans.plans.size()) * g.n_points);
}
BENCHMARK(BM_OracleGridLandscape)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
