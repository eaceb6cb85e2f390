// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <map>

#include <omp.h>

#include "modwt/balance.hpp"
#include "modwt/demo.hpp"
#include "modwt/ps.hpp"
#include "modwt/sensitivity.hpp"

using namespace modwt;

namespace {

struct BalanceFixture {
  Dataset data;
  BalanceColumns cols;
  std::vector<double> w;

  explicit BalanceFixture(std::size_t n) : data(DemoDgp{}.generate(n, 7)) {
    cols = prepare_balance_columns(encode_balance(data), data.survey_weight());
    w.assign(data.survey_weight().begin(), data.survey_weight().end());
  }
};

const BalanceFixture& balance_fixture(std::size_t n) {
  static std::map<std::size_t, BalanceFixture> cache;
  return cache.try_emplace(n, n).first->second;
}

void BM_criterion_serial(benchmark::State& state) {
  const auto& f = balance_fixture(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(balance_criterion_serial(f.cols, f.data.treatment(), f.w));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_criterion_omp(benchmark::State& state) {
  const auto& f = balance_fixture(static_cast<std::size_t>(state.range(0)));
  omp_set_num_threads(static_cast<int>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(balance_criterion_omp(f.cols, f.data.treatment(), f.w));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

const StratumInputs& grid_inputs() {
  static const StratumInputs in = [] {
    const auto ds = DemoDgp{}.generate(2000, 7);
    BoostConfig cfg;
    cfg.seed = 7;
    const auto fits = fit_stratified(ds, cfg);
    return sensitivity_inputs(ds, fits).front();
  }();
  return in;
}

SensitivityConfig grid_config() {
  SensitivityConfig c;
  c.es_grid = {-0.4, -0.2, 0.0, 0.2, 0.4};
  c.rho_grid = {0.0, 0.1, 0.2, 0.3};
  c.n_reps = 10;
  c.seed = 7;
  return c;
}

void BM_ov_grid_serial(benchmark::State& state) {
  const auto& in = grid_inputs();
  const auto cfg = grid_config();
  for (auto _ : state) benchmark::DoNotOptimize(ov_grid(in, cfg, Execution::serial));
}

void BM_ov_grid_parallel(benchmark::State& state) {
  const auto& in = grid_inputs();
  const auto cfg = grid_config();
  omp_set_num_threads(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(ov_grid(in, cfg, Execution::parallel));
}

}  // namespace

BENCHMARK(BM_criterion_serial)->Arg(2000)->Arg(20000)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_criterion_omp)->ArgsProduct({{2000, 20000}, {1, 2, 4}})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ov_grid_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ov_grid_parallel)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
