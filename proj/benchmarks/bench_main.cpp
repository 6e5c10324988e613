#include <benchmark/benchmark.h>

#include "esrm/evaluate.hpp"

using namespace esrm;

namespace {

SimConfig bench_config(ModelKind model, int n) {
  SimConfig cfg;
  cfg.model = model;
  cfg.n = n;
  cfg.B = 5;
  cfg.beta0 = make_beta0(1.0, 0.5, 0.2, 5);
  cfg.baseline.shape = 2.5;
  cfg.death_rate = 0.47;
  cfg.censor_rate = 0.47;
  cfg.seed = 12345;
  return cfg;
}

void BM_SimulateDataset(benchmark::State& state) {
  const SimConfig cfg = bench_config(ModelKind::multiplicative, state.range(0));
  for (auto _ : state) {
    Dataset data = simulate_dataset(cfg);
    benchmark::DoNotOptimize(data);
  }
}
BENCHMARK(BM_SimulateDataset)->Arg(100)->Arg(1000);

void BM_BuildDesign(benchmark::State& state) {
  const Dataset data = simulate_dataset(bench_config(ModelKind::multiplicative, state.range(0)));
  for (auto _ : state) {
    StratifiedDesign design = build_design(data);
    benchmark::DoNotOptimize(design);
  }
}
BENCHMARK(BM_BuildDesign)->Arg(100)->Arg(1000);

void BM_AssembleAdditive(benchmark::State& state) {
  const Dataset data = simulate_dataset(bench_config(ModelKind::additive, state.range(0)));
  const StratifiedDesign design = build_design(data);
  for (auto _ : state) {
    AdditiveSystem sys = assemble_additive(design, data);
    benchmark::DoNotOptimize(sys);
  }
}
BENCHMARK(BM_AssembleAdditive)->Arg(100)->Arg(1000);

void BM_MultGradient(benchmark::State& state) {
  const Dataset data = simulate_dataset(bench_config(ModelKind::multiplicative, state.range(0)));
  const StratifiedDesign design = build_design(data);
  const CoefMatrix beta = CoefMatrix::Constant(4, 5, 0.2);
  for (auto _ : state) {
    double loss;
    CoefMatrix grad;
    loss_and_gradient(design, data, beta, &loss, &grad);
    benchmark::DoNotOptimize(grad);
  }
}
BENCHMARK(BM_MultGradient)->Arg(100)->Arg(1000);

void BM_FitTvAdditive(benchmark::State& state) {
  const Dataset data = simulate_dataset(bench_config(ModelKind::additive, state.range(0)));
  const AdditiveSystem sys = assemble_additive(build_design(data), data);
  PenaltyConfig cfg;
  cfg.lambda = 0.02 * state.range(0);
  for (auto _ : state) {
    FitResult fit = fit_tv_additive(sys, cfg);
    benchmark::DoNotOptimize(fit);
  }
}
BENCHMARK(BM_FitTvAdditive)->Arg(100)->Arg(1000);

void BM_FitTvMult(benchmark::State& state) {
  const Dataset data =
      simulate_dataset(bench_config(ModelKind::multiplicative, state.range(0)));
  const StratifiedDesign design = build_design(data);
  PenaltyConfig cfg;
  cfg.lambda = 0.005 * state.range(0);
  for (auto _ : state) {
    FitResult fit = fit_tv_mult(design, data, cfg);
    benchmark::DoNotOptimize(fit);
  }
}
BENCHMARK(BM_FitTvMult)->Arg(100)->Arg(500);

}  // namespace

BENCHMARK_MAIN();
