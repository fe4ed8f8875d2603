#include <benchmark/benchmark.h>

#include "themis/coverage.hpp"
#include "themis/fuzzer.hpp"
#include "themis/mcmc.hpp"
#include "themis/model.hpp"

using namespace themis;

namespace {

Tensor random_input(const Shape& shape, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t(shape);
    for (auto& v : t.values()) v = rng.uniform();
    return t;
}

void BM_ForwardMlp(benchmark::State& state) {
    const Model m = make_mlp({784, 64, 10}, 1);
    const auto x = random_input({784}, 2);
    for (auto _ : state) benchmark::DoNotOptimize(forward(m, x));
}
BENCHMARK(BM_ForwardMlp);

void BM_ForwardLenet1(benchmark::State& state) {
    const Model m = make_lenet1(1);
    const auto x = random_input({1, 28, 28}, 2);
    for (auto _ : state) benchmark::DoNotOptimize(forward(m, x));
}
BENCHMARK(BM_ForwardLenet1);

void BM_ObjectiveGradientLenet1(benchmark::State& state) {
    const Model m = make_lenet1(1);
    const auto x = random_input({1, 28, 28}, 2);
    auto y = x;
    for (auto& v : y.values()) v = std::min(1.0, v + 0.01);
    const auto clean = forward(m, x);
    std::vector<std::size_t> ids(m.num_neurons());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    for (auto _ : state) benchmark::DoNotOptimize(objective_gradient(m, clean, y, ids));
}
BENCHMARK(BM_ObjectiveGradientLenet1);

void BM_FitPosterior(benchmark::State& state) {
    Rng rng(3);
    std::vector<double> xs(static_cast<std::size_t>(state.range(0)));
    for (auto& v : xs) v = rng.normal(1.0, 0.1);
    std::uint64_t seed = 0;
    for (auto _ : state) benchmark::DoNotOptimize(fit_posterior(xs, McmcConfig{}, ++seed));
}
BENCHMARK(BM_FitPosterior)->Arg(100)->Arg(10000);

void BM_Coverage(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    SensitivityStore store(n);
    Rng rng(4);
    std::vector<double> row(n);
    for (int i = 0; i < 200; ++i) {
        for (auto& v : row) v = std::abs(rng.normal(0.0, 0.01));
        store.append(row);
    }
    CoverageConfig cfg;
    for (auto _ : state) benchmark::DoNotOptimize(compute_coverage(store, cfg, 0));
}
BENCHMARK(BM_Coverage)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);

void BM_SampleNeurons(benchmark::State& state) {
    Rng rng(5);
    std::vector<double> v(10000);
    for (auto& x : v) x = rng.uniform();
    for (auto _ : state) benchmark::DoNotOptimize(sample_neurons(v, 1000));
}
BENCHMARK(BM_SampleNeurons);

}  // namespace

BENCHMARK_MAIN();
