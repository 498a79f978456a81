#include <benchmark/benchmark.h>

#include <random>

#include "tsode/tensor.hpp"

using namespace tsode;

namespace {

void BM_MatvecForward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(1);
    const Tensor a = Tensor::uniform({n, n}, -1.0, 1.0, rng);
    const Tensor x = Tensor::uniform({n}, -1.0, 1.0, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(matvec(a, x));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}
BENCHMARK(BM_MatvecForward)->Arg(8)->Arg(32)->Arg(128);

void BM_MatvecTrainStep(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(1);
    Tensor a = Tensor::uniform({n, n}, -1.0, 1.0, rng, true);
    const Tensor x = Tensor::uniform({n}, -1.0, 1.0, rng);
    for (auto _ : state) {
        Graph graph;
        auto scope = graph.activate();
        Tensor loss = sum(tanh(matvec(a, x)));
        graph.backward(loss);
        a.zero_grad();
    }
}
BENCHMARK(BM_MatvecTrainStep)->Arg(8)->Arg(32)->Arg(128);

void BM_ElementwiseChain(benchmark::State& state) {
    std::mt19937_64 rng(2);
    Tensor a = Tensor::uniform({64}, -1.0, 1.0, rng, true);
    const Tensor b = Tensor::uniform({64}, -1.0, 1.0, rng);
    for (auto _ : state) {
        Graph graph;
        auto scope = graph.activate();
        Tensor loss = sum(mul(sigmoid(a), tanh(add(a, b))));
        graph.backward(loss);
        a.zero_grad();
    }
}
BENCHMARK(BM_ElementwiseChain);

} // namespace
