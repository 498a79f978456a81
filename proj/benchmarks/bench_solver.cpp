#include <benchmark/benchmark.h>

#include <array>
#include <random>

#include "tsode/cells.hpp"
#include "tsode/odesolver.hpp"

using namespace tsode;

namespace {

OdeFunc linear_decay(std::size_t dim) {
    std::mt19937_64 rng(3);
    const Tensor rates = Tensor::uniform({dim}, -1.0, 0.0, rng);
    return {[rates](const Tensor& y, double) { return mul(rates, y); }, {}};
}

void BM_SolveForward(benchmark::State& state) {
    const SolverMethod method = state.range(0) == 0 ? SolverMethod::euler : SolverMethod::rk4;
    const OdeFunc f = linear_decay(16);
    std::mt19937_64 rng(4);
    const Tensor y0 = Tensor::uniform({16}, 0.5, 1.5, rng);
    const std::array<double, 2> grid{0.0, 1.0};
    const SolverSpec spec{method, 0.01, GradientMode::discretize}; // 100 steps
    for (auto _ : state) {
        benchmark::DoNotOptimize(solve(f, y0, grid, spec));
    }
    state.SetItemsProcessed(state.iterations() * 100);
    state.SetLabel(to_string(method));
}
BENCHMARK(BM_SolveForward)->Arg(0)->Arg(1);

void BM_GatedDerivativeGradients(benchmark::State& state) {
    const GradientMode mode =
        state.range(0) == 0 ? GradientMode::discretize : GradientMode::adjoint;
    std::mt19937_64 rng(5);
    CellParams cell = CellParams::init(4, 8, rng, true, false);
    OdeFunc f{[cell](const Tensor& y, double t) { return grud_derivative(y, t, cell); },
              {cell.reset_x, cell.reset_h, cell.reset_m, cell.reset_b, cell.update_x,
               cell.update_h, cell.update_m, cell.update_b, cell.cand_x, cell.cand_h, cell.cand_m,
               cell.cand_b}};
    Tensor y0 = Tensor::uniform({16}, -1.0, 1.0, rng, true);
    const std::array<double, 2> grid{0.0, 1.0};
    const SolverSpec spec{SolverMethod::rk4, 0.1, mode};
    for (auto _ : state) {
        Graph graph;
        auto scope = graph.activate();
        const Tensor y1 = solve(f, y0, grid, spec).back();
        graph.backward(sum(y1));
        y0.zero_grad();
        for (const Tensor& p : f.params) p.zero_grad();
    }
    state.SetLabel(to_string(mode));
}
BENCHMARK(BM_GatedDerivativeGradients)->Arg(0)->Arg(1);

} // namespace
