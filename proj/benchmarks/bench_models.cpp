#include <benchmark/benchmark.h>

#include <random>

#include "tsode/cells.hpp"
#include "tsode/data.hpp"
#include "tsode/models.hpp"
#include "tsode/training.hpp"

using namespace tsode;

namespace {

void BM_GrudStep(benchmark::State& state) {
    std::mt19937_64 rng(6);
    CellParams cell = CellParams::init(4, 16, rng, true, true);
    const std::vector<double> x{0.4, -0.2, 0.8, 0.1};
    const std::vector<double> m{1.0, 0.0, 1.0, 0.0};
    const std::vector<double> delta{0.5, 1.5, 0.5, 2.5};
    const std::vector<double> means(4, 0.0);
    for (auto _ : state) {
        GrudState grud_state{Tensor::zeros({16}), means};
        benchmark::DoNotOptimize(grud_step(x, m, delta, grud_state, cell, means));
    }
}
BENCHMARK(BM_GrudStep);

TimeSeriesBatch bench_batch() {
    SyntheticSpec spec;
    spec.n_series = 16;
    spec.n_vars = 4;
    spec.mean_length = 16;
    spec.missing_rate0 = 0.2;
    spec.missing_rate1 = 0.6;
    spec.seed = 7;
    return generate_synthetic(spec);
}

void BM_ModelForward(benchmark::State& state) {
    const auto kind = static_cast<ModelKind>(state.range(0));
    const TimeSeriesBatch batch = bench_batch();
    ModelSpec spec;
    spec.kind = kind;
    spec.hidden_dim = 16;
    spec.solver = {SolverMethod::euler, default_step_size(batch), GradientMode::discretize};
    Model model(spec, batch.n_vars, 1);
    for (auto _ : state) {
        benchmark::DoNotOptimize(model.predict(batch));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch.size()));
    state.SetLabel(to_string(kind));
}
BENCHMARK(BM_ModelForward)
    ->Arg(static_cast<int>(ModelKind::gru))
    ->Arg(static_cast<int>(ModelKind::grud))
    ->Arg(static_cast<int>(ModelKind::ode_rnn))
    ->Arg(static_cast<int>(ModelKind::ode_grud))
    ->Arg(static_cast<int>(ModelKind::ext_ode_grud));

void BM_ModelTrainStep(benchmark::State& state) {
    const auto kind = static_cast<ModelKind>(state.range(0));
    const TimeSeriesBatch batch = bench_batch();
    ModelSpec spec;
    spec.kind = kind;
    spec.hidden_dim = 16;
    spec.solver = {SolverMethod::euler, default_step_size(batch), GradientMode::discretize};
    Model model(spec, batch.n_vars, 1);
    const std::vector<int> labels = batch.labels();
    TrainConfig config;
    Optimizer optimizer(model.parameters(), config);
    for (auto _ : state) {
        Graph graph;
        {
            auto scope = graph.activate();
            const std::vector<Tensor> logits = model.forward(batch);
            const Tensor loss = bce_loss(concat(std::span<const Tensor>(logits)), labels);
            graph.backward(loss);
        }
        optimizer.step();
    }
    state.SetLabel(to_string(kind));
}
BENCHMARK(BM_ModelTrainStep)
    ->Arg(static_cast<int>(ModelKind::grud))
    ->Arg(static_cast<int>(ModelKind::ode_grud))
    ->Arg(static_cast<int>(ModelKind::ext_ode_grud));

} // namespace
