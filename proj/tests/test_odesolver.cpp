#include <doctest.h>

#include <array>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "tsode/cells.hpp"
#include "tsode/odesolver.hpp"

using namespace tsode;

namespace {

OdeFunc zero_dynamics() {
    return {[](const Tensor& y, double) { return Tensor::zeros(y.shape()); }, {}};
}

/// dy/dt = w * y with a trainable scalar rate.
OdeFunc linear_dynamics(const Tensor& rate) {
    OdeFunc f;
    Tensor w = rate;
    f.fn = [w](const Tensor& y, double) { return mul(w, y); };
    f.params = {rate};
    return f;
}

} // namespace

TEST_SUITE("odesolver") {

TEST_CASE("zero dynamics keep the state constant") {
    const Tensor y0 = Tensor::from_vector({4.0, -1.5});
    const std::array<double, 4> grid{0.0, 0.3, 1.1, 2.0};
    const auto out = solve(zero_dynamics(), y0, grid, {SolverMethod::rk4, 0.25});
    REQUIRE(out.size() == 4);
    CHECK(out[0].same_storage(y0));
    for (const Tensor& y : out) {
        CHECK(y.values()[0] == 4.0);
        CHECK(y.values()[1] == -1.5);
    }
}

TEST_CASE("euler on y'=y with two half steps gives 2.25") {
    const Tensor rate = Tensor::from_vector({1.0});
    const Tensor y0 = Tensor::from_vector({1.0});
    const std::array<double, 2> grid{0.0, 1.0};
    const auto out = solve(linear_dynamics(rate), y0, grid, {SolverMethod::euler, 0.5});
    CHECK(out.back().value() == doctest::Approx(2.25).epsilon(1e-15));
}

TEST_CASE("interval splits into ceil(gap/step) uniform steps") {
    // gap 1, step 0.4 -> 3 euler steps of 1/3: (1 + 1/3)^3
    const Tensor rate = Tensor::from_vector({1.0});
    const Tensor y0 = Tensor::from_vector({1.0});
    const std::array<double, 2> grid{0.0, 1.0};
    const auto out = solve(linear_dynamics(rate), y0, grid, {SolverMethod::euler, 0.4});
    const double expected = std::pow(1.0 + 1.0 / 3.0, 3);
    CHECK(out.back().value() == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("rk4 with step 0.1 reproduces e to 1e-5") {
    const Tensor rate = Tensor::from_vector({1.0});
    const Tensor y0 = Tensor::from_vector({1.0});
    const std::array<double, 2> grid{0.0, 1.0};
    const auto out = solve(linear_dynamics(rate), y0, grid, {SolverMethod::rk4, 0.1});
    CHECK(std::abs(out.back().value() - std::exp(1.0)) < 1e-5);
}

TEST_CASE("non-increasing grid is rejected") {
    const Tensor y0 = Tensor::from_vector({1.0});
    const std::array<double, 2> grid{1.0, 1.0};
    CHECK_THROWS_AS(solve(zero_dynamics(), y0, grid, {SolverMethod::euler, 0.1}),
                    ValidationError);
}

TEST_CASE("divergence reports the time reached") {
    OdeFunc quadratic{[](const Tensor& y, double) { return mul(y, y); }, {}};
    const Tensor y0 = Tensor::from_vector({10.0});
    const std::array<double, 2> grid{0.0, 100.0};
    CHECK_THROWS_WITH_AS(solve(quadratic, y0, grid, {SolverMethod::euler, 1.0}),
                         doctest::Contains("t="), DivergenceError);
}

TEST_CASE("convergence orders on exponential growth and decay") {
    const ScalarOdeProblem growth{[](double y, double) { return y; },
                                  [](double t) { return std::exp(t); }, 1.0, 1.0};
    const ScalarOdeProblem decay{[](double y, double) { return -y; },
                                 [](double t) { return std::exp(-t); }, 1.0, 1.0};
    const double euler_order = convergence_order(SolverMethod::euler, growth);
    CHECK(euler_order > 0.8);
    CHECK(euler_order < 1.2);
    const double rk4_order = convergence_order(SolverMethod::rk4, growth);
    CHECK(rk4_order > 3.8);
    CHECK(rk4_order < 4.2);
    const double rk4_decay = convergence_order(SolverMethod::rk4, decay);
    CHECK(rk4_decay > 3.8);
    CHECK(rk4_decay < 4.2);
}

TEST_CASE("discrete schemes are linear maps for linear dynamics") {
    std::mt19937_64 rng(13);
    const Tensor rates = Tensor::uniform({3}, -1.0, 1.0, rng);
    OdeFunc f{[rates](const Tensor& y, double) { return mul(rates, y); }, {}};
    const std::array<double, 3> grid{0.0, 0.7, 1.9};
    for (SolverMethod method : {SolverMethod::euler, SolverMethod::rk4}) {
        const SolverSpec spec{method, 0.2};
        const Tensor u = Tensor::uniform({3}, -2.0, 2.0, rng);
        const Tensor v = Tensor::uniform({3}, -2.0, 2.0, rng);
        const double a = 0.6, b = -1.7;
        const Tensor combined = add(scale(u, a), scale(v, b));
        const Tensor yu = solve(f, u, grid, spec).back();
        const Tensor yv = solve(f, v, grid, spec).back();
        const Tensor yc = solve(f, combined, grid, spec).back();
        for (std::size_t i = 0; i < 3; ++i)
            CHECK(yc.values()[i] ==
                  doctest::Approx(a * yu.values()[i] + b * yv.values()[i]).epsilon(1e-10));
    }
}

TEST_CASE("adjoint of zero dynamics sums the injected gradients") {
    const Tensor y0 = Tensor::from_vector({1.0, 2.0});
    const std::array<double, 3> grid{0.0, 1.0, 2.0};
    const std::vector<std::vector<double>> loss_grads = {{0.5, 0.0}, {1.0, 1.0}, {0.25, -2.0}};
    const AdjointResult adj =
        grad_adjoint(zero_dynamics(), y0, grid, loss_grads, {SolverMethod::rk4, 0.5});
    CHECK(adj.y0_grad[0] == doctest::Approx(1.75));
    CHECK(adj.y0_grad[1] == doctest::Approx(-1.0));
}

TEST_CASE("adjoint rejects a mismatched grid") {
    const Tensor y0 = Tensor::from_vector({1.0});
    const std::array<double, 2> grid{0.0, 1.0};
    const std::vector<std::vector<double>> too_few = {{1.0}};
    CHECK_THROWS_AS(grad_adjoint(zero_dynamics(), y0, grid, too_few, {SolverMethod::rk4, 0.5}),
                    ContractError);
}

TEST_CASE("adjoint matches discretize gradients for linear dynamics") {
    std::mt19937_64 rng(29);
    Tensor rate = Tensor::uniform({1}, -1.0, 1.0, rng, true);
    Tensor y0 = Tensor::uniform({1}, 0.5, 1.5, rng, true);
    const OdeFunc f = linear_dynamics(rate);
    const std::array<double, 3> grid{0.0, 0.5, 1.0};
    const SolverSpec fine{SolverMethod::rk4, 0.02};
    const std::vector<std::vector<double>> weights = {{0.0}, {0.7}, {1.3}};

    rate.zero_grad();
    y0.zero_grad();
    {
        Graph graph;
        auto scope = graph.activate();
        const auto out = solve(f, y0, grid, fine);
        Tensor loss = Tensor::scalar(0.0);
        for (std::size_t i = 0; i < out.size(); ++i)
            loss = add(loss, scale(sum(out[i]), weights[i][0]));
        graph.backward(loss);
    }
    const double discretize_y0 = y0.grad()[0];
    const double discretize_rate = rate.grad()[0];

    const AdjointResult adj = grad_adjoint(f, y0, grid, weights, fine);
    CHECK(adj.y0_grad[0] == doctest::Approx(discretize_y0).epsilon(1e-6));
    CHECK(adj.param_grads[0][0] == doctest::Approx(discretize_rate).epsilon(1e-6));

    // the same agreement through the recorded adjoint-mode solve
    rate.zero_grad();
    y0.zero_grad();
    {
        Graph graph;
        auto scope = graph.activate();
        SolverSpec adjoint_spec = fine;
        adjoint_spec.gradient_mode = GradientMode::adjoint;
        const auto out = solve(f, y0, grid, adjoint_spec);
        Tensor loss = Tensor::scalar(0.0);
        for (std::size_t i = 0; i < out.size(); ++i)
            loss = add(loss, scale(sum(out[i]), weights[i][0]));
        graph.backward(loss);
    }
    CHECK(y0.grad()[0] == doctest::Approx(discretize_y0).epsilon(1e-6));
    CHECK(rate.grad()[0] == doctest::Approx(discretize_rate).epsilon(1e-6));
}

TEST_CASE("adjoint matches finite differences for gated-cell dynamics") {
    std::mt19937_64 rng(57);
    CellParams cell = CellParams::init(2, 3, rng, /*with_mask_terms=*/true, /*with_decay=*/false);
    OdeFunc f{[cell](const Tensor& y, double t) { return grud_derivative(y, t, cell); },
              {cell.reset_x, cell.reset_h, cell.reset_m, cell.reset_b, cell.update_x,
               cell.update_h, cell.update_m, cell.update_b, cell.cand_x, cell.cand_h, cell.cand_m,
               cell.cand_b}};
    Tensor y0 = Tensor::uniform({7}, -1.0, 1.0, rng, true);
    const std::array<double, 2> grid{0.0, 1.0};
    const SolverSpec spec{SolverMethod::rk4, 0.25};
    std::vector<std::vector<double>> weights(2, std::vector<double>(7, 0.0));
    for (double& w : weights[1]) w = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);

    auto loss_value = [&]() {
        NoGradScope no_grad;
        const auto out = solve(f, y0, grid, spec);
        double total = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i)
            for (std::size_t k = 0; k < 7; ++k) total += weights[i][k] * out[i].values()[k];
        return total;
    };
    const AdjointResult adj = grad_adjoint(f, y0, grid, weights, spec);

    auto y_vals = y0.mutable_values();
    for (std::size_t i = 0; i < y_vals.size(); ++i) {
        const double numeric = oracles::fd_central(loss_value, &y_vals[i]);
        CHECK(adj.y0_grad[i] ==
              doctest::Approx(numeric).epsilon(1e-3).scale(std::max(1.0, std::abs(numeric))));
    }
    for (std::size_t j = 0; j < f.params.size(); ++j) {
        auto p_vals = f.params[j].mutable_values();
        for (std::size_t i = 0; i < p_vals.size(); i += 3) { // sample every third entry
            const double numeric = oracles::fd_central(loss_value, &p_vals[i]);
            CHECK(adj.param_grads[j][i] ==
                  doctest::Approx(numeric).epsilon(1e-3).scale(std::max(1.0, std::abs(numeric))));
        }
    }
}

} // TEST_SUITE
