#include <doctest.h>

#include <cmath>
#include <random>
#include <thread>

#include "oracles.hpp"
#include "tsode/tensor.hpp"

using namespace tsode;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
    return Tensor::uniform(std::move(shape), -2.0, 2.0, rng, /*requires_grad=*/true);
}

/// Checks every entry of every leaf against central finite differences of
/// the given scalar-producing forward pass.
template <typename Forward>
void check_gradients(Forward&& forward, std::vector<Tensor> leaves, double tol_rel = 1e-4,
                     double tol_abs = 1e-6) {
    for (Tensor& leaf : leaves) leaf.zero_grad();
    Graph graph;
    {
        auto scope = graph.activate();
        Tensor loss = forward();
        graph.backward(loss);
    }
    auto eval = [&]() {
        NoGradScope no_grad;
        return forward().value();
    };
    for (Tensor& leaf : leaves) {
        const std::vector<double> analytic = leaf.grad_or_zeros();
        auto values = leaf.mutable_values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double numeric = oracles::fd_central(eval, &values[i]);
            const double err = std::abs(analytic[i] - numeric);
            const double bound = std::max(tol_rel * std::max(std::abs(analytic[i]),
                                                             std::abs(numeric)),
                                          tol_abs);
            CAPTURE(i);
            CAPTURE(analytic[i]);
            CAPTURE(numeric);
            CHECK(err <= bound);
        }
        leaf.zero_grad();
    }
}

} // namespace

TEST_SUITE("tensor") {

TEST_CASE("matmul identity and 1x2 times 2x1") {
    const Tensor identity = Tensor::from_matrix(2, 2, {1, 0, 0, 1});
    const Tensor a = Tensor::from_matrix(2, 2, {1, 2, 3, 4});
    const Tensor out = matmul(identity, a);
    CHECK(out.values()[0] == 1.0);
    CHECK(out.values()[1] == 2.0);
    CHECK(out.values()[2] == 3.0);
    CHECK(out.values()[3] == 4.0);

    const Tensor row = Tensor::from_matrix(1, 2, {1, 2});
    const Tensor col = Tensor::from_matrix(2, 1, {3, 4});
    CHECK(matmul(row, col).value() == 11.0);
}

TEST_CASE("matmul rejects mismatched shapes naming both") {
    const Tensor a = Tensor::from_matrix(2, 3, std::vector<double>(6, 1.0));
    const Tensor b = Tensor::from_matrix(2, 2, std::vector<double>(4, 1.0));
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), ShapeError);
}

TEST_CASE("elementwise fixed points") {
    CHECK(sigmoid(Tensor::scalar(0.0)).value() == 0.5);
    CHECK(tanh(Tensor::scalar(0.0)).value() == 0.0);
    const Tensor g = exp(neg(relu(Tensor::scalar(std::log(2.0)))));
    CHECK(g.value() == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("elementwise shape mismatch") {
    const Tensor a = Tensor::from_vector({1, 2, 3});
    const Tensor b = Tensor::from_vector({1, 2});
    CHECK_THROWS_AS(add(a, b), ShapeError);
    CHECK_THROWS_AS(mul(a, b), ShapeError);
}

TEST_CASE("backward of sum is ones; of sum of squares is 2x") {
    Graph graph;
    auto scope = graph.activate();
    Tensor x = Tensor::from_vector({1.0, 2.0}, true);
    graph.backward(sum(x));
    CHECK(x.grad()[0] == 1.0);
    CHECK(x.grad()[1] == 1.0);

    x.zero_grad();
    Graph graph2;
    auto scope2 = graph2.activate();
    graph2.backward(sum(mul(x, x)));
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == 4.0);
}

TEST_CASE("backward rejects non-scalar loss") {
    Graph graph;
    auto scope = graph.activate();
    Tensor x = Tensor::from_vector({1.0, 2.0}, true);
    CHECK_THROWS_AS(graph.backward(add(x, x)), ContractError);
}

TEST_CASE("repeated backward accumulates") {
    Graph graph;
    auto scope = graph.activate();
    Tensor x = Tensor::from_vector({3.0}, true);
    Tensor loss = sum(mul(x, x));
    graph.backward(loss);
    graph.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(12.0)); // 2 * (2x)
}

TEST_CASE("no recording without an active graph") {
    Tensor x = Tensor::from_vector({1.0}, true);
    Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("relu subgradient at zero is zero") {
    Graph graph;
    auto scope = graph.activate();
    Tensor x = Tensor::from_vector({0.0, -1.0, 2.0}, true);
    graph.backward(sum(relu(x)));
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 0.0);
    CHECK(x.grad()[2] == 1.0);
}

TEST_CASE("exp clamps its argument") {
    const Tensor big = exp(Tensor::scalar(1000.0));
    CHECK(std::isfinite(big.value()));
    const Tensor small = exp(Tensor::scalar(-1000.0));
    CHECK(small.value() > 0.0);
}

TEST_CASE("gradient of sum(A*B) w.r.t. both matches finite differences") {
    std::mt19937_64 rng(42);
    Tensor a = random_tensor({3, 3}, rng);
    Tensor b = random_tensor({3, 3}, rng);
    check_gradients([&]() { return sum(matmul(a, b)); }, {a, b});
}

TEST_CASE("every differentiable op matches central finite differences") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor a = random_tensor({4}, rng);
        Tensor b = random_tensor({4}, rng);
        const Tensor w = Tensor::uniform({4}, -1.0, 1.0, rng);

        check_gradients([&]() { return sum(mul(add(a, b), w)); }, {a, b});
        check_gradients([&]() { return sum(mul(sub(a, b), w)); }, {a, b});
        check_gradients([&]() { return sum(mul(mul(a, b), w)); }, {a, b});
        check_gradients([&]() { return sum(mul(sigmoid(a), w)); }, {a});
        check_gradients([&]() { return sum(mul(tanh(a), w)); }, {a});
        check_gradients([&]() { return sum(mul(exp(a), w)); }, {a});
        check_gradients([&]() { return sum(mul(softplus(a), w)); }, {a});
        check_gradients([&]() { return sum(mul(neg(a), w)); }, {a});
        check_gradients([&]() { return dot(a, b); }, {a, b});
        check_gradients([&]() { return sum(mul(scale(a, 1.7), w)); }, {a});
        check_gradients([&]() { return sum(mul(add_scalar(a, 0.3), w)); }, {a});
        check_gradients([&]() { return sum(mul(rsub_scalar(1.0, a), w)); }, {a});
        check_gradients([&]() { return sum(mul(slice(concat({a, b}), 2, 4), w)); }, {a, b});

        // keep relu inputs away from the kink, where finite differences lie
        Tensor c = Tensor::from_vector({0.5, -1.2, 2.0, -0.4}, true);
        check_gradients([&]() { return sum(mul(relu(c), w)); }, {c});

        Tensor m = random_tensor({3, 4}, rng);
        Tensor v = random_tensor({4}, rng);
        const Tensor w3 = Tensor::uniform({3}, -1.0, 1.0, rng);
        check_gradients([&]() { return sum(mul(matvec(m, v), w3)); }, {m, v});
    }
}

TEST_CASE("gradient accumulation is linear in the loss") {
    std::mt19937_64 rng(11);
    Tensor x = random_tensor({5}, rng);
    const Tensor w = Tensor::uniform({5}, -1.0, 1.0, rng);
    const double alpha = 0.7, beta = -1.3;

    auto grad_of = [&](auto&& loss_fn) {
        x.zero_grad();
        Graph graph;
        auto scope = graph.activate();
        graph.backward(loss_fn());
        return x.grad_or_zeros();
    };
    auto loss1 = [&]() { return sum(mul(sigmoid(x), w)); };
    auto loss2 = [&]() { return sum(mul(tanh(x), x)); };
    const std::vector<double> g1 = grad_of(loss1);
    const std::vector<double> g2 = grad_of(loss2);
    const std::vector<double> combined =
        grad_of([&]() { return add(scale(loss1(), alpha), scale(loss2(), beta)); });
    for (std::size_t i = 0; i < combined.size(); ++i)
        CHECK(combined[i] == doctest::Approx(alpha * g1[i] + beta * g2[i]).epsilon(1e-12));
}

TEST_CASE("independent graphs on separate threads do not interfere") {
    auto worker = [](std::uint64_t seed, std::vector<double>* out) {
        std::mt19937_64 rng(seed);
        Tensor x = Tensor::uniform({16}, -1.0, 1.0, rng, true);
        const Tensor w = Tensor::uniform({16}, -1.0, 1.0, rng);
        for (int i = 0; i < 50; ++i) {
            Graph graph;
            auto scope = graph.activate();
            graph.backward(sum(mul(sigmoid(x), w)));
        }
        *out = x.grad_or_zeros();
    };
    std::vector<double> a_threaded, b_threaded, a_serial, b_serial;
    {
        std::thread ta(worker, 1, &a_threaded);
        std::thread tb(worker, 2, &b_threaded);
        ta.join();
        tb.join();
    }
    worker(1, &a_serial);
    worker(2, &b_serial);
    CHECK(a_threaded == a_serial);
    CHECK(b_threaded == b_serial);
}

TEST_CASE("finite forward on finite inputs") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor a = Tensor::uniform({8}, -2.0, 2.0, rng);
        const Tensor b = Tensor::uniform({8}, -2.0, 2.0, rng);
        for (const Tensor& out :
             {add(a, b), mul(a, b), sigmoid(a), tanh(a), exp(a), relu(a), softplus(a)})
            CHECK(all_finite(out.values()));
    }
}

} // TEST_SUITE
