#include <doctest.h>

#include <array>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "tsode/cells.hpp"
#include "tsode/odesolver.hpp"

using namespace tsode;

namespace {

CellParams zero_cell(std::size_t d, std::size_t h, bool mask_terms, bool decay) {
    std::mt19937_64 rng(0);
    CellParams p = CellParams::init(d, h, rng, mask_terms, decay);
    std::vector<NamedTensor> all;
    p.collect(all, "");
    for (NamedTensor& t : all)
        for (double& v : t.tensor.mutable_values()) v = 0.0;
    return p;
}

/// Direct transcription of the gated update with mask terms for one step.
std::vector<double> manual_masked_step(std::span<const double> x, std::span<const double> m,
                                       std::span<const double> h, const CellParams& p) {
    const std::size_t d = p.input_dim, hd = p.hidden_dim;
    auto lin = [&](const Tensor& wx, const Tensor& wh, const Tensor& wm, const Tensor& b,
                   std::span<const double> hv, std::size_t i) {
        double acc = b.values()[i];
        for (std::size_t j = 0; j < d; ++j)
            acc += wx.values()[i * d + j] * x[j] + wm.values()[i * d + j] * m[j];
        for (std::size_t j = 0; j < hd; ++j) acc += wh.values()[i * hd + j] * hv[j];
        return acc;
    };
    std::vector<double> r(hd), z(hd), out(hd);
    for (std::size_t i = 0; i < hd; ++i) {
        r[i] = oracles::sigmoid(lin(p.reset_x, p.reset_h, p.reset_m, p.reset_b, h, i));
        z[i] = oracles::sigmoid(lin(p.update_x, p.update_h, p.update_m, p.update_b, h, i));
    }
    std::vector<double> rh(hd);
    for (std::size_t j = 0; j < hd; ++j) rh[j] = r[j] * h[j];
    for (std::size_t i = 0; i < hd; ++i) {
        const double c = std::tanh(lin(p.cand_x, p.cand_h, p.cand_m, p.cand_b, rh, i));
        out[i] = (1.0 - z[i]) * h[i] + z[i] * c;
    }
    return out;
}

} // namespace

TEST_SUITE("cells") {

TEST_CASE("gru step with zero parameters halves the hidden state") {
    const CellParams p = zero_cell(2, 3, false, false);
    const Tensor x = Tensor::from_vector({0.7, -0.2});
    const Tensor h = Tensor::from_vector({1.0, -2.0, 0.5});
    const Tensor out = gru_step(x, h, p);
    CHECK(out.values()[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(out.values()[1] == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(out.values()[2] == doctest::Approx(0.25).epsilon(1e-15));

    const Tensor zeros = Tensor::zeros({3});
    const Tensor out0 = gru_step(Tensor::zeros({2}), zeros, p);
    for (double v : out0.values()) CHECK(v == 0.0);
}

TEST_CASE("gru step gradient matches finite differences") {
    std::mt19937_64 rng(3);
    CellParams p = CellParams::init(2, 3, rng, false, false);
    const Tensor x = Tensor::uniform({2}, -1.0, 1.0, rng);
    const Tensor h0 = Tensor::uniform({3}, -1.0, 1.0, rng);
    const Tensor w = Tensor::uniform({3}, -1.0, 1.0, rng);
    std::vector<NamedTensor> params;
    p.collect(params, "");

    auto loss_value = [&]() {
        NoGradScope no_grad;
        return sum(mul(gru_step(x, h0, p), w)).value();
    };
    for (NamedTensor& t : params) t.tensor.zero_grad();
    Graph graph;
    {
        auto scope = graph.activate();
        graph.backward(sum(mul(gru_step(x, h0, p), w)));
    }
    for (NamedTensor& t : params) {
        const std::vector<double> analytic = t.tensor.grad_or_zeros();
        auto values = t.tensor.mutable_values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double numeric = oracles::fd_central(loss_value, &values[i]);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-2});
            CAPTURE(t.name);
            CHECK(std::abs(analytic[i] - numeric) / denom < 1e-4);
        }
    }
}

TEST_CASE("grud step with no missingness reduces to the masked gated update") {
    std::mt19937_64 rng(11);
    CellParams p = CellParams::init(2, 3, rng, true, true);
    // decay heads zero -> gamma = 1 exactly
    for (Tensor* t : {&p.input_decay.weight, &p.input_decay.bias, &p.hidden_decay.weight,
                      &p.hidden_decay.bias})
        for (double& v : t->mutable_values()) v = 0.0;

    const std::vector<double> x{0.4, -0.9};
    const std::vector<double> m{1.0, 1.0};
    const std::vector<double> delta{0.0, 0.0};
    const std::vector<double> means{0.1, 0.2};
    std::vector<double> h0{0.3, -0.5, 0.8};

    GrudState state{Tensor::from_vector(std::vector<double>(h0)), means};
    const Tensor out = grud_step(x, m, delta, state, p, means);
    const std::vector<double> expected = manual_masked_step(x, m, h0, p);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(out.values()[i] == doctest::Approx(expected[i]).epsilon(1e-15));
    CHECK(state.last_observed == x);
}

TEST_CASE("vanished input trust falls back to the training mean") {
    std::mt19937_64 rng(13);
    CellParams strong = CellParams::init(2, 3, rng, true, true);
    std::mt19937_64 rng2(13);
    CellParams neutral = CellParams::init(2, 3, rng2, true, true); // identical gates
    for (double& v : strong.input_decay.weight.mutable_values()) v = 100.0;
    // neutral keeps gamma_x = 1 but starts from last == mean, same x_hat

    const std::vector<double> x{9.0, 9.0};
    const std::vector<double> m{0.0, 0.0};
    const std::vector<double> delta{1.0, 1.0};
    const std::vector<double> means{0.3, -0.2};
    const std::vector<double> h0{0.2, 0.1, -0.4};

    GrudState sa{Tensor::from_vector(std::vector<double>(h0)), {5.0, 5.0}};
    GrudState sb{Tensor::from_vector(std::vector<double>(h0)), means};
    const Tensor ha = grud_step(x, m, delta, sa, strong, means);
    const Tensor hb = grud_step(x, m, delta, sb, neutral, means);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(ha.values()[i] == doctest::Approx(hb.values()[i]).epsilon(1e-10));
    // nothing observed: last_observed untouched
    CHECK(sa.last_observed == std::vector<double>{5.0, 5.0});
}

TEST_CASE("grud step gradient matches finite differences") {
    std::mt19937_64 rng(17);
    CellParams p = CellParams::init(2, 3, rng, true, true);
    // small nonzero decay weights so those paths carry gradient
    for (Tensor* t : {&p.input_decay.weight, &p.input_decay.bias, &p.hidden_decay.bias})
        for (double& v : t->mutable_values())
            v = std::uniform_real_distribution<double>(0.05, 0.3)(rng);
    for (double& v : p.hidden_decay.weight.mutable_values())
        v = std::uniform_real_distribution<double>(-0.2, 0.2)(rng);

    const std::vector<double> x{0.4, -0.9};
    const std::vector<double> m{1.0, 0.0};
    const std::vector<double> delta{0.5, 1.5};
    const std::vector<double> means{0.1, 0.2};
    const std::vector<double> h0{0.3, -0.5, 0.8};
    const Tensor w = Tensor::uniform({3}, -1.0, 1.0, rng);

    auto run = [&]() {
        GrudState state{Tensor::from_vector(std::vector<double>(h0)), means};
        return sum(mul(grud_step(x, m, delta, state, p, means), w));
    };
    auto loss_value = [&]() {
        NoGradScope no_grad;
        return run().value();
    };
    std::vector<NamedTensor> params;
    p.collect(params, "");
    for (NamedTensor& t : params) t.tensor.zero_grad();
    Graph graph;
    {
        auto scope = graph.activate();
        graph.backward(run());
    }
    for (NamedTensor& t : params) {
        const std::vector<double> analytic = t.tensor.grad_or_zeros();
        auto values = t.tensor.mutable_values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double numeric = oracles::fd_central(loss_value, &values[i]);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-2});
            CAPTURE(t.name);
            CAPTURE(i);
            CHECK(std::abs(analytic[i] - numeric) / denom < 1e-4);
        }
    }
}

TEST_CASE("gate ranges hold over random inputs") {
    std::mt19937_64 rng(19);
    for (int trial = 0; trial < 30; ++trial) {
        CellParams p = CellParams::init(3, 4, rng, true, true);
        const Tensor y = Tensor::uniform({2 * 3 + 4}, -3.0, 3.0, rng);
        // derivative = (candidate - h) * update, with candidate in (-1,1) and
        // update in (0,1): |dh| < |candidate| + |h| bounded by 1 + |h|
        const Tensor dy = grud_derivative(y, 0.0, p);
        for (std::size_t i = 0; i < 4; ++i) {
            const double h = y.values()[6 + i];
            CHECK(std::abs(dy.values()[6 + i]) < 1.0 + std::abs(h));
        }
        for (std::size_t i = 0; i < 6; ++i) CHECK(dy.values()[i] == 0.0);
    }
}

TEST_CASE("derivative vanishes at the candidate fixed point and closed gate") {
    const CellParams zero = zero_cell(1, 1, true, false);
    // zero params: candidate = 0, update = 0.5 -> dh = -0.5 h
    const Tensor y = Tensor::from_vector({0.3, 1.0, 0.8});
    const Tensor dy = grud_derivative(y, 0.0, zero);
    CHECK(dy.values()[2] == doctest::Approx(-0.4).epsilon(1e-15));

    // h at the candidate value (0) is a fixed point
    const Tensor y_fixed = Tensor::from_vector({0.3, 1.0, 0.0});
    CHECK(grud_derivative(y_fixed, 0.0, zero).values()[2] == 0.0);

    // closing the update gate freezes the state
    CellParams closed = zero_cell(1, 1, true, false);
    closed.update_b.mutable_values()[0] = -45.0;
    const Tensor dy_closed = grud_derivative(y, 0.0, closed);
    CHECK(std::abs(dy_closed.values()[2]) < 1e-15);
}

TEST_CASE("state length must be 2D + H") {
    const CellParams p = zero_cell(2, 3, true, false);
    CHECK_THROWS_AS(grud_derivative(Tensor::zeros({6}), 0.0, p), ContractError);
}

TEST_CASE("one unit euler step equals the discrete update for frozen gates") {
    std::mt19937_64 rng(23);
    CellParams p = CellParams::init(2, 3, rng, true, false);
    const std::vector<double> x{0.5, -0.3};
    const std::vector<double> m{1.0, 0.0};
    std::vector<double> h0{0.2, -0.6, 0.9};

    std::vector<double> y0;
    y0.reserve(x.size() + m.size() + h0.size());
    y0.insert(y0.end(), x.begin(), x.end());
    y0.insert(y0.end(), m.begin(), m.end());
    y0.insert(y0.end(), h0.begin(), h0.end());
    OdeFunc f{[p](const Tensor& y, double t) { return grud_derivative(y, t, p); }, {}};
    const std::array<double, 2> grid{0.0, 1.0};
    const Tensor y1 = solve(f, Tensor::from_vector(y0), grid, {SolverMethod::euler, 1.0}).back();
    const std::vector<double> expected = manual_masked_step(x, m, h0, p);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(y1.values()[4 + i] == doctest::Approx(expected[i]).epsilon(1e-15));
}

TEST_CASE("cell gradients survive twenty random seeds") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        std::mt19937_64 rng(seed);
        CellParams p = CellParams::init(2, 2, rng, true, true);
        // move the decay heads off the relu kink at 0
        std::uniform_real_distribution<double> positive(0.05, 0.5);
        for (Tensor* t : {&p.input_decay.weight, &p.input_decay.bias, &p.hidden_decay.weight,
                          &p.hidden_decay.bias})
            for (double& v : t->mutable_values()) v = positive(rng);
        const std::vector<double> x{0.3, -0.1};
        const std::vector<double> m{1.0, 0.0};
        const std::vector<double> delta{0.4, 1.1};
        const std::vector<double> means{0.0, 0.1};
        const std::vector<double> h0{0.25, -0.4};
        const Tensor w = Tensor::uniform({2}, -1.0, 1.0, rng);
        auto run = [&]() {
            GrudState state{Tensor::from_vector(std::vector<double>(h0)), means};
            return sum(mul(grud_step(x, m, delta, state, p, means), w));
        };
        auto loss_value = [&]() {
            NoGradScope no_grad;
            return run().value();
        };
        std::vector<NamedTensor> params;
        p.collect(params, "");
        for (NamedTensor& t : params) t.tensor.zero_grad();
        Graph graph;
        {
            auto scope = graph.activate();
            graph.backward(run());
        }
        double worst = 0.0;
        for (NamedTensor& t : params) {
            const std::vector<double> analytic = t.tensor.grad_or_zeros();
            auto values = t.tensor.mutable_values();
            for (std::size_t i = 0; i < values.size(); ++i) {
                const double numeric = oracles::fd_central(loss_value, &values[i]);
                const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-2});
                worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
            }
        }
        CAPTURE(seed);
        CHECK(worst < 1e-4);
    }
}

} // TEST_SUITE
