#include "tsode/cells.hpp"

#include <cmath>

namespace tsode {

namespace {

/// r/z/candidate gates shared by every cell variant. mask may be undefined
/// for plain GRU.
struct Gates {
    Tensor reset;
    Tensor update;
    Tensor candidate;
};

Gates compute_gates(const Tensor& x, const Tensor& mask, const Tensor& h,
                    const CellParams& p) {
    Tensor pre_r = add(add(matvec(p.reset_x, x), matvec(p.reset_h, h)), p.reset_b);
    Tensor pre_z = add(add(matvec(p.update_x, x), matvec(p.update_h, h)), p.update_b);
    if (mask.defined()) {
        pre_r = add(pre_r, matvec(p.reset_m, mask));
        pre_z = add(pre_z, matvec(p.update_m, mask));
    }
    Gates g;
    g.reset = sigmoid(pre_r);
    g.update = sigmoid(pre_z);
    Tensor pre_c = add(add(matvec(p.cand_x, x), matvec(p.cand_h, mul(g.reset, h))), p.cand_b);
    if (mask.defined()) pre_c = add(pre_c, matvec(p.cand_m, mask));
    g.candidate = tanh(pre_c);
    return g;
}

Tensor gated_update(const Tensor& x, const Tensor& mask, const Tensor& h, const CellParams& p) {
    const Gates g = compute_gates(x, mask, h, p);
    // h' = (1 - z) * h + z * candidate
    return add(mul(rsub_scalar(1.0, g.update), h), mul(g.update, g.candidate));
}

} // namespace

CellParams CellParams::init(std::size_t input_dim, std::size_t hidden_dim, std::mt19937_64& rng,
                            bool with_mask_terms, bool with_decay) {
    CellParams p;
    p.input_dim = input_dim;
    p.hidden_dim = hidden_dim;
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
    auto weight = [&](std::size_t rows, std::size_t cols) {
        return Tensor::uniform({rows, cols}, -bound, bound, rng, /*requires_grad=*/true);
    };
    auto bias = [&](std::size_t n) { return Tensor::zeros({n}, /*requires_grad=*/true); };

    p.reset_x = weight(hidden_dim, input_dim);
    p.reset_h = weight(hidden_dim, hidden_dim);
    p.reset_b = bias(hidden_dim);
    p.update_x = weight(hidden_dim, input_dim);
    p.update_h = weight(hidden_dim, hidden_dim);
    p.update_b = bias(hidden_dim);
    p.cand_x = weight(hidden_dim, input_dim);
    p.cand_h = weight(hidden_dim, hidden_dim);
    p.cand_b = bias(hidden_dim);
    if (with_mask_terms) {
        p.reset_m = weight(hidden_dim, input_dim);
        p.update_m = weight(hidden_dim, input_dim);
        p.cand_m = weight(hidden_dim, input_dim);
    }
    if (with_decay) {
        // Zero weights keep the start nearly decay-free, but the bias must
        // sit off the relu kink: at exactly 0 the subgradient is 0 and the
        // decay heads would never receive gradient.
        p.input_decay.diagonal = true;
        p.input_decay.weight = bias(input_dim);
        p.input_decay.bias = Tensor::full({input_dim}, 0.1, /*requires_grad=*/true);
        p.hidden_decay.diagonal = false;
        p.hidden_decay.weight = Tensor::zeros({hidden_dim, input_dim}, /*requires_grad=*/true);
        p.hidden_decay.bias = Tensor::full({hidden_dim}, 0.1, /*requires_grad=*/true);
    }
    return p;
}

void CellParams::collect(std::vector<NamedTensor>& out, const std::string& prefix) const {
    auto push = [&](const char* name, const Tensor& t) {
        if (t.defined()) out.push_back({prefix + name, t});
    };
    push("reset_x", reset_x);
    push("reset_h", reset_h);
    push("reset_m", reset_m);
    push("reset_b", reset_b);
    push("update_x", update_x);
    push("update_h", update_h);
    push("update_m", update_m);
    push("update_b", update_b);
    push("cand_x", cand_x);
    push("cand_h", cand_h);
    push("cand_m", cand_m);
    push("cand_b", cand_b);
    push("input_decay_w", input_decay.weight);
    push("input_decay_b", input_decay.bias);
    push("hidden_decay_w", hidden_decay.weight);
    push("hidden_decay_b", hidden_decay.bias);
}

Tensor gru_step(const Tensor& x, const Tensor& h_prev, const CellParams& params) {
    if (x.size() != params.input_dim || h_prev.size() != params.hidden_dim)
        throw ShapeError("gru_step: input " + shape_to_string(x.shape()) + ", hidden " +
                         shape_to_string(h_prev.shape()) + " vs cell (" +
                         std::to_string(params.input_dim) + ", " +
                         std::to_string(params.hidden_dim) + ")");
    return gated_update(x, Tensor(), h_prev, params);
}

Tensor grud_step(std::span<const double> x, std::span<const double> m,
                 std::span<const double> delta, GrudState& state, const CellParams& params,
                 std::span<const double> means, DecayMonitor* monitor) {
    const std::size_t d = params.input_dim;
    if (x.size() != d || m.size() != d || delta.size() != d || means.size() != d ||
        state.last_observed.size() != d)
        throw ShapeError("grud_step: input rows must have length " + std::to_string(d));

    const Tensor delta_t = Tensor::from_span(delta);
    const Tensor gamma_x = decay_rate(delta_t, params.input_decay);
    const Tensor gamma_h = decay_rate(delta_t, params.hidden_decay);
    if (monitor != nullptr) {
        monitor->observe(gamma_x.values());
        monitor->observe(gamma_h.values());
    }

    // x_hat = m*x + (1-m)*(gamma_x*last + (1-gamma_x)*mean)
    const Tensor x_t = Tensor::from_span(x);
    const Tensor m_t = Tensor::from_span(m);
    const Tensor last_t = Tensor::from_span(state.last_observed);
    const Tensor mean_t = Tensor::from_span(means);
    Tensor fallback = add(mul(gamma_x, last_t), mul(rsub_scalar(1.0, gamma_x), mean_t));
    Tensor x_hat = add(mul(m_t, x_t), mul(rsub_scalar(1.0, m_t), fallback));

    Tensor h_decayed = mul(gamma_h, state.h);
    Tensor h_next = gated_update(x_hat, m_t, h_decayed, params);

    for (std::size_t v = 0; v < d; ++v)
        if (m[v] == 1.0) state.last_observed[v] = x[v];
    state.h = h_next;
    return h_next;
}

Tensor grud_derivative(const Tensor& y, double t, const CellParams& params) {
    (void)t; // dynamics are autonomous; x and m are frozen inside y
    const std::size_t d = params.input_dim;
    const std::size_t h_dim = params.hidden_dim;
    if (y.rank() != 1 || y.size() != 2 * d + h_dim)
        throw ContractError("grud_derivative: state length " + std::to_string(y.size()) +
                            ", expected 2*" + std::to_string(d) + "+" + std::to_string(h_dim));
    Tensor x = slice(y, 0, d);
    Tensor m = slice(y, d, d);
    Tensor h = slice(y, 2 * d, h_dim);
    const Gates g = compute_gates(x, m, h, params);
    Tensor dh = mul(sub(g.candidate, h), g.update);
    return concat({Tensor::zeros({d}), Tensor::zeros({d}), dh});
}

} // namespace tsode
