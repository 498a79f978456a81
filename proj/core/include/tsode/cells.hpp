#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "tsode/missingness.hpp"
#include "tsode/tensor.hpp"

namespace tsode {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Running min/max over every decay rate a model computes. Hook for tests
/// and monitoring; null pointers are simply skipped.
struct DecayMonitor {
    double min_gamma = 1.0;
    double max_gamma = 1.0;
    std::size_t count = 0;

    void observe(std::span<const double> gamma) {
        for (double g : gamma) {
            if (count == 0) {
                min_gamma = max_gamma = g;
            } else {
                min_gamma = std::min(min_gamma, g);
                max_gamma = std::max(max_gamma, g);
            }
            ++count;
        }
    }
};

/**
 * Parameters of one gated recurrent cell.
 *
 * Input-to-hidden matrices are [H x D], hidden-to-hidden [H x H],
 * mask-to-hidden [H x D], biases [H]. The mask matrices and the two decay
 * heads are only allocated for cell variants that use them.
 */
struct CellParams {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 0;

    Tensor reset_x, reset_h, reset_m, reset_b;
    Tensor update_x, update_h, update_m, update_b;
    Tensor cand_x, cand_h, cand_m, cand_b;

    DecayParams input_decay;  // diagonal, per-variable (D)
    DecayParams hidden_decay; // full [H x D]

    bool has_mask_terms() const { return reset_m.defined(); }
    bool has_decay() const { return input_decay.weight.defined(); }

    /// Gate weights uniform in +-1/sqrt(H), biases zero. Decay weights start
    /// at zero and decay biases at 0.1, so training begins nearly decay-free
    /// (gamma ~ 0.9) without parking the relu on its zero-gradient kink.
    static CellParams init(std::size_t input_dim, std::size_t hidden_dim, std::mt19937_64& rng,
                           bool with_mask_terms, bool with_decay);

    void collect(std::vector<NamedTensor>& out, const std::string& prefix) const;
};

/// Standard GRU update; no mask terms, no decay.
Tensor gru_step(const Tensor& x, const Tensor& h_prev, const CellParams& params);

/// Mutable per-series state threaded through grud_step.
struct GrudState {
    Tensor h;
    std::vector<double> last_observed; // x at each variable's latest observation
};

/**
 * One step of the decay-gated cell: input trust blending of the raw value
 * against last observation and training mean, hidden-state decay by
 * staleness, then the gated update with mask terms. Updates last_observed
 * where the mask is 1 and stores the new hidden state back into state.
 */
Tensor grud_step(std::span<const double> x, std::span<const double> m,
                 std::span<const double> delta, GrudState& state, const CellParams& params,
                 std::span<const double> means, DecayMonitor* monitor = nullptr);

/**
 * Continuous-time form of the gated update over the concatenated state
 * y = [x; m; h]: dh/dt = (candidate - h) * update_gate, dx/dt = dm/dt = 0.
 * Throws ContractError unless y has length 2 * D + H.
 */
Tensor grud_derivative(const Tensor& y, double t, const CellParams& params);

} // namespace tsode
