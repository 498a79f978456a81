#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tsode/cells.hpp"
#include "tsode/missingness.hpp"
#include "tsode/odesolver.hpp"
#include "tsode/tensor.hpp"

namespace tsode {

/// gru is the mask-blind baseline: a plain GRU over imputed values that
/// never sees the mask or the staleness intervals.
enum class ModelKind { gru, grud, ode_rnn, ode_grud, ext_ode_grud };
enum class Imputation { mean, forward, simple };

std::string to_string(ModelKind kind);
std::string to_string(Imputation mode);
ModelKind model_kind_from_string(const std::string& name);
Imputation imputation_from_string(const std::string& name);

struct ModelSpec {
    ModelKind kind = ModelKind::grud;
    std::size_t hidden_dim = 16;
    /// Input handling for gru and ode_rnn; the decay-gated models blend raw
    /// values against last observation and training mean internally.
    Imputation imputation = Imputation::mean;
    SolverSpec solver{};
    /// Extended model only: use the alternate trust blend
    /// m*x + (gamma*x + (1-gamma)) * mean instead of the standard one.
    bool literal_input_blend = false;
    /// Integration time after the last observation of a series for the
    /// continuous models; 0 picks the series' median inter-observation gap.
    double final_window = 0.0;
};

/**
 * A sequence classifier: maps one irregular multivariate series to a single
 * logit. Forward passes record onto the active Graph, so the same code path
 * serves training (with a graph) and scoring (without).
 */
class Model {
public:
    Model(ModelSpec spec, std::size_t input_dim, std::uint64_t seed);

    const ModelSpec& spec() const { return spec_; }
    std::size_t input_dim() const { return input_dim_; }

    /// Per-variable imputation targets in model (normalized) space.
    void set_feature_means(std::vector<double> means);
    const std::vector<double>& feature_means() const { return feature_means_; }

    void set_decay_monitor(DecayMonitor* monitor) { monitor_ = monitor; }

    std::vector<NamedTensor>& parameters() { return params_; }
    const std::vector<NamedTensor>& parameters() const { return params_; }

    CellParams& cell() { return cell_; }
    DecayParams& filter_input() { return fl_input_; }
    DecayParams& filter_hidden() { return fl_hidden_; }
    Tensor& head_weight() { return head_w_; }
    Tensor& head_bias() { return head_b_; }

    /// Logit for one series. Throws ValidationError for an empty series and
    /// ShapeError if the series width does not match input_dim.
    Tensor forward_series(const Series& series) const;

    std::vector<Tensor> forward(const TimeSeriesBatch& batch) const;

    /// Sigmoid scores without recording anything.
    std::vector<double> predict(const TimeSeriesBatch& batch) const;

private:
    Tensor forward_gru(const Series& series) const;
    Tensor forward_grud(const Series& series) const;
    Tensor forward_ode_rnn(const Series& series) const;
    Tensor forward_ode_grud(const Series& series) const;
    Tensor forward_ext_ode_grud(const Series& series) const;

    Tensor readout(const Tensor& h) const;
    OdeFunc cell_dynamics() const;
    OdeFunc hidden_dynamics() const;
    std::size_t cell_input_dim() const;
    std::vector<double> build_inputs(const Series& series) const;
    double final_window_for(const Series& series) const;

    ModelSpec spec_;
    std::size_t input_dim_ = 0;

    CellParams cell_;
    // ode_rnn hidden dynamics: w2 * tanh(w1 * h + b1) + b2, w2 zero at init
    Tensor dyn_w1_, dyn_b1_, dyn_w2_, dyn_b2_;
    // extended model decay heads, integrated as ODEs over staleness
    DecayParams fl_input_;
    DecayParams fl_hidden_;
    Tensor head_w_, head_b_;

    std::vector<double> feature_means_;
    std::vector<NamedTensor> params_;
    DecayMonitor* monitor_ = nullptr;
};

/// Median of positive consecutive-timestamp gaps over the whole batch
/// (1.0 when there are none). Basis for the default solver step.
double median_interobservation_gap(const TimeSeriesBatch& batch);

/// step = median gap / 4, the default when no step size is configured.
double default_step_size(const TimeSeriesBatch& batch);

// ---- checkpoint container ---------------------------------------------------

/// Versioned JSON checkpoint: model spec, all parameter tensors, fitted
/// normalization statistics and feature means. Doubles round-trip exactly.
void save_checkpoint(const std::string& path, const Model& model, const Normalizer& normalizer);

struct Checkpoint {
    ModelSpec spec;
    std::size_t input_dim = 0;
    Normalizer normalizer;
    std::vector<double> feature_means;
    std::vector<NamedTensor> params;

    /// Materialize a model with the stored parameters.
    Model restore() const;
};

Checkpoint load_checkpoint(const std::string& path);

} // namespace tsode
