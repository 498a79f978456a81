#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tsode/tensor.hpp"

namespace tsode {

/**
 * One irregularly sampled multivariate series.
 *
 * values/mask/intervals are row-major [n_steps x n_vars]. mask entries are
 * exactly 0.0 or 1.0; where the mask is 0 the stored value is a placeholder
 * (0 by convention) that downstream computation never reads on its own.
 * intervals holds, per variable, the time elapsed since that variable was
 * last observed (0 at the first step).
 */
struct Series {
    std::string id;
    int label = -1; // -1 = unlabeled, else 0/1
    std::size_t n_vars = 0;
    std::vector<double> times;
    std::vector<double> values;
    std::vector<double> mask;
    std::vector<double> intervals;

    std::size_t n_steps() const { return times.size(); }

    std::span<const double> value_row(std::size_t t) const {
        return {values.data() + t * n_vars, n_vars};
    }
    std::span<const double> mask_row(std::size_t t) const {
        return {mask.data() + t * n_vars, n_vars};
    }
    std::span<const double> interval_row(std::size_t t) const {
        return {intervals.data() + t * n_vars, n_vars};
    }
};

struct TimeSeriesBatch {
    std::size_t n_vars = 0;
    std::vector<Series> series;

    std::size_t size() const { return series.size(); }
    bool has_labels() const;
    std::vector<int> labels() const;

    /// Throws ValidationError (naming the series) on any structural defect:
    /// non-binary mask, decreasing timestamps, size mismatch, intervals that
    /// disagree with the staleness recurrence, non-finite values.
    void validate() const;
};

/**
 * Per-variable staleness from timestamps and mask.
 *
 * Row 0 is all zeros. For t > 0, entry d is the gap to the previous step
 * plus the previous staleness when the variable was missing there, or just
 * the gap when it was observed.
 */
std::vector<double> compute_intervals(std::span<const double> times, std::span<const double> mask,
                                      std::size_t n_vars);

/// Fill the intervals field of every series from its times and mask.
void recompute_intervals(TimeSeriesBatch& batch);

/// Observed-entry mean per variable over the whole batch (training split).
/// Variables with no observations get mean 0; their indices are appended to
/// *unobserved when given.
std::vector<double> fit_means(const TimeSeriesBatch& batch,
                              std::vector<std::size_t>* unobserved = nullptr);

/// Replace missing entries with per-variable means. Mask is left untouched.
TimeSeriesBatch impute_mean(const TimeSeriesBatch& batch, std::span<const double> means);

/// Last observation carried forward; entries before a variable's first
/// observation fall back to the per-variable mean.
TimeSeriesBatch impute_forward(const TimeSeriesBatch& batch, std::span<const double> means);

/// [x; m; delta] layout, length 3 * n_vars.
std::vector<double> concat_simple(std::span<const double> x, std::span<const double> m,
                                  std::span<const double> delta);

/// Per-step [x; m; delta] rows for a whole series, values imputed first with
/// the given means (mean imputation keeps the mask information explicit).
std::vector<double> build_simple_inputs(const Series& series, std::span<const double> means);

/**
 * Trainable decay head: gamma = exp(-max(0, W . delta + b)).
 *
 * diagonal=true uses a per-variable weight vector (no cross-variable
 * coupling); otherwise weight is a full [out x in] matrix.
 */
struct DecayParams {
    Tensor weight;
    Tensor bias;
    bool diagonal = true;

    std::size_t output_dim() const { return bias.size(); }
};

/// Decay rate in (0, 1], differentiable w.r.t. the head parameters.
Tensor decay_rate(const Tensor& intervals, const DecayParams& params);

/**
 * Per-variable standardization fitted on observed training entries only.
 * apply() transforms observed values to (x - mean) / max(std, 1e-6) and
 * leaves masked placeholders at 0.
 */
struct Normalizer {
    std::vector<double> means;
    std::vector<double> stds;

    void fit(const TimeSeriesBatch& train);
    TimeSeriesBatch apply(const TimeSeriesBatch& batch) const;
};

} // namespace tsode
