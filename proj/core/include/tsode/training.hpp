#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tsode/models.hpp"
#include "tsode/tensor.hpp"

namespace tsode {

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& name);

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double learning_rate = 1e-2;
    OptimizerKind optimizer = OptimizerKind::adam;
    std::uint64_t seed = 1;
    std::size_t patience = 5;          // epochs without val-AUC improvement
    double validation_fraction = 0.2;
    double test_fraction = 0.2;
    double clip_norm = 5.0;            // global gradient norm; 0 disables
    /// Learning-rate multiplier for the extended model's decay heads, which
    /// form their own parameter group.
    double decay_group_lr_scale = 1.0;

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_auc = 0.0;
};

struct Metrics {
    std::vector<EpochRecord> curve;
    std::size_t best_epoch = 0;
    double best_val_auc = 0.0;
    double test_auc = 0.0;
    double test_auc_std = 0.0; // bootstrap over test scores
    double test_loss = 0.0;
};

/// Mean binary cross entropy from logits, in overflow-safe form
/// softplus(logit) - logit * label. Labels must be 0/1.
Tensor bce_loss(const Tensor& logits, std::span<const int> labels);

/// Plain-value counterpart for evaluation paths.
double bce_loss_value(std::span<const double> logits, std::span<const int> labels);

/**
 * Area under the ROC curve by rank statistic; ties count one half. Throws
 * MetricError unless both classes are present.
 */
double auc(std::span<const double> scores, std::span<const int> labels);

/// Standard deviation of AUC over bootstrap resamples of the score/label
/// pairs; resamples that lose one class are redrawn as invalid and skipped.
double bootstrap_auc_std(std::span<const double> scores, std::span<const int> labels,
                         std::size_t resamples = 200, std::uint64_t seed = 0);

/**
 * SGD or Adam over a fixed parameter list. Adam uses beta1=0.9, beta2=0.999,
 * eps=1e-8 with bias correction. step() consumes the accumulated grads and
 * zeroes them; a non-finite gradient aborts with the parameter's name.
 */
class Optimizer {
public:
    Optimizer(std::vector<NamedTensor> params, const TrainConfig& config);

    void step();
    void zero_grad();

private:
    std::vector<NamedTensor> params_;
    std::vector<double> lr_scale_;
    OptimizerKind kind_;
    double learning_rate_;
    double clip_norm_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::size_t step_count_ = 0;
};

struct GradCheckEntry {
    std::string param;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradCheckReport {
    double worst_rel_error = 0.0;
    GradCheckEntry worst;
    std::size_t entries_checked = 0;
};

/// Deterministic toy batch (3 series, 2 variables, <= 5 steps, missing
/// entries) shared by gradient checks and the CLI.
TimeSeriesBatch gradcheck_fixture();

/**
 * Central finite differences (step 1e-5) over every parameter entry of a
 * small model against the backward-pass gradient of the batch BCE loss.
 * Relative error uses max(|analytic|, |numeric|, 1e-2) as denominator, which
 * folds the absolute tolerance for near-zero entries into the ratio.
 */
GradCheckReport grad_check(const ModelSpec& spec, const TimeSeriesBatch& batch,
                           std::uint64_t seed = 7);

/// Threshold the report the way the gradcheck command does: 1e-4 for the
/// discrete models, 1e-3 for the solver-driven ones.
double grad_check_threshold(ModelKind kind);

struct TrainResult {
    Metrics metrics;
    Normalizer normalizer;
};

/**
 * Full training run: stratified train/validation/test split, normalization
 * fitted on the training split, minibatch optimization with early stopping
 * on validation AUC, best-epoch parameters restored at the end. Deterministic
 * for a fixed seed/config/dataset. The model is updated in place.
 */
TrainResult train(Model& model, const TimeSeriesBatch& dataset, const TrainConfig& config,
                  std::ostream* log = nullptr);

} // namespace tsode
