#include "tsode/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "tsode/data.hpp"

namespace tsode {

std::string to_string(OptimizerKind kind) {
    return kind == OptimizerKind::sgd ? "sgd" : "adam";
}

OptimizerKind optimizer_from_string(const std::string& name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "adam") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

void TrainConfig::validate() const {
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (learning_rate < 0.0) throw ConfigError("learning_rate must be non-negative");
    if (validation_fraction <= 0.0 || validation_fraction >= 1.0)
        throw ConfigError("validation_fraction must lie in (0, 1)");
    if (test_fraction < 0.0 || validation_fraction + test_fraction >= 1.0)
        throw ConfigError("validation_fraction + test_fraction must stay below 1");
    if (clip_norm < 0.0) throw ConfigError("clip_norm must be non-negative");
}

Tensor bce_loss(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 1 || logits.size() != labels.size())
        throw ShapeError("bce_loss: " + std::to_string(logits.size()) + " logits vs " +
                         std::to_string(labels.size()) + " labels");
    if (labels.empty()) throw ValidationError("bce_loss: empty batch");
    std::vector<double> y(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1)
            throw ValidationError("bce_loss: label " + std::to_string(labels[i]) +
                                  " at index " + std::to_string(i) + " not in {0,1}");
        y[i] = static_cast<double>(labels[i]);
    }
    // mean of softplus(l) - l*y, the stable form of -[y log s + (1-y) log(1-s)]
    const Tensor y_t = Tensor::from_vector(std::move(y));
    Tensor per_item = sub(softplus(logits), mul(logits, y_t));
    return scale(sum(per_item), 1.0 / static_cast<double>(labels.size()));
}

double bce_loss_value(std::span<const double> logits, std::span<const int> labels) {
    if (logits.size() != labels.size() || labels.empty())
        throw ShapeError("bce_loss_value: size mismatch or empty batch");
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1)
            throw ValidationError("bce_loss_value: label not in {0,1}");
        const double l = logits[i];
        const double softplus_l = std::max(l, 0.0) + std::log1p(std::exp(-std::abs(l)));
        total += softplus_l - l * static_cast<double>(labels[i]);
    }
    return total / static_cast<double>(logits.size());
}

double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size())
        throw ShapeError("auc: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
    std::size_t n_pos = 0;
    for (int label : labels) {
        if (label != 0 && label != 1) throw ValidationError("auc: label not in {0,1}");
        n_pos += static_cast<std::size_t>(label);
    }
    const std::size_t n = scores.size();
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw MetricError("auc undefined: only one class present (" + std::to_string(n_pos) +
                          " positives of " + std::to_string(n) + ")");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // average ranks over tie groups, 1-based
    std::vector<double> rank(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + 1 + j + 1);
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    double rank_sum = 0.0;
    for (std::size_t k = 0; k < n; ++k)
        if (labels[k] == 1) rank_sum += rank[k];
    const double u = rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double bootstrap_auc_std(std::span<const double> scores, std::span<const int> labels,
                         std::size_t resamples, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, scores.size() - 1);
    std::vector<double> values;
    values.reserve(resamples);
    std::vector<double> s(scores.size());
    std::vector<int> l(scores.size());
    for (std::size_t r = 0; r < resamples; ++r) {
        for (std::size_t i = 0; i < scores.size(); ++i) {
            const std::size_t j = pick(rng);
            s[i] = scores[j];
            l[i] = labels[j];
        }
        try {
            values.push_back(auc(s, l));
        } catch (const MetricError&) {
            // single-class draw; skip
        }
    }
    if (values.size() < 2) return 0.0;
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) /
                        static_cast<double>(values.size());
    double sq = 0.0;
    for (double v : values) sq += (v - mean) * (v - mean);
    return std::sqrt(sq / static_cast<double>(values.size() - 1));
}

// ---- optimizer -----------------------------------------------------------------

Optimizer::Optimizer(std::vector<NamedTensor> params, const TrainConfig& config)
    : params_(std::move(params)),
      kind_(config.optimizer),
      learning_rate_(config.learning_rate),
      clip_norm_(config.clip_norm) {
    lr_scale_.reserve(params_.size());
    for (const NamedTensor& p : params_)
        lr_scale_.push_back(p.name.rfind("fl_", 0) == 0 ? config.decay_group_lr_scale : 1.0);
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i].tensor.size(), 0.0);
        v_[i].assign(params_[i].tensor.size(), 0.0);
    }
}

void Optimizer::zero_grad() {
    for (NamedTensor& p : params_) p.tensor.zero_grad();
}

void Optimizer::step() {
    std::vector<std::vector<double>> grads;
    grads.reserve(params_.size());
    for (NamedTensor& p : params_) {
        grads.push_back(p.tensor.grad_or_zeros());
        for (double g : grads.back())
            if (!std::isfinite(g))
                throw DivergenceError("optimizer: non-finite gradient in " + p.name);
    }
    if (clip_norm_ > 0.0) {
        double sq = 0.0;
        for (const auto& g : grads)
            for (double x : g) sq += x * x;
        const double norm = std::sqrt(sq);
        if (norm > clip_norm_) {
            const double factor = clip_norm_ / norm;
            for (auto& g : grads)
                for (double& x : g) x *= factor;
        }
    }
    ++step_count_;
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    const double bias1 = 1.0 - std::pow(beta1, static_cast<double>(step_count_));
    const double bias2 = 1.0 - std::pow(beta2, static_cast<double>(step_count_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto values = params_[i].tensor.mutable_values();
        const double lr = learning_rate_ * lr_scale_[i];
        if (kind_ == OptimizerKind::sgd) {
            for (std::size_t k = 0; k < values.size(); ++k) values[k] -= lr * grads[i][k];
        } else {
            for (std::size_t k = 0; k < values.size(); ++k) {
                m_[i][k] = beta1 * m_[i][k] + (1.0 - beta1) * grads[i][k];
                v_[i][k] = beta2 * v_[i][k] + (1.0 - beta2) * grads[i][k] * grads[i][k];
                const double m_hat = m_[i][k] / bias1;
                const double v_hat = v_[i][k] / bias2;
                values[k] -= lr * m_hat / (std::sqrt(v_hat) + eps);
            }
        }
    }
    zero_grad();
}

// ---- gradient checking ------------------------------------------------------------

TimeSeriesBatch gradcheck_fixture() {
    TimeSeriesBatch batch;
    batch.n_vars = 2;
    auto push = [&](const char* id, int label, std::vector<double> times,
                    std::vector<double> values, std::vector<double> mask) {
        Series s;
        s.id = id;
        s.label = label;
        s.n_vars = 2;
        s.times = std::move(times);
        s.values = std::move(values);
        s.mask = std::move(mask);
        s.intervals = compute_intervals(s.times, s.mask, 2);
        batch.series.push_back(std::move(s));
    };
    push("toy-0", 1, {0.0, 0.5, 1.5, 2.0},
         {0.4, -0.2, 0.0, 0.9, -0.5, 0.0, 0.7, 0.3},
         {1, 1, 0, 1, 1, 0, 1, 1});
    push("toy-1", 0, {0.0, 1.0, 2.5},
         {-0.6, 0.1, 0.0, 0.0, 0.2, -0.8},
         {1, 1, 0, 0, 1, 1});
    push("toy-2", 1, {0.0, 0.7, 1.2, 1.9, 2.6},
         {0.1, 0.0, 0.0, 0.5, -0.3, 0.0, 0.8, 0.2, 0.0, -0.1},
         {1, 0, 0, 1, 1, 0, 1, 1, 0, 1});
    return batch;
}

GradCheckReport grad_check(const ModelSpec& spec, const TimeSeriesBatch& batch,
                           std::uint64_t seed) {
    Model model(spec, batch.n_vars, seed);
    model.set_feature_means(fit_means(batch));
    // Evaluate at a generic parameter point: the zero-initialized decay
    // heads sit exactly on the relu kink, where central differences and the
    // subgradient legitimately disagree.
    std::mt19937_64 rng(seed * 0x2545f4914f6cdd1dull + 1);
    std::uniform_real_distribution<double> draw(-0.4, 0.4);
    for (NamedTensor& p : model.parameters())
        for (double& v : p.tensor.mutable_values()) v = draw(rng);
    const std::vector<int> labels = batch.labels();

    auto loss_value = [&]() {
        NoGradScope no_recording;
        std::vector<double> logits;
        logits.reserve(batch.size());
        for (const Series& s : batch.series) logits.push_back(model.forward_series(s).value());
        return bce_loss_value(logits, labels);
    };

    for (NamedTensor& p : model.parameters()) p.tensor.zero_grad();
    {
        Graph graph;
        auto scope = graph.activate();
        const std::vector<Tensor> logits = model.forward(batch);
        const Tensor loss = bce_loss(concat(std::span<const Tensor>(logits)), labels);
        graph.backward(loss);
    }

    constexpr double fd_step = 1e-5;
    GradCheckReport report;
    for (NamedTensor& p : model.parameters()) {
        const std::vector<double> analytic = p.tensor.grad_or_zeros();
        auto values = p.tensor.mutable_values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + fd_step;
            const double up = loss_value();
            values[i] = saved - fd_step;
            const double down = loss_value();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * fd_step);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-2});
            const double rel = std::abs(analytic[i] - numeric) / denom;
            ++report.entries_checked;
            if (rel >= report.worst_rel_error) {
                report.worst_rel_error = rel;
                report.worst = {p.name, i, analytic[i], numeric, rel};
            }
        }
        p.tensor.zero_grad();
    }
    return report;
}

double grad_check_threshold(ModelKind kind) {
    switch (kind) {
    case ModelKind::gru:
    case ModelKind::grud:
    case ModelKind::ode_rnn: return 1e-4;
    case ModelKind::ode_grud:
    case ModelKind::ext_ode_grud: return 1e-3;
    }
    return 1e-4;
}

// ---- training loop ------------------------------------------------------------------

TrainResult train(Model& model, const TimeSeriesBatch& dataset, const TrainConfig& config,
                  std::ostream* log) {
    config.validate();
    if (!dataset.has_labels()) throw ValidationError("train: every series needs a 0/1 label");
    {
        const std::vector<int> labels = dataset.labels();
        const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
        if (pos == 0 || pos == labels.size())
            throw ValidationError("train: dataset must contain both classes");
    }

    const double train_fraction = 1.0 - config.validation_fraction - config.test_fraction;
    DataSplit splits = split(dataset, {train_fraction, config.validation_fraction,
                                       config.test_fraction},
                             config.seed, /*stratified=*/true);

    Normalizer normalizer;
    normalizer.fit(splits.train);
    const TimeSeriesBatch train_set = normalizer.apply(splits.train);
    const TimeSeriesBatch val_set = normalizer.apply(splits.validation);
    const TimeSeriesBatch test_set = normalizer.apply(splits.test);
    std::vector<std::size_t> unobserved;
    model.set_feature_means(fit_means(train_set, &unobserved));
    if (log != nullptr)
        for (std::size_t v : unobserved)
            (*log) << "warning: variable " << v
                   << " has no training observations; imputation mean defaults to 0\n";

    const std::vector<int> val_labels = val_set.labels();
    Optimizer optimizer(model.parameters(), config);
    optimizer.zero_grad();

    std::mt19937_64 shuffle_rng(config.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    Metrics metrics;
    std::vector<std::vector<double>> best_params;
    double best_auc = -1.0;
    std::size_t best_epoch = 0;
    std::size_t epochs_since_best = 0;

    auto snapshot = [&]() {
        best_params.clear();
        for (const NamedTensor& p : model.parameters())
            best_params.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
    };

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            Graph graph;
            auto scope = graph.activate();
            std::vector<Tensor> logits;
            std::vector<int> labels;
            logits.reserve(stop - start);
            for (std::size_t k = start; k < stop; ++k) {
                logits.push_back(model.forward_series(train_set.series[order[k]]));
                labels.push_back(train_set.series[order[k]].label);
            }
            const Tensor loss = bce_loss(concat(std::span<const Tensor>(logits)), labels);
            const double loss_val = loss.value();
            if (!std::isfinite(loss_val))
                throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                      ", batch " + std::to_string(start / config.batch_size));
            graph.backward(loss);
            optimizer.step();
            loss_sum += loss_val * static_cast<double>(stop - start);
            seen += stop - start;
        }

        const double train_loss = loss_sum / static_cast<double>(seen);
        const double val_auc = auc(model.predict(val_set), val_labels);
        metrics.curve.push_back({epoch, train_loss, val_auc});
        if (log != nullptr)
            (*log) << "epoch " << epoch << " train_loss " << train_loss << " val_auc " << val_auc
                   << "\n";

        if (val_auc > best_auc + 1e-12) {
            best_auc = val_auc;
            best_epoch = epoch;
            epochs_since_best = 0;
            snapshot();
        } else {
            ++epochs_since_best;
            if (epochs_since_best > config.patience) break;
        }
    }

    if (!best_params.empty()) {
        std::size_t i = 0;
        for (NamedTensor& p : model.parameters()) {
            std::copy(best_params[i].begin(), best_params[i].end(),
                      p.tensor.mutable_values().begin());
            ++i;
        }
    }
    metrics.best_epoch = best_epoch;
    metrics.best_val_auc = best_auc;

    if (!test_set.series.empty()) {
        NoGradScope no_recording;
        std::vector<double> logits;
        logits.reserve(test_set.size());
        for (const Series& s : test_set.series) logits.push_back(model.forward_series(s).value());
        std::vector<double> scores(logits.size());
        for (std::size_t i = 0; i < logits.size(); ++i)
            scores[i] = 1.0 / (1.0 + std::exp(-logits[i]));
        const std::vector<int> test_labels = test_set.labels();
        metrics.test_auc = auc(scores, test_labels);
        metrics.test_auc_std = bootstrap_auc_std(scores, test_labels, 200, config.seed);
        metrics.test_loss = bce_loss_value(logits, test_labels);
    }
    return {std::move(metrics), std::move(normalizer)};
}

} // namespace tsode
