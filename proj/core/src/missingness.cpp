#include "tsode/missingness.hpp"

#include <algorithm>
#include <cmath>

namespace tsode {

bool TimeSeriesBatch::has_labels() const {
    return !series.empty() &&
           std::all_of(series.begin(), series.end(), [](const Series& s) { return s.label >= 0; });
}

std::vector<int> TimeSeriesBatch::labels() const {
    std::vector<int> out;
    out.reserve(series.size());
    for (const Series& s : series) out.push_back(s.label);
    return out;
}

void TimeSeriesBatch::validate() const {
    for (std::size_t n = 0; n < series.size(); ++n) {
        const Series& s = series[n];
        const std::string where = "series " + std::to_string(n) +
                                  (s.id.empty() ? std::string() : " (" + s.id + ")");
        if (s.n_vars != n_vars)
            throw ValidationError(where + ": n_vars " + std::to_string(s.n_vars) +
                                  " != batch n_vars " + std::to_string(n_vars));
        const std::size_t cells = s.n_steps() * n_vars;
        if (s.values.size() != cells || s.mask.size() != cells || s.intervals.size() != cells)
            throw ValidationError(where + ": values/mask/intervals size mismatch");
        for (std::size_t t = 1; t < s.n_steps(); ++t)
            if (s.times[t] < s.times[t - 1])
                throw ValidationError(where + ": decreasing timestamp at step " +
                                      std::to_string(t));
        for (double m : s.mask)
            if (m != 0.0 && m != 1.0)
                throw ValidationError(where + ": mask entry not in {0,1}");
        if (!all_finite(s.values) || !all_finite(s.times))
            throw ValidationError(where + ": non-finite value");
        if (s.label < -1 || s.label > 1)
            throw ValidationError(where + ": label must be 0 or 1");
        const std::vector<double> expected = compute_intervals(s.times, s.mask, n_vars);
        if (expected != s.intervals)
            throw ValidationError(where + ": intervals disagree with staleness recurrence");
    }
}

std::vector<double> compute_intervals(std::span<const double> times, std::span<const double> mask,
                                      std::size_t n_vars) {
    const std::size_t n_steps = times.size();
    if (mask.size() != n_steps * n_vars)
        throw ValidationError("compute_intervals: mask size " + std::to_string(mask.size()) +
                              " != n_steps * n_vars");
    for (std::size_t t = 1; t < n_steps; ++t)
        if (times[t] < times[t - 1])
            throw ValidationError("compute_intervals: decreasing timestamp at step " +
                                  std::to_string(t));
    std::vector<double> delta(n_steps * n_vars, 0.0);
    for (std::size_t t = 1; t < n_steps; ++t) {
        const double gap = times[t] - times[t - 1];
        for (std::size_t d = 0; d < n_vars; ++d) {
            if (mask[(t - 1) * n_vars + d] == 0.0)
                delta[t * n_vars + d] = gap + delta[(t - 1) * n_vars + d];
            else
                delta[t * n_vars + d] = gap;
        }
    }
    return delta;
}

void recompute_intervals(TimeSeriesBatch& batch) {
    for (Series& s : batch.series) s.intervals = compute_intervals(s.times, s.mask, s.n_vars);
}

std::vector<double> fit_means(const TimeSeriesBatch& batch, std::vector<std::size_t>* unobserved) {
    if (batch.series.empty()) throw ValidationError("fit_means: empty batch");
    const std::size_t d = batch.n_vars;
    std::vector<double> sums(d, 0.0);
    std::vector<double> counts(d, 0.0);
    for (const Series& s : batch.series)
        for (std::size_t t = 0; t < s.n_steps(); ++t)
            for (std::size_t v = 0; v < d; ++v) {
                sums[v] += s.mask[t * d + v] * s.values[t * d + v];
                counts[v] += s.mask[t * d + v];
            }
    std::vector<double> means(d, 0.0);
    for (std::size_t v = 0; v < d; ++v) {
        if (counts[v] > 0.0) {
            means[v] = sums[v] / counts[v];
        } else if (unobserved != nullptr) {
            unobserved->push_back(v);
        }
    }
    return means;
}

TimeSeriesBatch impute_mean(const TimeSeriesBatch& batch, std::span<const double> means) {
    if (means.size() != batch.n_vars)
        throw ShapeError("impute_mean: " + std::to_string(means.size()) + " means for " +
                         std::to_string(batch.n_vars) + " variables");
    TimeSeriesBatch out = batch;
    const std::size_t d = batch.n_vars;
    for (Series& s : out.series)
        for (std::size_t t = 0; t < s.n_steps(); ++t)
            for (std::size_t v = 0; v < d; ++v) {
                const double m = s.mask[t * d + v];
                s.values[t * d + v] = m * s.values[t * d + v] + (1.0 - m) * means[v];
            }
    return out;
}

TimeSeriesBatch impute_forward(const TimeSeriesBatch& batch, std::span<const double> means) {
    if (means.size() != batch.n_vars)
        throw ShapeError("impute_forward: " + std::to_string(means.size()) + " means for " +
                         std::to_string(batch.n_vars) + " variables");
    TimeSeriesBatch out = batch;
    const std::size_t d = batch.n_vars;
    std::vector<double> last(d);
    for (Series& s : out.series) {
        for (std::size_t v = 0; v < d; ++v) last[v] = means[v];
        for (std::size_t t = 0; t < s.n_steps(); ++t)
            for (std::size_t v = 0; v < d; ++v) {
                if (s.mask[t * d + v] == 1.0)
                    last[v] = s.values[t * d + v];
                else
                    s.values[t * d + v] = last[v];
            }
    }
    return out;
}

std::vector<double> concat_simple(std::span<const double> x, std::span<const double> m,
                                  std::span<const double> delta) {
    if (x.size() != m.size() || x.size() != delta.size())
        throw ShapeError("concat_simple: segment lengths differ (" + std::to_string(x.size()) +
                         ", " + std::to_string(m.size()) + ", " + std::to_string(delta.size()) +
                         ")");
    std::vector<double> out;
    out.reserve(3 * x.size());
    out.insert(out.end(), x.begin(), x.end());
    out.insert(out.end(), m.begin(), m.end());
    out.insert(out.end(), delta.begin(), delta.end());
    return out;
}

std::vector<double> build_simple_inputs(const Series& series, std::span<const double> means) {
    const std::size_t d = series.n_vars;
    std::vector<double> out;
    out.reserve(series.n_steps() * 3 * d);
    for (std::size_t t = 0; t < series.n_steps(); ++t) {
        std::vector<double> imputed(d);
        for (std::size_t v = 0; v < d; ++v) {
            const double m = series.mask[t * d + v];
            imputed[v] = m * series.values[t * d + v] + (1.0 - m) * means[v];
        }
        const std::vector<double> row =
            concat_simple(imputed, series.mask_row(t), series.interval_row(t));
        out.insert(out.end(), row.begin(), row.end());
    }
    return out;
}

Tensor decay_rate(const Tensor& intervals, const DecayParams& params) {
    Tensor pre;
    if (params.diagonal) {
        if (params.weight.size() != intervals.size())
            throw ShapeError("decay_rate: diagonal weight " + shape_to_string(params.weight.shape()) +
                             " vs intervals " + shape_to_string(intervals.shape()));
        pre = add(mul(params.weight, intervals), params.bias);
    } else {
        pre = add(matvec(params.weight, intervals), params.bias);
    }
    return exp(neg(relu(pre)));
}

void Normalizer::fit(const TimeSeriesBatch& train) {
    means = fit_means(train);
    const std::size_t d = train.n_vars;
    std::vector<double> sq(d, 0.0);
    std::vector<double> counts(d, 0.0);
    for (const Series& s : train.series)
        for (std::size_t t = 0; t < s.n_steps(); ++t)
            for (std::size_t v = 0; v < d; ++v)
                if (s.mask[t * d + v] == 1.0) {
                    const double c = s.values[t * d + v] - means[v];
                    sq[v] += c * c;
                    counts[v] += 1.0;
                }
    stds.assign(d, 1.0);
    for (std::size_t v = 0; v < d; ++v)
        if (counts[v] > 0.0) stds[v] = std::sqrt(sq[v] / counts[v]);
}

TimeSeriesBatch Normalizer::apply(const TimeSeriesBatch& batch) const {
    if (means.size() != batch.n_vars)
        throw ShapeError("Normalizer: fitted on " + std::to_string(means.size()) +
                         " variables, batch has " + std::to_string(batch.n_vars));
    TimeSeriesBatch out = batch;
    const std::size_t d = batch.n_vars;
    for (Series& s : out.series)
        for (std::size_t t = 0; t < s.n_steps(); ++t)
            for (std::size_t v = 0; v < d; ++v)
                if (s.mask[t * d + v] == 1.0)
                    s.values[t * d + v] =
                        (s.values[t * d + v] - means[v]) / std::max(stds[v], 1e-6);
    return out;
}

} // namespace tsode
