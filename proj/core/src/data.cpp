#include "tsode/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

namespace tsode {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

double parse_double(const std::string& text, const char* what, std::size_t line_no) {
    try {
        std::size_t consumed = 0;
        const double v = std::stod(text, &consumed);
        if (consumed != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw ValidationError(std::string("line ") + std::to_string(line_no) +
                              ": non-numeric " + what + " '" + text + "'");
    }
}

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

std::vector<RecordTriplet> read_triplet_rows(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);
    std::vector<RecordTriplet> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string cleaned = trim(line);
        if (cleaned.empty()) continue;
        if (line_no == 1) continue; // header
        const std::vector<std::string> fields = split_csv_line(cleaned);
        if (fields.size() != 4)
            throw ValidationError("line " + std::to_string(line_no) + ": expected 4 fields, got " +
                                  std::to_string(fields.size()));
        RecordTriplet row;
        row.series_id = trim(fields[0]);
        row.time = parse_double(trim(fields[1]), "time", line_no);
        row.variable = trim(fields[2]);
        row.value = parse_double(trim(fields[3]), "value", line_no);
        if (row.time < 0.0)
            throw ValidationError("line " + std::to_string(line_no) + ": negative time");
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace

std::vector<std::string> discover_vocabulary(const std::string& path) {
    std::vector<std::string> vocabulary;
    for (const RecordTriplet& row : read_triplet_rows(path))
        if (std::find(vocabulary.begin(), vocabulary.end(), row.variable) == vocabulary.end())
            vocabulary.push_back(row.variable);
    return vocabulary;
}

TimeSeriesBatch load_triplets(const std::string& path, const std::vector<std::string>& vocabulary,
                              const LoadOptions& options) {
    std::unordered_map<std::string, std::size_t> var_index;
    for (std::size_t d = 0; d < vocabulary.size(); ++d) var_index[vocabulary[d]] = d;

    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);

    struct Row {
        double time;
        std::size_t var;
        double value;
        std::size_t order; // original file order, for a stable time sort
    };
    std::vector<std::string> order_of_series;
    std::unordered_map<std::string, std::vector<Row>> by_series;

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string cleaned = trim(line);
        if (cleaned.empty()) continue;
        if (line_no == 1) continue;
        const std::vector<std::string> fields = split_csv_line(cleaned);
        if (fields.size() != 4)
            throw ValidationError("line " + std::to_string(line_no) + ": expected 4 fields, got " +
                                  std::to_string(fields.size()));
        const std::string id = trim(fields[0]);
        const double time = parse_double(trim(fields[1]), "time", line_no);
        const std::string var = trim(fields[2]);
        const double value = parse_double(trim(fields[3]), "value", line_no);
        if (time < 0.0)
            throw ValidationError("line " + std::to_string(line_no) + ": negative time");
        const auto it = var_index.find(var);
        if (it == var_index.end())
            throw ValidationError("line " + std::to_string(line_no) + ": unknown variable '" +
                                  var + "'");
        if (by_series.find(id) == by_series.end()) order_of_series.push_back(id);
        by_series[id].push_back({time, it->second, value, line_no});
    }

    TimeSeriesBatch batch;
    batch.n_vars = vocabulary.size();
    for (const std::string& id : order_of_series) {
        std::vector<Row>& rows = by_series[id];
        std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
            if (a.time != b.time) return a.time < b.time;
            return a.order < b.order;
        });
        Series s;
        s.id = id;
        s.n_vars = batch.n_vars;
        for (const Row& row : rows) {
            if (s.times.empty() || row.time != s.times.back()) {
                if (s.n_steps() == options.max_steps) break;
                s.times.push_back(row.time);
                s.values.insert(s.values.end(), batch.n_vars, 0.0);
                s.mask.insert(s.mask.end(), batch.n_vars, 0.0);
            }
            const std::size_t t = s.n_steps() - 1;
            s.values[t * batch.n_vars + row.var] = row.value;
            s.mask[t * batch.n_vars + row.var] = 1.0;
        }
        s.intervals = compute_intervals(s.times, s.mask, s.n_vars);
        batch.series.push_back(std::move(s));
    }
    return batch;
}

void load_labels(const std::string& path, TimeSeriesBatch& batch) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);
    std::unordered_map<std::string, int> labels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string cleaned = trim(line);
        if (cleaned.empty()) continue;
        if (line_no == 1) continue;
        const std::vector<std::string> fields = split_csv_line(cleaned);
        if (fields.size() != 2)
            throw ValidationError("line " + std::to_string(line_no) + ": expected 2 fields, got " +
                                  std::to_string(fields.size()));
        const double raw = parse_double(trim(fields[1]), "label", line_no);
        if (raw != 0.0 && raw != 1.0)
            throw ValidationError("line " + std::to_string(line_no) + ": label must be 0 or 1");
        labels[trim(fields[0])] = static_cast<int>(raw);
    }
    for (Series& s : batch.series) {
        const auto it = labels.find(s.id);
        if (it != labels.end()) s.label = it->second;
    }
}

void save_triplets(const std::string& path, const TimeSeriesBatch& batch,
                   const std::vector<std::string>& vocabulary) {
    if (vocabulary.size() != batch.n_vars)
        throw ShapeError("save_triplets: vocabulary size " + std::to_string(vocabulary.size()) +
                         " vs batch n_vars " + std::to_string(batch.n_vars));
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path);
    out << "series_id,time,variable,value\n";
    char buf[64];
    for (const Series& s : batch.series)
        for (std::size_t t = 0; t < s.n_steps(); ++t)
            for (std::size_t v = 0; v < batch.n_vars; ++v)
                if (s.mask[t * batch.n_vars + v] == 1.0) {
                    out << s.id << ',';
                    std::snprintf(buf, sizeof(buf), "%.17g", s.times[t]);
                    out << buf << ',' << vocabulary[v] << ',';
                    std::snprintf(buf, sizeof(buf), "%.17g", s.values[t * batch.n_vars + v]);
                    out << buf << '\n';
                }
}

void save_labels(const std::string& path, const TimeSeriesBatch& batch) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path);
    out << "series_id,label\n";
    for (const Series& s : batch.series)
        if (s.label >= 0) out << s.id << ',' << s.label << '\n';
}

void SyntheticSpec::validate() const {
    if (n_series < 2) throw ValidationError("synthetic: need at least 2 series");
    if (n_vars == 0) throw ValidationError("synthetic: n_vars must be positive");
    if (mean_length < 2) throw ValidationError("synthetic: mean_length must be at least 2");
    if (missing_rate0 < 0.0 || missing_rate0 >= 1.0 || missing_rate1 < 0.0 || missing_rate1 >= 1.0)
        throw ValidationError("synthetic: missing rates must lie in [0, 1)");
    if (class1_fraction <= 0.0 || class1_fraction >= 1.0)
        throw ValidationError("synthetic: class1_fraction must lie in (0, 1)");
    if (base_gap <= 0.0) throw ValidationError("synthetic: base_gap must be positive");
}

TimeSeriesBatch generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);

    const std::size_t n1 = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(spec.class1_fraction *
                                                static_cast<double>(spec.n_series))));
    if (n1 >= spec.n_series) throw ValidationError("synthetic: class fractions degenerate");

    TimeSeriesBatch batch;
    batch.n_vars = spec.n_vars;
    const std::size_t lo = std::max<std::size_t>(2, spec.mean_length / 2);
    const std::size_t hi = std::max<std::size_t>(lo, spec.mean_length + spec.mean_length / 2);
    std::uniform_int_distribution<std::size_t> length_dist(lo, hi);

    for (std::size_t n = 0; n < spec.n_series; ++n) {
        const int label = n + n1 >= spec.n_series ? 1 : 0;
        const double amplitude = label == 1 ? spec.amplitude1 : spec.amplitude0;
        const double drift = label == 1 ? spec.drift1 : spec.drift0;
        const double offset = label == 1 ? spec.class_offset : 0.0;
        const double scale = label == 1 ? spec.value_scale1 : 1.0;
        const double miss_rate = (spec.missing_mode == MissingMode::informative && label == 1)
                                     ? spec.missing_rate1
                                     : spec.missing_rate0;

        Series s;
        char id[32];
        std::snprintf(id, sizeof(id), "synth-%05zu", n);
        s.id = id;
        s.label = label;
        s.n_vars = spec.n_vars;
        const std::size_t steps = length_dist(rng);

        std::vector<double> phase(spec.n_vars);
        for (double& p : phase) p = unit(rng) * 6.283185307179586;

        double t = 0.0;
        for (std::size_t step = 0; step < steps; ++step) {
            if (step > 0) {
                const double jitter = (2.0 * unit(rng) - 1.0) * spec.gap_jitter;
                t += std::max(0.05, spec.base_gap + jitter);
            }
            s.times.push_back(t);
            for (std::size_t v = 0; v < spec.n_vars; ++v) {
                const double omega = 0.5 + 0.25 * static_cast<double>(v);
                double noise_std = spec.noise_std;
                if (label == 0 && spec.noise_mix_fraction0 > 0.0)
                    noise_std = unit(rng) < spec.noise_mix_fraction0 ? spec.noise_mix_quiet0
                                                                     : spec.noise_mix_loud0;
                const double value =
                    scale * (amplitude * std::sin(omega * t + phase[v]) + noise_std * noise(rng)) +
                    drift * t + offset;
                const bool missing = unit(rng) < miss_rate;
                s.values.push_back(missing ? 0.0 : value);
                s.mask.push_back(missing ? 0.0 : 1.0);
            }
        }
        s.intervals = compute_intervals(s.times, s.mask, s.n_vars);
        batch.series.push_back(std::move(s));
    }
    return batch;
}

SyntheticSpec informative_missingness_benchmark(std::uint64_t seed) {
    SyntheticSpec spec;
    spec.n_series = 2000;
    spec.n_vars = 4;
    spec.mean_length = 20;
    spec.missing_mode = MissingMode::informative;
    spec.missing_rate0 = 0.2;
    spec.missing_rate1 = 0.7;
    spec.class_offset = 0.0;
    spec.amplitude0 = 0.2;
    spec.amplitude1 = 0.2;
    spec.drift1 = spec.drift0;
    spec.noise_std = 1.0;
    // two-moment match for the class-0 noise mixture (k = 0.3/0.8):
    // E0|x| = k E1|x| and E0[x^2] = k E1[x^2]
    spec.noise_mix_fraction0 = 0.75;
    spec.noise_mix_quiet0 = 0.1;
    spec.noise_mix_loud0 = 1.225;
    spec.seed = seed;
    return spec;
}

namespace {

std::vector<std::size_t> allocate_counts(std::size_t total, const std::array<double, 3>& fractions) {
    // largest remainder, so sizes are exact
    std::array<double, 3> exact{};
    std::vector<std::size_t> counts(3, 0);
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < 3; ++k) {
        exact[k] = fractions[k] * static_cast<double>(total);
        counts[k] = static_cast<std::size_t>(std::floor(exact[k]));
        assigned += counts[k];
    }
    std::vector<std::size_t> order{0, 1, 2};
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return exact[a] - std::floor(exact[a]) > exact[b] - std::floor(exact[b]);
    });
    for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++counts[order[k % 3]];
    return counts;
}

} // namespace

DataSplit split(const TimeSeriesBatch& batch, std::array<double, 3> fractions, std::uint64_t seed,
                bool stratified) {
    const double total = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(total - 1.0) > 1e-9)
        throw ValidationError("split: fractions must sum to 1, got " + std::to_string(total));
    for (double f : fractions)
        if (f < 0.0) throw ValidationError("split: negative fraction");

    std::mt19937_64 rng(seed);
    std::vector<std::vector<std::size_t>> groups;
    if (stratified) {
        std::map<int, std::vector<std::size_t>> by_label;
        for (std::size_t i = 0; i < batch.size(); ++i)
            by_label[batch.series[i].label].push_back(i);
        for (auto& [label, idx] : by_label) groups.push_back(std::move(idx));
    } else {
        std::vector<std::size_t> all(batch.size());
        std::iota(all.begin(), all.end(), 0);
        groups.push_back(std::move(all));
    }

    std::array<std::vector<std::size_t>, 3> assignment;
    for (std::vector<std::size_t>& group : groups) {
        std::shuffle(group.begin(), group.end(), rng);
        const std::vector<std::size_t> counts = allocate_counts(group.size(), fractions);
        if (stratified && !group.empty())
            for (std::size_t k = 0; k < 3; ++k)
                if (counts[k] == 0 && fractions[k] > 0.0 &&
                    allocate_counts(batch.size(), fractions)[k] > 0)
                    throw ValidationError(
                        "split: a class would be absent from a stratified split; "
                        "adjust fractions or provide more data");
        std::size_t cursor = 0;
        for (std::size_t k = 0; k < 3; ++k)
            for (std::size_t j = 0; j < counts[k]; ++j) assignment[k].push_back(group[cursor++]);
    }

    DataSplit result;
    std::array<TimeSeriesBatch*, 3> outs{&result.train, &result.validation, &result.test};
    for (std::size_t k = 0; k < 3; ++k) {
        outs[k]->n_vars = batch.n_vars;
        std::sort(assignment[k].begin(), assignment[k].end());
        for (std::size_t idx : assignment[k]) outs[k]->series.push_back(batch.series[idx]);
    }
    return result;
}

} // namespace tsode
