#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tsode/missingness.hpp"

namespace tsode {

/// One observation row of the on-disk triplet format.
struct RecordTriplet {
    std::string series_id;
    double time = 0.0;
    std::string variable;
    double value = 0.0;
};

struct LoadOptions {
    std::size_t max_steps = 200; // series are truncated beyond this
};

/// Variable names in first-appearance order, for loading files without a
/// declared vocabulary.
std::vector<std::string> discover_vocabulary(const std::string& path);

/**
 * Load `series_id,time,variable,value` rows (one header line, UTF-8, LF,
 * '.' decimal separator). Rows are grouped per series in first-appearance
 * order and sorted by time; rows sharing a timestamp merge into one step
 * (last write wins per variable). Mask and staleness intervals are filled
 * in. Unknown variables and unparsable numbers raise ValidationError with
 * the offending line number.
 */
TimeSeriesBatch load_triplets(const std::string& path, const std::vector<std::string>& vocabulary,
                              const LoadOptions& options = {});

/// Attach labels from a `series_id,label` file; labels must be 0 or 1.
/// Series without a row keep label -1; unmatched label rows are ignored.
void load_labels(const std::string& path, TimeSeriesBatch& batch);

/// Write observed entries back out in the triplet format (17 significant
/// digits, so values round-trip exactly).
void save_triplets(const std::string& path, const TimeSeriesBatch& batch,
                   const std::vector<std::string>& vocabulary);

void save_labels(const std::string& path, const TimeSeriesBatch& batch);

enum class MissingMode { random, informative };

/**
 * Two-class generator: per-variable sinusoids plus class-dependent drift and
 * offset, sampled on jittered time grids, with observations dropped either
 * globally (random) or at a class-dependent rate (informative), so that in
 * informative mode the missingness pattern itself predicts the class.
 */
struct SyntheticSpec {
    std::size_t n_series = 200;
    std::size_t n_vars = 4;
    std::size_t mean_length = 20; // lengths drawn uniform in [mean/2, 3*mean/2]
    double base_gap = 1.0;        // hours between steps
    double gap_jitter = 0.5;
    double class1_fraction = 0.5;
    double amplitude0 = 1.0;
    double amplitude1 = 1.3;
    double drift0 = 0.0;
    double drift1 = 0.05;
    double class_offset = 0.3; // constant added to class-1 values
    double noise_std = 0.5;
    /// Multiplies class-1 values (signal and noise together).
    double value_scale1 = 1.0;
    /// Optional class-0 noise shaping: each entry draws its noise std as
    /// quiet (with this fraction) or loud. Solving the two-moment match
    /// E0|x| = k E1|x|, E0[x^2] = k E1[x^2] with k = (1-rate1)/(1-rate0)
    /// makes mean-imputed sequences moment-identical across classes, so the
    /// class signal survives only in the missingness pattern itself.
    double noise_mix_fraction0 = 0.0; // 0 disables the mixture
    double noise_mix_quiet0 = 0.1;
    double noise_mix_loud0 = 1.0;
    MissingMode missing_mode = MissingMode::informative;
    double missing_rate0 = 0.2;
    double missing_rate1 = 0.2; // informative mode only; random uses rate0
    std::uint64_t seed = 1;

    void validate() const;
};

TimeSeriesBatch generate_synthetic(const SyntheticSpec& spec);

/// The standard informative-missingness benchmark workload: 2000 series of
/// 4 variables with class-conditional missing rates 0.2/0.7 and value
/// streams whose first two post-imputation moments match across classes
/// (see noise_mix_* fields), so only the missingness pattern separates.
SyntheticSpec informative_missingness_benchmark(std::uint64_t seed);

struct DataSplit {
    TimeSeriesBatch train;
    TimeSeriesBatch validation;
    TimeSeriesBatch test;
};

/**
 * Disjoint, exhaustive three-way split. fractions must sum to 1. When
 * stratified, each split receives its share of every class (largest
 * remainder allocation) and it is an error for a present class to vanish
 * from a non-empty split. Deterministic under seed.
 */
DataSplit split(const TimeSeriesBatch& batch, std::array<double, 3> fractions, std::uint64_t seed,
                bool stratified);

} // namespace tsode
