// tsode command line: train/eval/gradcheck/bench/synth over irregular
// multivariate time series.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tsode/data.hpp"
#include "tsode/models.hpp"
#include "tsode/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace tsode;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitThreshold = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

struct ModelFlags {
    std::string kind = "grud";
    std::size_t hidden_dim = 16;
    std::string imputation = "mean";
    std::string solver = "rk4";
    double step_size = 0.0; // 0 = median gap / 4
    std::string grad_mode = "discretize";
    double final_window = 0.0;
    bool literal_blend = false;
};

struct DataFlags {
    std::string data_path;
    std::string labels_path;
    std::string vocab_path;
    std::string synthetic; // preset name
    std::size_t max_steps = 200;
    std::size_t synth_n = 0;
    std::size_t synth_vars = 0;
    std::size_t synth_len = 0;
    double synth_miss0 = -1.0;
    double synth_miss1 = -1.0;
    double synth_offset = -1.0;
    double synth_noise = -1.0;
};

struct TrainFlags {
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    double learning_rate = 0.01;
    std::string optimizer = "adam";
    std::size_t patience = 4;
    double val_fraction = 0.2;
    double test_fraction = 0.2;
    double clip_norm = 5.0;
    double decay_lr_scale = 1.0;
};

void add_model_flags(CLI::App* cmd, ModelFlags& flags) {
    cmd->add_option("--model", flags.kind, "Model kind: gru, grud, ode_rnn, ode_grud, ext_ode_grud")
        ->capture_default_str();
    cmd->add_option("--hidden-dim", flags.hidden_dim, "Hidden state width")->capture_default_str();
    cmd->add_option("--imputation", flags.imputation,
                    "Input handling for gru/ode_rnn: mean, forward, simple")
        ->capture_default_str();
    cmd->add_option("--solver", flags.solver, "ODE method: euler or rk4")->capture_default_str();
    cmd->add_option("--step-size", flags.step_size,
                    "Solver step in time units (0 = median gap / 4)")
        ->capture_default_str();
    cmd->add_option("--grad-mode", flags.grad_mode, "Gradient mode: discretize or adjoint")
        ->capture_default_str();
    cmd->add_option("--final-window", flags.final_window,
                    "Integration time after the last observation (0 = median gap)")
        ->capture_default_str();
    cmd->add_flag("--literal-blend", flags.literal_blend,
                  "Extended model: use the alternate literal input blend");
}

void add_data_flags(CLI::App* cmd, DataFlags& flags) {
    cmd->add_option("--data", flags.data_path, "Triplet CSV: series_id,time,variable,value");
    cmd->add_option("--labels", flags.labels_path, "Label CSV: series_id,label");
    cmd->add_option("--vocab", flags.vocab_path, "Variable names, one per line");
    cmd->add_option("--max-steps", flags.max_steps, "Truncate loaded series to this many steps")
        ->capture_default_str();
    cmd->add_option("--synthetic", flags.synthetic,
                    "Synthetic preset: default, informative, random, separable");
    cmd->add_option("--synth-n", flags.synth_n, "Override synthetic series count");
    cmd->add_option("--synth-vars", flags.synth_vars, "Override synthetic variable count");
    cmd->add_option("--synth-len", flags.synth_len, "Override synthetic mean length");
    cmd->add_option("--synth-miss0", flags.synth_miss0, "Override class-0 missing rate");
    cmd->add_option("--synth-miss1", flags.synth_miss1, "Override class-1 missing rate");
    cmd->add_option("--synth-offset", flags.synth_offset, "Override class-1 value offset");
    cmd->add_option("--synth-noise", flags.synth_noise, "Override observation noise std");
}

void add_train_flags(CLI::App* cmd, TrainFlags& flags) {
    cmd->add_option("--epochs", flags.epochs, "Training epochs")->capture_default_str();
    cmd->add_option("--batch-size", flags.batch_size, "Minibatch size")->capture_default_str();
    cmd->add_option("--lr", flags.learning_rate, "Learning rate")->capture_default_str();
    cmd->add_option("--optimizer", flags.optimizer, "sgd or adam")->capture_default_str();
    cmd->add_option("--patience", flags.patience, "Early-stop patience in epochs")
        ->capture_default_str();
    cmd->add_option("--val-frac", flags.val_fraction, "Validation fraction")
        ->capture_default_str();
    cmd->add_option("--test-frac", flags.test_fraction, "Test fraction")->capture_default_str();
    cmd->add_option("--clip-norm", flags.clip_norm, "Global gradient norm clip (0 = off)")
        ->capture_default_str();
    cmd->add_option("--decay-lr-scale", flags.decay_lr_scale,
                    "Learning-rate multiplier for the extended model's decay heads")
        ->capture_default_str();
}

SyntheticSpec preset_spec(const std::string& name) {
    SyntheticSpec spec;
    if (name == "default") {
        spec.n_series = 200;
        spec.missing_rate0 = 0.2;
        spec.missing_rate1 = 0.5;
    } else if (name == "informative") {
        spec = informative_missingness_benchmark(1);
    } else if (name == "random") {
        spec.missing_mode = MissingMode::random;
        spec.missing_rate0 = 0.3;
        spec.missing_rate1 = 0.3;
    } else if (name == "separable") {
        spec.n_series = 200;
        spec.missing_rate0 = 0.0;
        spec.missing_rate1 = 0.0;
        spec.missing_mode = MissingMode::random;
        spec.class_offset = 3.0;
        spec.noise_std = 0.3;
    } else {
        throw ConfigError("unknown synthetic preset '" + name +
                          "' (expected default, informative, random or separable)");
    }
    return spec;
}

SyntheticSpec resolve_synthetic(const DataFlags& flags, std::uint64_t seed) {
    SyntheticSpec spec = preset_spec(flags.synthetic);
    spec.seed = seed;
    if (flags.synth_n > 0) spec.n_series = flags.synth_n;
    if (flags.synth_vars > 0) spec.n_vars = flags.synth_vars;
    if (flags.synth_len > 0) spec.mean_length = flags.synth_len;
    if (flags.synth_miss0 >= 0.0) spec.missing_rate0 = flags.synth_miss0;
    if (flags.synth_miss1 >= 0.0) spec.missing_rate1 = flags.synth_miss1;
    if (flags.synth_offset >= 0.0) spec.class_offset = flags.synth_offset;
    if (flags.synth_noise >= 0.0) spec.noise_std = flags.synth_noise;
    return spec;
}

std::vector<std::string> read_vocabulary_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open vocabulary file " + path);
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (!line.empty()) names.push_back(line);
    }
    if (names.empty()) throw ConfigError("vocabulary file " + path + " is empty");
    return names;
}

TimeSeriesBatch resolve_dataset(const DataFlags& flags, std::uint64_t seed, bool need_labels,
                                std::string* source_description) {
    const bool have_file = !flags.data_path.empty();
    const bool have_synth = !flags.synthetic.empty();
    if (have_file == have_synth)
        throw ConfigError("exactly one data source required: --data or --synthetic");
    if (have_synth) {
        const SyntheticSpec spec = resolve_synthetic(flags, seed);
        if (source_description != nullptr) *source_description = "synthetic:" + flags.synthetic;
        return generate_synthetic(spec);
    }
    const std::vector<std::string> vocabulary = flags.vocab_path.empty()
                                                    ? discover_vocabulary(flags.data_path)
                                                    : read_vocabulary_file(flags.vocab_path);
    LoadOptions options;
    options.max_steps = flags.max_steps;
    TimeSeriesBatch batch = load_triplets(flags.data_path, vocabulary, options);
    if (!flags.labels_path.empty()) load_labels(flags.labels_path, batch);
    if (need_labels && !batch.has_labels())
        throw ConfigError("training/evaluation needs a label for every series; pass --labels");
    if (source_description != nullptr) *source_description = flags.data_path;
    return batch;
}

ModelSpec resolve_model_spec(const ModelFlags& flags, const TimeSeriesBatch& dataset) {
    ModelSpec spec;
    spec.kind = model_kind_from_string(flags.kind);
    spec.hidden_dim = flags.hidden_dim;
    spec.imputation = imputation_from_string(flags.imputation);
    spec.solver.method = solver_method_from_string(flags.solver);
    spec.solver.gradient_mode = gradient_mode_from_string(flags.grad_mode);
    spec.solver.step_size = flags.step_size > 0.0 ? flags.step_size : default_step_size(dataset);
    spec.final_window = flags.final_window;
    spec.literal_input_blend = flags.literal_blend;
    return spec;
}

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << content;
}

void write_metrics_csv(const fs::path& path, const Metrics& metrics) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << "epoch,train_loss,val_auc\n";
    char buf[96];
    for (const EpochRecord& r : metrics.curve) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", r.epoch, r.train_loss, r.val_auc);
        out << buf;
    }
}

int cmd_train(const ModelFlags& model_flags, const DataFlags& data_flags,
              const TrainFlags& train_flags, std::uint64_t seed, const std::string& out_dir,
              const std::string& resolved_config) {
    fs::create_directories(out_dir);
    std::string source;
    const TimeSeriesBatch dataset = resolve_dataset(data_flags, seed, true, &source);
    const ModelSpec spec = resolve_model_spec(model_flags, dataset);

    TrainConfig config;
    config.epochs = train_flags.epochs;
    config.batch_size = train_flags.batch_size;
    config.learning_rate = train_flags.learning_rate;
    config.optimizer = optimizer_from_string(train_flags.optimizer);
    config.seed = seed;
    config.patience = train_flags.patience;
    config.validation_fraction = train_flags.val_fraction;
    config.test_fraction = train_flags.test_fraction;
    config.clip_norm = train_flags.clip_norm;
    config.decay_group_lr_scale = train_flags.decay_lr_scale;

    Model model(spec, dataset.n_vars, seed);
    const auto started = std::chrono::steady_clock::now();
    const TrainResult result = train(model, dataset, config, &std::cout);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    write_metrics_csv(fs::path(out_dir) / "metrics.csv", result.metrics);
    save_checkpoint((fs::path(out_dir) / "checkpoint.json").string(), model, result.normalizer);
    write_text(fs::path(out_dir) / "config_resolved.ini", resolved_config);

    json summary;
    summary["command"] = "train";
    summary["model"] = to_string(spec.kind);
    summary["hidden_dim"] = spec.hidden_dim;
    summary["solver"] = to_string(spec.solver.method);
    summary["step_size"] = spec.solver.step_size;
    summary["gradient_mode"] = to_string(spec.solver.gradient_mode);
    summary["seed"] = seed;
    summary["dataset"] = source;
    summary["n_series"] = dataset.size();
    summary["n_vars"] = dataset.n_vars;
    summary["epochs_run"] = result.metrics.curve.size();
    summary["best_epoch"] = result.metrics.best_epoch;
    summary["best_val_auc"] = result.metrics.best_val_auc;
    summary["test_auc"] = result.metrics.test_auc;
    summary["test_auc_std"] = result.metrics.test_auc_std;
    summary["test_loss"] = result.metrics.test_loss;
    // wall time goes to stdout only: artifacts stay bit-reproducible
    write_text(fs::path(out_dir) / "summary.json", summary.dump(1) + "\n");

    std::cout << "test_auc " << result.metrics.test_auc << " +- " << result.metrics.test_auc_std
              << " (best_val_auc " << result.metrics.best_val_auc << ", " << seconds << "s)\n";
    std::cout << "artifacts in " << out_dir << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& checkpoint_path, const DataFlags& data_flags, std::uint64_t seed,
             const std::string& out_dir) {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    std::string source;
    TimeSeriesBatch dataset = resolve_dataset(data_flags, seed, true, &source);
    if (dataset.n_vars != ckpt.input_dim)
        throw ConfigError("checkpoint expects " + std::to_string(ckpt.input_dim) +
                          " variables, dataset has " + std::to_string(dataset.n_vars));
    Model model = ckpt.restore();
    const TimeSeriesBatch normalized = ckpt.normalizer.apply(dataset);

    NoGradScope no_recording;
    std::vector<double> logits;
    logits.reserve(normalized.size());
    for (const Series& s : normalized.series) logits.push_back(model.forward_series(s).value());
    std::vector<double> scores(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i)
        scores[i] = 1.0 / (1.0 + std::exp(-logits[i]));
    const std::vector<int> labels = normalized.labels();

    const double auc_value = auc(scores, labels);
    const double loss_value = bce_loss_value(logits, labels);
    std::cout << "auc " << auc_value << " loss " << loss_value << " n " << scores.size() << "\n";

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream out(fs::path(out_dir) / "scores.csv");
        out << "series_id,score,label\n";
        char buf[64];
        for (std::size_t i = 0; i < scores.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", scores[i]);
            out << normalized.series[i].id << ',' << buf << ',' << labels[i] << '\n';
        }
    }
    return kExitOk;
}

int cmd_gradcheck(const std::string& kind_name) {
    const TimeSeriesBatch toy = gradcheck_fixture();
    std::vector<ModelKind> kinds;
    if (kind_name == "all") {
        kinds = {ModelKind::grud, ModelKind::ode_rnn, ModelKind::ode_grud,
                 ModelKind::ext_ode_grud};
    } else {
        kinds = {model_kind_from_string(kind_name)};
    }
    bool all_passed = true;
    for (ModelKind kind : kinds) {
        ModelSpec spec;
        spec.kind = kind;
        spec.hidden_dim = 3;
        spec.solver = {SolverMethod::rk4, 0.25, GradientMode::discretize};
        const GradCheckReport report = grad_check(spec, toy);
        const double threshold = grad_check_threshold(kind);
        const bool passed = report.worst_rel_error < threshold;
        all_passed = all_passed && passed;
        std::printf("%-14s worst_rel_error %.3e (threshold %.0e, %zu entries) worst at %s[%zu] "
                    "analytic %.6e numeric %.6e -> %s\n",
                    to_string(kind).c_str(), report.worst_rel_error, threshold,
                    report.entries_checked, report.worst.param.c_str(), report.worst.index,
                    report.worst.analytic, report.worst.numeric, passed ? "ok" : "FAIL");
    }
    return all_passed ? kExitOk : kExitThreshold;
}

int cmd_bench(std::size_t repeats, std::uint64_t seed) {
    SyntheticSpec synth;
    synth.n_series = 48;
    synth.n_vars = 3;
    synth.mean_length = 12;
    synth.missing_rate0 = 0.2;
    synth.missing_rate1 = 0.6;
    synth.seed = seed;
    const TimeSeriesBatch dataset = generate_synthetic(synth);
    const std::vector<int> labels = dataset.labels();

    std::printf("%-14s %12s %12s %8s\n", "model", "epoch_ms", "std_ms", "repeats");
    std::vector<std::pair<std::string, double>> rows;
    for (ModelKind kind : {ModelKind::gru, ModelKind::grud, ModelKind::ode_rnn,
                           ModelKind::ode_grud, ModelKind::ext_ode_grud}) {
        ModelSpec spec;
        spec.kind = kind;
        spec.hidden_dim = 12;
        spec.solver = {SolverMethod::euler, default_step_size(dataset),
                       GradientMode::discretize};
        Model model(spec, dataset.n_vars, seed);
        TrainConfig config;
        Optimizer optimizer(model.parameters(), config);

        std::vector<double> times_ms;
        for (std::size_t r = 0; r < repeats + 1; ++r) {
            const auto start = std::chrono::steady_clock::now();
            Graph graph;
            {
                auto scope = graph.activate();
                const std::vector<Tensor> logits = model.forward(dataset);
                const Tensor loss = bce_loss(concat(std::span<const Tensor>(logits)), labels);
                graph.backward(loss);
            }
            optimizer.step();
            const double ms = std::chrono::duration<double, std::milli>(
                                  std::chrono::steady_clock::now() - start)
                                  .count();
            if (r > 0) times_ms.push_back(ms); // first pass is warmup
        }
        double mean = 0.0;
        for (double t : times_ms) mean += t;
        mean /= static_cast<double>(times_ms.size());
        double var = 0.0;
        for (double t : times_ms) var += (t - mean) * (t - mean);
        const double std_ms =
            times_ms.size() > 1 ? std::sqrt(var / static_cast<double>(times_ms.size() - 1)) : 0.0;
        std::printf("%-14s %12.2f %12.2f %8zu\n", to_string(kind).c_str(), mean, std_ms, repeats);
        rows.emplace_back(to_string(kind), mean);
    }

    for (SolverMethod method : {SolverMethod::euler, SolverMethod::rk4}) {
        std::mt19937_64 rng(seed);
        const Tensor rates = Tensor::uniform({8}, -1.0, 0.0, rng);
        OdeFunc f{[rates](const Tensor& y, double) { return mul(rates, y); }, {}};
        const Tensor y0 = Tensor::uniform({8}, 0.5, 1.5, rng);
        const SolverSpec spec{method, 0.01, GradientMode::discretize};
        const std::vector<double> grid{0.0, 10.0}; // 1000 internal steps per solve
        NoGradScope no_recording;
        std::size_t steps = 0;
        const auto start = std::chrono::steady_clock::now();
        while (std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() <
               0.2) {
            solve(f, y0, grid, spec);
            steps += 1000;
        }
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("solver %-7s %12.0f steps/s\n", to_string(method).c_str(),
                    static_cast<double>(steps) / seconds);
    }
    return kExitOk;
}

int cmd_synth(const DataFlags& data_flags, std::uint64_t seed, const std::string& out_dir) {
    if (data_flags.synthetic.empty())
        throw ConfigError("synth requires --synthetic <preset>");
    const SyntheticSpec spec = resolve_synthetic(data_flags, seed);
    const TimeSeriesBatch batch = generate_synthetic(spec);
    fs::create_directories(out_dir);
    std::vector<std::string> vocabulary;
    for (std::size_t v = 0; v < batch.n_vars; ++v)
        vocabulary.push_back("var" + std::to_string(v));
    const fs::path triplets = fs::path(out_dir) / "triplets.csv";
    const fs::path labels = fs::path(out_dir) / "labels.csv";
    save_triplets(triplets.string(), batch, vocabulary);
    save_labels(labels.string(), batch);
    std::cout << "wrote " << triplets.string() << " and " << labels.string() << " ("
              << batch.size() << " series, " << batch.n_vars << " variables)\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"tsode: classify irregularly sampled multivariate time series with "
                 "decay-gated recurrent models and ODE-solver-driven hidden states"};
    app.require_subcommand(1);
    app.fallthrough(true); // app-level --config usable after the subcommand
    app.set_config("--config", "", "Config file with key=value lines ([subcommand] sections)");

    ModelFlags model_flags;
    DataFlags data_flags;
    TrainFlags train_flags;
    std::uint64_t seed = 1;
    std::string out_dir = "tsode_run";
    std::string checkpoint_path;
    std::string gradcheck_kind = "all";
    std::size_t bench_repeats = 3;

    CLI::App* train_cmd = app.add_subcommand("train", "Train a model and write artifacts");
    add_model_flags(train_cmd, model_flags);
    add_data_flags(train_cmd, data_flags);
    add_train_flags(train_cmd, train_flags);
    train_cmd->add_option("--seed", seed, "Seed for init, splits and shuffling")
        ->capture_default_str();
    train_cmd->add_option("--out", out_dir, "Output directory")->capture_default_str();

    CLI::App* eval_cmd = app.add_subcommand("eval", "Score a dataset with a checkpoint");
    eval_cmd->add_option("--checkpoint", checkpoint_path, "Path to checkpoint.json")->required();
    add_data_flags(eval_cmd, data_flags);
    eval_cmd->add_option("--seed", seed, "Seed for synthetic data")->capture_default_str();
    eval_cmd->add_option("--out", out_dir, "Directory for scores.csv (optional)")
        ->default_val(std::string());

    CLI::App* gradcheck_cmd =
        app.add_subcommand("gradcheck", "Finite-difference gradient verification");
    gradcheck_cmd->add_option("kind", gradcheck_kind,
                              "Model kind (grud, ode_rnn, ode_grud, ext_ode_grud) or 'all'")
        ->capture_default_str();
    gradcheck_cmd->add_option("--seed", seed, "Parameter draw seed")->capture_default_str();

    CLI::App* bench_cmd = app.add_subcommand("bench", "Per-epoch timing per model kind");
    bench_cmd->add_option("--repeats", bench_repeats, "Timed repetitions per model")
        ->capture_default_str();
    bench_cmd->add_option("--seed", seed, "Workload seed")->capture_default_str();

    CLI::App* synth_cmd = app.add_subcommand("synth", "Emit a synthetic dataset to disk");
    add_data_flags(synth_cmd, data_flags);
    synth_cmd->add_option("--seed", seed, "Generator seed")->capture_default_str();
    synth_cmd->add_option("--out", out_dir, "Output directory")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (train_cmd->parsed())
            return cmd_train(model_flags, data_flags, train_flags, seed, out_dir,
                             app.config_to_str(true, true));
        if (eval_cmd->parsed()) return cmd_eval(checkpoint_path, data_flags, seed, out_dir);
        if (gradcheck_cmd->parsed()) return cmd_gradcheck(gradcheck_kind);
        if (bench_cmd->parsed()) return cmd_bench(bench_repeats, seed);
        if (synth_cmd->parsed()) return cmd_synth(data_flags, seed, out_dir);
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitConfig;
}
