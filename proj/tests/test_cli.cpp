// End-to-end checks of the tsode binary (path provided by the build).
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;
};

RunResult run_cli(const std::string& args) {
    const fs::path out = fs::temp_directory_path() / "tsode_cli_out.txt";
    const std::string command =
        std::string(TSODE_CLI_PATH) + " " + args + " > " + out.string() + " 2>&1";
    const int status = std::system(command.c_str());
    RunResult result;
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(out);
    std::stringstream ss;
    ss << in.rdbuf();
    result.output = ss.str();
    return result;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::size_t count_lines(const std::string& text) {
    return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

} // namespace

TEST_SUITE("cli") {

TEST_CASE("help documents flags with defaults") {
    for (const char* cmd : {"train", "eval", "gradcheck", "bench", "synth"}) {
        const RunResult r = run_cli(std::string(cmd) + " --help");
        CAPTURE(cmd);
        CHECK(r.exit_code == 0);
        CHECK(r.output.find("--help") != std::string::npos);
    }
    CHECK(run_cli("train --help").output.find("--epochs") != std::string::npos);
    CHECK(run_cli("train --help").output.find("--seed") != std::string::npos);
}

TEST_CASE("train writes one metrics row per epoch and is deterministic") {
    const fs::path dir1 = fresh_dir("tsode_cli_train1");
    const fs::path dir2 = fresh_dir("tsode_cli_train2");
    const std::string base = "train --model grud --synthetic default --synth-n 60 --seed 7 "
                             "--epochs 4 --patience 10 --hidden-dim 4 --out ";
    const RunResult r1 = run_cli(base + dir1.string());
    REQUIRE(r1.exit_code == 0);
    const std::string metrics = slurp(dir1 / "metrics.csv");
    CHECK(count_lines(metrics) == 5); // header + 4 epochs
    CHECK(metrics.rfind("epoch,train_loss,val_auc", 0) == 0);
    CHECK(fs::exists(dir1 / "checkpoint.json"));
    CHECK(fs::exists(dir1 / "summary.json"));
    CHECK(fs::exists(dir1 / "config_resolved.ini"));

    const RunResult r2 = run_cli(base + dir2.string());
    REQUIRE(r2.exit_code == 0);
    CHECK(slurp(dir1 / "metrics.csv") == slurp(dir2 / "metrics.csv"));
    CHECK(slurp(dir1 / "summary.json") == slurp(dir2 / "summary.json"));
    CHECK(slurp(dir1 / "checkpoint.json") == slurp(dir2 / "checkpoint.json"));
}

TEST_CASE("config file values apply under CLI precedence") {
    const fs::path dir = fresh_dir("tsode_cli_config");
    const fs::path config = dir / "run.ini";
    {
        std::ofstream out(config);
        out << "[train]\n"
            << "model=grud\n"
            << "synthetic=default\n"
            << "synth-n=60\n"
            << "hidden-dim=4\n"
            << "epochs=3\n"
            << "patience=10\n"
            << "seed=5\n";
    }
    // --epochs on the command line overrides the config file
    const RunResult r = run_cli("train --config " + config.string() + " --epochs 2 --out " +
                                (dir / "run").string());
    REQUIRE(r.exit_code == 0);
    CHECK(count_lines(slurp(dir / "run" / "metrics.csv")) == 3); // header + 2 epochs
}

TEST_CASE("eval reports auc and writes scores") {
    const fs::path dir = fresh_dir("tsode_cli_eval");
    REQUIRE(run_cli("train --model grud --synthetic separable --synth-n 80 --seed 3 --epochs 8 "
                    "--hidden-dim 4 --patience 10 --out " +
                    (dir / "train").string())
                .exit_code == 0);
    const RunResult r = run_cli("eval --checkpoint " + (dir / "train" / "checkpoint.json").string() +
                                " --synthetic separable --synth-n 80 --seed 3 --out " +
                                (dir / "eval").string());
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("auc") != std::string::npos);
    const std::string scores = slurp(dir / "eval" / "scores.csv");
    CHECK(scores.rfind("series_id,score,label", 0) == 0);
    CHECK(count_lines(scores) == 81);

    // converged run: training-data AUC close to perfect
    const std::size_t pos = r.output.find("auc ");
    const double auc_value = std::stod(r.output.substr(pos + 4));
    CHECK(auc_value >= 0.9);
}

TEST_CASE("eval on shuffled labels lands near chance") {
    const fs::path dir = fresh_dir("tsode_cli_shuffle");
    REQUIRE(run_cli("synth --synthetic separable --synth-n 120 --seed 11 --out " +
                    (dir / "data").string())
                .exit_code == 0);
    REQUIRE(run_cli("train --model grud --synthetic separable --synth-n 120 --seed 11 "
                    "--epochs 8 --hidden-dim 4 --patience 10 --out " +
                    (dir / "train").string())
                .exit_code == 0);

    // shuffle the label column deterministically
    std::vector<std::string> ids;
    std::vector<std::string> labels;
    {
        std::ifstream in(dir / "data" / "labels.csv");
        std::string line;
        std::getline(in, line); // header
        while (std::getline(in, line)) {
            const auto comma = line.find(',');
            ids.push_back(line.substr(0, comma));
            labels.push_back(line.substr(comma + 1));
        }
    }
    std::mt19937_64 rng(4);
    std::shuffle(labels.begin(), labels.end(), rng);
    {
        std::ofstream out(dir / "data" / "labels.csv");
        out << "series_id,label\n";
        for (std::size_t i = 0; i < ids.size(); ++i) out << ids[i] << ',' << labels[i] << '\n';
    }
    const RunResult r = run_cli("eval --checkpoint " + (dir / "train" / "checkpoint.json").string() +
                                " --data " + (dir / "data" / "triplets.csv").string() +
                                " --labels " + (dir / "data" / "labels.csv").string());
    REQUIRE(r.exit_code == 0);
    const std::size_t pos = r.output.find("auc ");
    const double auc_value = std::stod(r.output.substr(pos + 4));
    CHECK(auc_value > 0.4);
    CHECK(auc_value < 0.6);
}

TEST_CASE("train consumes triplet files written by synth") {
    const fs::path dir = fresh_dir("tsode_cli_files");
    REQUIRE(run_cli("synth --synthetic default --synth-n 60 --seed 13 --out " +
                    (dir / "data").string())
                .exit_code == 0);
    const RunResult r = run_cli("train --model gru --data " +
                                (dir / "data" / "triplets.csv").string() + " --labels " +
                                (dir / "data" / "labels.csv").string() +
                                " --epochs 2 --hidden-dim 3 --seed 1 --out " +
                                (dir / "train").string());
    CHECK(r.exit_code == 0);
}

TEST_CASE("synth output is reproducible per seed") {
    const fs::path a = fresh_dir("tsode_cli_syn_a");
    const fs::path b = fresh_dir("tsode_cli_syn_b");
    REQUIRE(run_cli("synth --synthetic random --synth-n 30 --seed 21 --out " + a.string())
                .exit_code == 0);
    REQUIRE(run_cli("synth --synthetic random --synth-n 30 --seed 21 --out " + b.string())
                .exit_code == 0);
    CHECK(slurp(a / "triplets.csv") == slurp(b / "triplets.csv"));
    CHECK(slurp(a / "labels.csv") == slurp(b / "labels.csv"));
}

TEST_CASE("usage errors exit with code 2") {
    CHECK(run_cli("train --model nosuch --synthetic default --out /tmp/tsode_cli_x").exit_code ==
          2);
    CHECK(run_cli("train --out /tmp/tsode_cli_x").exit_code == 2); // no data source
    CHECK(run_cli("train --synthetic default --data foo.csv --out /tmp/tsode_cli_x").exit_code ==
          2); // two data sources
    CHECK(run_cli("eval --checkpoint /nonexistent.json --synthetic default").exit_code == 2);
    CHECK(run_cli("gradcheck nosuchmodel").exit_code == 2);
    CHECK(run_cli("nosuchcommand").exit_code == 2);
}

TEST_CASE("gradcheck subcommand passes per model kind") {
    CHECK(run_cli("gradcheck grud").exit_code == 0);
    const RunResult r = run_cli("gradcheck ode_grud");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("worst_rel_error") != std::string::npos);
}

TEST_CASE("bench reports one row per model and solver throughput") {
    const RunResult r = run_cli("bench --repeats 2 --seed 3");
    REQUIRE(r.exit_code == 0);
    double grud_ms = 0.0, ode_grud_ms = 0.0;
    std::istringstream lines(r.output);
    std::string line;
    std::size_t model_rows = 0;
    while (std::getline(lines, line)) {
        std::istringstream fields(line);
        std::string name;
        fields >> name;
        if (name == "gru" || name == "grud" || name == "ode_rnn" || name == "ode_grud" ||
            name == "ext_ode_grud") {
            ++model_rows;
            double mean_ms = 0.0;
            fields >> mean_ms;
            if (name == "grud") grud_ms = mean_ms;
            if (name == "ode_grud") ode_grud_ms = mean_ms;
        }
    }
    CHECK(model_rows == 5);
    CHECK(r.output.find("std_ms") != std::string::npos); // run-to-run variance column
    CHECK(r.output.find("steps/s") != std::string::npos);
    // continuous integration does strictly more cell evaluations
    CHECK(ode_grud_ms >= grud_ms);
}

} // TEST_SUITE
