#include "fedsim/config.hpp"
#include "fedsim/runner.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <string>

namespace {

struct CommonFlags {
    std::string config_path;
    std::int64_t seed = -1;
    int workers = 0;
    std::string out_dir;

    void attach(CLI::App* cmd, bool config_required = true) {
        auto* opt = cmd->add_option("--config", config_path, "experiment config (TOML)");
        if (config_required) opt->required();
        cmd->add_option("--seed", seed, "override the master seed");
        cmd->add_option("--workers", workers, "override the worker count");
        cmd->add_option("--out", out_dir, "override the output directory");
    }

    fedsim::ExperimentConfig load() const {
        fedsim::ExperimentConfig cfg = fedsim::parse_config(config_path);
        if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
        if (workers > 0) cfg.workers = workers;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        cfg.validate();
        return cfg;
    }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated learning simulator: FedReg, baselines, and attacks"};
    app.require_subcommand(1);

    CommonFlags run_flags, attack_flags, stats_flags;
    auto* run_cmd = app.add_subcommand("run", "train for the configured rounds");
    run_flags.attach(run_cmd);
    auto* attack_cmd = app.add_subcommand("attack", "gradient-inversion attack on simulated updates");
    attack_flags.attach(attack_cmd);
    auto* stats_cmd = app.add_subcommand("partition-stats", "summarize the client partition");
    stats_flags.attach(stats_cmd);

    std::string rounds_csv;
    double reference = 0.0;
    auto* diag_cmd = app.add_subcommand("diagnose", "rounds-to-accuracy analysis of a rounds.csv");
    diag_cmd->add_option("--rounds-csv", rounds_csv, "recorded rounds.csv")->required();
    diag_cmd->add_option("--reference", reference, "reference final accuracy")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run_cmd->parsed()) return fedsim::cmd_run(run_flags.load(), std::cout);
        if (attack_cmd->parsed()) return fedsim::cmd_attack(attack_flags.load(), std::cout);
        if (stats_cmd->parsed()) return fedsim::cmd_partition_stats(stats_flags.load(), std::cout);
        if (diag_cmd->parsed()) return fedsim::cmd_diagnose(rounds_csv, reference, std::cout);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
