#include "fedsim/runner.hpp"

#include "fedsim/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace fedsim {

namespace fs = std::filesystem;
using nlohmann::json;

std::string csv_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace {

std::string csv_opt(const std::optional<double>& v) {
    return v ? csv_double(*v) : "nan";
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

json rounds_to_json(const std::vector<double>& acc, double reference, double a) {
    if (reference <= 0.0) return nullptr;
    const auto r = rounds_to_fraction(acc, reference, a);
    return r ? json(*r) : json(nullptr);
}

// Square image shape for a flat feature vector, falling back to a single row.
std::pair<int, int> image_shape(const ExperimentConfig& cfg, int dim) {
    if (cfg.attack.image_rows > 0 && cfg.attack.image_cols > 0) {
        if (cfg.attack.image_rows * cfg.attack.image_cols != dim)
            throw std::runtime_error("attack image shape does not match input dim");
        return {cfg.attack.image_rows, cfg.attack.image_cols};
    }
    const int r = static_cast<int>(std::lround(std::sqrt(static_cast<double>(dim))));
    if (r * r == dim) return {r, r};
    return {1, dim};
}

Matrix row_as_image(const Eigen::RowVectorXd& row, int rows, int cols) {
    Matrix img(rows, cols);
    for (int i = 0; i < rows * cols; ++i) img(i / cols, i % cols) = row(i);
    return img;
}

} // namespace

int cmd_run(const ExperimentConfig& cfg, std::ostream& log) {
    try {
        cfg.validate();
        fs::create_directories(cfg.out_dir);
        write_text(fs::path(cfg.out_dir) / "config.toml", echo_config(cfg));

        const DataBundle data = load_data(cfg);
        const ModelSpec spec = cfg.model_spec();
        const ClientPartition part = partition(data.train, cfg.partition.scheme,
                                               cfg.partition.n_clients,
                                               derive_seed(cfg.seed, "partition"),
                                               cfg.partition.params);
        if (part.dropped_count > 0)
            log << "partition: dropped " << part.dropped_count
                << " leftover examples to preserve the scheme\n";
        const ParamVector init = init_params(spec, derive_seed(cfg.seed, "init"));

        RunOptions opts;
        opts.local = cfg.local;
        opts.rounds = cfg.rounds;
        opts.clients_per_round = cfg.clients_per_round;
        opts.master_seed = cfg.seed;
        opts.workers = cfg.workers;
        opts.weight_by_shard_size = cfg.weight_by_shard_size;
        opts.fisher_diagnostics = cfg.fisher_correlation;
        opts.fisher_window = cfg.fisher_window;
        opts.stop_at_accuracy = cfg.stop_at_accuracy > 0.0 ? cfg.stop_at_accuracy : -1.0;

        std::ofstream csv(fs::path(cfg.out_dir) / "rounds.csv", std::ios::binary);
        if (!csv) throw std::runtime_error("cannot write rounds.csv");
        csv << "round,test_accuracy,mean_loss_prev,mean_loss_curr,forgetting_increment,"
               "fisher_rho,flagged_clients\n";
        csv.flush();

        RunResult result;
        try {
            result = run_rounds(spec, data.train, part, data.test, init, opts,
                                [&](const RoundRecord& rec) {
                                    csv << rec.round << ',' << csv_double(rec.test_accuracy) << ','
                                        << csv_opt(rec.mean_loss_prev) << ','
                                        << csv_opt(rec.mean_loss_curr) << ','
                                        << csv_opt(rec.mean_forgetting_increment) << ','
                                        << csv_opt(rec.fisher_rho) << ',' << rec.flagged_clients
                                        << '\n';
                                    csv.flush();
                                });
        } catch (const std::exception& e) {
            // partial rows are already flushed
            log << "run failed: " << e.what() << "\n";
            return 1;
        }

        std::vector<double> acc;
        int flagged_total = 0;
        for (const auto& r : result.records) {
            acc.push_back(r.test_accuracy);
            flagged_total += r.flagged_clients;
        }

        json summary;
        summary["algorithm"] = to_string(cfg.local.algorithm);
        summary["rounds_run"] = static_cast<int>(result.records.size());
        summary["final_accuracy"] = acc.empty() ? 0.0 : acc.back();
        summary["flagged_client_total"] = flagged_total;
        summary["reference_accuracy"] =
            cfg.reference_accuracy > 0.0 ? json(cfg.reference_accuracy) : json(nullptr);
        if (!acc.empty()) {
            summary["rounds_to_frac_0.5"] = rounds_to_json(acc, cfg.reference_accuracy, 0.5);
            summary["rounds_to_frac_0.9"] = rounds_to_json(acc, cfg.reference_accuracy, 0.9);
            summary["rounds_to_frac_1.0"] = rounds_to_json(acc, cfg.reference_accuracy, 1.0);
        }
        // mean per-layer Fisher correlations over the rounds that defined them
        if (cfg.fisher_correlation) {
            std::vector<double> sums;
            std::vector<int> counts;
            for (const auto& r : result.records)
                for (std::size_t l = 0; l < r.fisher_rho_per_layer.size(); ++l) {
                    if (sums.size() <= l) {
                        sums.resize(l + 1, 0.0);
                        counts.resize(l + 1, 0);
                    }
                    sums[l] += r.fisher_rho_per_layer[l];
                    ++counts[l];
                }
            json layers = json::array();
            for (std::size_t l = 0; l < sums.size(); ++l)
                layers.push_back(counts[l] ? json(sums[l] / counts[l]) : json(nullptr));
            summary["fisher_rho_per_layer_mean"] = layers;
        }
        write_text(fs::path(cfg.out_dir) / "summary.json", summary.dump(2) + "\n");

        log << "run complete: " << result.records.size() << " rounds, final accuracy "
            << (acc.empty() ? 0.0 : acc.back()) << "\n";
        return 0;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
        return 1;
    }
}

int cmd_attack(const ExperimentConfig& cfg, std::ostream& log) {
    try {
        cfg.validate();
        fs::create_directories(cfg.out_dir);
        write_text(fs::path(cfg.out_dir) / "config.toml", echo_config(cfg));

        const DataBundle data = load_data(cfg);
        const ModelSpec spec = cfg.model_spec();
        const ParamVector params = init_params(spec, derive_seed(cfg.seed, "init"));
        const auto [rows, cols] = image_shape(cfg, spec.input_dim());

        // seeded draw of target examples from the test set
        std::vector<int> pool(static_cast<std::size_t>(data.test.size()));
        std::iota(pool.begin(), pool.end(), 0);
        auto rng = make_rng(cfg.seed, "attack-targets");
        for (std::size_t i = pool.size(); i > 1; --i) {
            std::uniform_int_distribution<std::size_t> d(0, i - 1);
            std::swap(pool[i - 1], pool[d(rng)]);
        }
        const int n_targets = std::min<int>(cfg.attack.targets, static_cast<int>(pool.size()));

        std::ofstream csv(fs::path(cfg.out_dir) / "psnr.csv", std::ios::binary);
        if (!csv) throw std::runtime_error("cannot write psnr.csv");
        csv << "target,example_index,defense,label_true,label_recovered,psnr_db,objective\n";

        double psnr_sum = 0.0;
        for (int t = 0; t < n_targets; ++t) {
            const int idx = pool[static_cast<std::size_t>(t)];
            const Batch example = make_batch(data.test, {idx});

            SimulatedUpdateConfig sim;
            sim.eta = cfg.local.learning_rate;
            sim.defense = cfg.attack.defense;
            if (cfg.dp_enabled) sim.dp = cfg.dp;
            sim.fedreg = cfg.local.fedreg;
            sim.noise_seed = derive_seed(cfg.seed, "attack-noise", static_cast<std::uint64_t>(t));
            const ParamVector update_true = simulated_update(spec, params, example, sim);

            AttackConfig acfg = cfg.attack.attack;
            acfg.seed = derive_seed(cfg.seed, "attack", static_cast<std::uint64_t>(t));
            ReconResult recon = invert_gradient(spec, params, update_true,
                                                cfg.local.learning_rate, rows, cols, acfg);

            const Matrix truth = row_as_image(example.inputs.row(0), rows, cols);
            recon.psnr_db = psnr(recon.input, truth);
            const double psnr_csv = std::min(recon.psnr_db, 99.0);
            psnr_sum += psnr_csv;

            char name[32];
            std::snprintf(name, sizeof name, "recon_%03d.pgm", t);
            write_pgm_pair((fs::path(cfg.out_dir) / name).string(), truth, recon.input);

            csv << t << ',' << idx << ',' << to_string(cfg.attack.defense) << ','
                << data.test.labels[static_cast<std::size_t>(idx)] << ',' << recon.label << ','
                << csv_double(psnr_csv) << ',' << csv_double(recon.objective) << '\n';
            csv.flush();
        }
        log << "attack complete: " << n_targets << " targets, mean psnr "
            << psnr_sum / n_targets << " dB (defense " << to_string(cfg.attack.defense) << ")\n";
        return 0;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
        return 1;
    }
}

int cmd_partition_stats(const ExperimentConfig& cfg, std::ostream& log) {
    try {
        cfg.validate();
        fs::create_directories(cfg.out_dir);
        const DataBundle data = load_data(cfg);
        const ClientPartition part = partition(data.train, cfg.partition.scheme,
                                               cfg.partition.n_clients,
                                               derive_seed(cfg.seed, "partition"),
                                               cfg.partition.params);

        std::ofstream csv(fs::path(cfg.out_dir) / "partition.csv", std::ios::binary);
        if (!csv) throw std::runtime_error("cannot write partition.csv");
        csv << "client,size,n_classes,classes\n";

        std::size_t total = 0, min_size = SIZE_MAX, max_size = 0;
        std::map<int, int> size_hist;
        bool all_single_class = true;
        for (int c = 0; c < part.n_clients(); ++c) {
            const auto& idxs = part.assignments[static_cast<std::size_t>(c)];
            std::vector<int> classes;
            for (int i : idxs) classes.push_back(data.train.labels[static_cast<std::size_t>(i)]);
            std::sort(classes.begin(), classes.end());
            classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
            all_single_class = all_single_class && classes.size() == 1;
            total += idxs.size();
            min_size = std::min(min_size, idxs.size());
            max_size = std::max(max_size, idxs.size());
            ++size_hist[static_cast<int>(idxs.size())];
            csv << c << ',' << idxs.size() << ',' << classes.size() << ',';
            for (std::size_t k = 0; k < classes.size(); ++k) csv << (k ? " " : "") << classes[k];
            csv << '\n';
        }

        log << "scheme: " << to_string(part.scheme) << "\n";
        log << "clients: " << part.n_clients() << "\n";
        log << "examples assigned: " << total << " (dropped " << part.dropped_count << ")\n";
        log << "client size min/mean/max: " << min_size << "/"
            << static_cast<double>(total) / part.n_clients() << "/" << max_size << "\n";
        if (all_single_class) log << "classes per client: 1\n";
        log << "size histogram:\n";
        for (const auto& [size, count] : size_hist)
            log << "  " << size << " examples: " << count << " clients\n";
        return 0;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
        return 1;
    }
}

int cmd_diagnose(const std::string& rounds_csv, double reference_accuracy, std::ostream& log) {
    try {
        std::ifstream in(rounds_csv);
        if (!in) throw std::runtime_error("cannot open " + rounds_csv);
        std::string line;
        if (!std::getline(in, line)) throw std::runtime_error(rounds_csv + " is empty");
        std::vector<double> acc;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::istringstream ss(line);
            std::string round_field, acc_field;
            if (!std::getline(ss, round_field, ',') || !std::getline(ss, acc_field, ','))
                throw std::runtime_error("malformed rounds.csv row: " + line);
            acc.push_back(std::stod(acc_field));
        }
        if (acc.empty()) throw std::runtime_error(rounds_csv + " has no data rows");
        if (reference_accuracy <= 0.0)
            throw std::runtime_error("diagnose needs --reference > 0");

        log << "rounds: " << acc.size() << "\n";
        log << "final accuracy: " << acc.back() << "\n";
        log << "reference accuracy: " << reference_accuracy << "\n";
        for (double a : {0.5, 0.9, 1.0}) {
            const auto r = rounds_to_fraction(acc, reference_accuracy, a);
            log << "rounds to " << a * 100 << "% of reference: " << (r ? std::to_string(*r) : "-")
                << "\n";
        }
        return 0;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace fedsim
