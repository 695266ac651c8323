#pragma once

#include "fedsim/data.hpp"
#include "fedsim/fl_core.hpp"
#include "fedsim/privacy.hpp"

#include <cstdint>
#include <string>

namespace fedsim {

struct DatasetConfig {
    std::string source = "synthetic"; // synthetic | idx
    // idx
    std::string train_images, train_labels, test_images, test_labels;
    // synthetic
    int n_classes = 2;
    int dim = 2;
    int per_class = 100;
    int test_per_class = 50;
    double spread = 0.1;
};

struct PartitionConfig {
    PartitionScheme scheme = PartitionScheme::one_class;
    int n_clients = 10;
    PartitionParams params;
};

struct AttackSection {
    AttackConfig attack;
    AttackDefense defense = AttackDefense::plain;
    int targets = 10;
    int image_rows = 0; // 0: infer a square image from the model input dim
    int image_cols = 0;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    PartitionConfig partition;
    std::vector<int> layer_dims{2, 16, 2};
    LocalTrainConfig local; // algorithm + hyperparameters (dp filled from [dp])
    bool dp_enabled = false;
    DpConfig dp;
    int rounds = 10;
    int clients_per_round = 5;
    bool weight_by_shard_size = false;
    bool fisher_correlation = false;
    int fisher_window = 10;
    double reference_accuracy = 0.0; // for R_a summaries; 0 disables
    double stop_at_accuracy = 0.0;   // early stop; 0 disables
    std::uint64_t seed = 1;
    int workers = 1;
    std::string out_dir = "out";
    AttackSection attack;

    ModelSpec model_spec() const { return ModelSpec{layer_dims}; }
    void validate() const;
};

// Parses and validates a TOML experiment config. Unknown sections or keys are
// rejected by name; defaults (e.g. fgsm_steps = 10, eta_p = 0.01 * eta_s) are
// filled in so the returned struct is fully resolved.
ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

// Canonical TOML echo of a resolved config; parse_config_text(echo_config(c))
// reproduces c exactly.
std::string echo_config(const ExperimentConfig& cfg);

// Materializes the train/test datasets named by the config (synthetic
// generation is seeded from the master seed).
struct DataBundle {
    Dataset train;
    Dataset test;
};
DataBundle load_data(const ExperimentConfig& cfg);

} // namespace fedsim
