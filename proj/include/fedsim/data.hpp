#pragma once

#include "fedsim/grad_core.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fedsim {

// Labeled dataset with features scaled to [0,1].
struct Dataset {
    Matrix features;         // N x d
    std::vector<int> labels; // N entries in [0, n_classes)
    int n_classes = 0;

    Eigen::Index size() const { return features.rows(); }
    int dim() const { return static_cast<int>(features.cols()); }
    void validate() const; // throws std::invalid_argument
};

enum class PartitionScheme { one_class, two_class, uniform_random, power_law_one_class };

PartitionScheme partition_scheme_from_string(const std::string& s);
std::string to_string(PartitionScheme s);

struct PartitionParams {
    double power_law_exponent = 1.5;
    int min_client_size = 2;
};

// Disjoint per-client example-index lists. Leftover examples that would break
// a scheme's invariant are dropped, not reassigned; dropped_count records them.
struct ClientPartition {
    std::vector<std::vector<int>> assignments;
    PartitionScheme scheme = PartitionScheme::uniform_random;
    int dropped_count = 0;

    int n_clients() const { return static_cast<int>(assignments.size()); }
};

// Reads an IDX image/label file pair (big-endian counts, magic 0x00000803 and
// 0x00000801). Pixel bytes are scaled by 1/255. Throws std::runtime_error with
// a byte offset on malformed input.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Writes a dataset back out as an IDX pair; features are quantized to bytes.
// Counterpart of load_idx, used for fixtures and generated corpora.
void save_idx(const Dataset& ds, int rows, int cols, const std::string& images_path,
              const std::string& labels_path);

// Gaussian blobs, one per class, means on a deterministic lattice in [0,1]^d,
// samples clipped to [0,1]. Fully reproducible from the seed.
Dataset synth_blobs(int n_classes, int dim, int per_class, double spread, std::uint64_t seed);

ClientPartition partition(const Dataset& dataset, PartitionScheme scheme, int n_clients,
                          std::uint64_t seed, const PartitionParams& params = {});

// Standard basis row e_label as a 1 x n soft-label matrix row.
Eigen::RowVectorXd one_hot(int label, int n);

// Assembles the batch for a set of example indices (one-hot targets).
Batch make_batch(const Dataset& ds, const std::vector<int>& indices);

} // namespace fedsim
