#pragma once

#include "fedsim/grad_core.hpp"

#include <optional>
#include <vector>

namespace fedsim {

// Per-round metrics recorded by the round loop.
struct RoundRecord {
    int round = 0;
    double test_accuracy = 0.0;
    // Means over the previous round's sampled clients; unset in round 1.
    std::optional<double> mean_loss_prev;
    std::optional<double> mean_loss_curr;
    std::optional<double> mean_forgetting_increment;
    // Correlation between pseudo-data Fisher and previous-training-data
    // Fisher, mean over this round's sampled clients (FedReg runs only).
    std::optional<double> fisher_rho;
    std::vector<double> fisher_rho_per_layer;
    int flagged_clients = 0;
};

// Mean loss of the previous-round global parameters on a client shard.
double loss_prev(const ModelSpec& spec, const ParamVector& params_prev, const Batch& shard);

// Mean over the shard of the average loss across all sampled clients' locally
// trained parameters.
double loss_curr(const ModelSpec& spec, const std::vector<ParamVector>& sampled_updates,
                 const Batch& shard);

inline double forgetting_increment(double loss_curr_val, double loss_prev_val) {
    return loss_curr_val - loss_prev_val;
}

// Diagonal empirical Fisher information: coordinate-wise mean over examples of
// the squared gradient of y^T log p(y|x).
ParamVector empirical_fisher(const ModelSpec& spec, const ParamVector& params,
                             const Batch& dataset);

// Pearson correlation over the flattened diagonals. Coordinates where both
// entries are below 1e-15 are excluded; returns nullopt when the remaining
// entries have zero variance or fewer than two coordinates survive.
std::optional<double> fisher_correlation(const ParamVector& f_a, const ParamVector& f_b);

// Per-layer variant (weights and biases of each layer together).
std::vector<std::optional<double>> fisher_correlation_per_layer(const ModelSpec& spec,
                                                                const ParamVector& f_a,
                                                                const ParamVector& f_b);

// Smallest 1-indexed round with accuracy >= a * reference_final_acc, or
// nullopt when never reached.
std::optional<int> rounds_to_fraction(const std::vector<double>& accuracy_series,
                                      double reference_final_acc, double a);

} // namespace fedsim
