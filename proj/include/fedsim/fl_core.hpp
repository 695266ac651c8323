#pragma once

#include "fedsim/data.hpp"
#include "fedsim/diagnostics.hpp"
#include "fedsim/fedreg.hpp"
#include "fedsim/grad_core.hpp"
#include "fedsim/privacy.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace fedsim {

enum class Algorithm { sgd, fedavg, fedprox, fedcurv, scaffold, fedreg };
Algorithm algorithm_from_string(const std::string& s);
std::string to_string(Algorithm a);

// Local-training hyperparameters. The shuffle and noise seeds are derived per
// (master seed, round, client) by the round loop so that parallel client
// execution is bit-identical to serial execution.
struct LocalTrainConfig {
    Algorithm algorithm = Algorithm::fedavg;
    int epochs = 1;             // S
    int batch_size = 32;
    double learning_rate = 0.1; // eta_theta
    double mu = 0.0;            // FedProx proximal weight
    double lambda = 0.0;        // FedCurv penalty weight
    FedRegConfig fedreg;
    std::optional<DpConfig> dp; // per-step DPSGD when set
    std::uint64_t shuffle_seed = 0;
    std::uint64_t noise_seed = 0;
    void validate() const;
};

struct FedCurvExtras {
    ParamVector fisher_diag;            // diagonal empirical Fisher on the shard
    ParamVector fisher_weighted_params; // fisher_diag (.) trained params
};

struct ClientUpdate {
    int client_id = -1;
    ParamVector params;
    bool flagged = false; // non-finite values encountered; excluded from aggregation
    std::optional<ParamVector> control_delta; // SCAFFOLD delta c_i
    std::optional<FedCurvExtras> fedcurv;
};

// Aggregated FedCurv penalty terms from the other clients' latest extras.
// Penalty gradient at theta: 2 * lambda * (fisher_sum (.) theta - weighted_sum).
struct FedCurvPenalty {
    bool active = false;
    ParamVector fisher_sum;
    ParamVector weighted_sum;
};

struct ServerState {
    int round = 0; // t
    ParamVector params;
    // SCAFFOLD state: global control variate and the per-client variates
    // (kept server-side in this single-process simulation).
    ParamVector c_global;
    std::vector<ParamVector> client_controls; // empty vector = zero
    // FedCurv store: latest extras per client, with the round they arrived in.
    std::vector<std::optional<FedCurvExtras>> fedcurv_store;
    std::vector<int> fedcurv_store_round;
};

// Uniform sample of K distinct clients, returned in ascending id order.
std::vector<int> sample_clients(int n_clients, int k, std::mt19937_64& rng);

// Coordinate-wise unweighted mean.
ParamVector aggregate_average(const std::vector<const ParamVector*>& updates);
ParamVector aggregate_weighted(const std::vector<const ParamVector*>& updates,
                               const std::vector<double>& weights);

ClientUpdate local_train_fedavg(const ModelSpec& spec, const ParamVector& params_prev,
                                const Batch& shard, const LocalTrainConfig& cfg);
ClientUpdate local_train_fedprox(const ModelSpec& spec, const ParamVector& params_prev,
                                 const Batch& shard, const LocalTrainConfig& cfg, double mu);
ClientUpdate local_train_fedcurv(const ModelSpec& spec, const ParamVector& params_prev,
                                 const Batch& shard, const LocalTrainConfig& cfg, double lambda,
                                 const FedCurvPenalty& penalty);
ClientUpdate local_train_scaffold(const ModelSpec& spec, const ParamVector& params_prev,
                                  const Batch& shard, const LocalTrainConfig& cfg,
                                  const ParamVector& c_global, const ParamVector& c_i);
ClientUpdate local_train_fedreg(const ModelSpec& spec, const ParamVector& params_prev,
                                const Batch& shard, const LocalTrainConfig& cfg);

struct RunOptions {
    LocalTrainConfig local;
    int rounds = 1;            // T
    int clients_per_round = 1; // K
    std::uint64_t master_seed = 0;
    int workers = 1;
    bool weight_by_shard_size = false;
    bool fisher_diagnostics = false; // pseudo-vs-previous-data Fisher correlation (fedreg)
    int fisher_window = 10;
    double stop_at_accuracy = -1.0; // stop once test accuracy reaches this (<= 0: off)
    int eval_chunk = 256;
};

struct RunResult {
    std::vector<RoundRecord> records;
    ServerState server;
};

double evaluate_accuracy(const ModelSpec& spec, const ParamVector& params, const Dataset& test,
                         int chunk = 256);

// The federated round loop: sample K clients, locally train each (parallel
// workers, reduced in client-id order), average, evaluate, record. Fully
// deterministic for a fixed master seed regardless of worker count.
RunResult run_rounds(const ModelSpec& spec, const Dataset& train, const ClientPartition& part,
                     const Dataset& test, const ParamVector& init_params, const RunOptions& opts,
                     const std::function<void(const RoundRecord&)>& on_round = {});

} // namespace fedsim
