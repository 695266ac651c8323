#include "fedsim/fl_core.hpp"

#include "fedsim/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace fedsim {

namespace {

bool all_zero(const ParamVector& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

Batch slice_batch(const Batch& shard, const std::vector<int>& positions) {
    Batch b;
    b.inputs.resize(static_cast<Eigen::Index>(positions.size()), shard.inputs.cols());
    b.targets.resize(static_cast<Eigen::Index>(positions.size()), shard.targets.cols());
    for (std::size_t i = 0; i < positions.size(); ++i) {
        b.inputs.row(static_cast<Eigen::Index>(i)) = shard.inputs.row(positions[i]);
        b.targets.row(static_cast<Eigen::Index>(i)) = shard.targets.row(positions[i]);
    }
    return b;
}

Batch slice_rows(const Matrix& inputs, const Matrix& targets, const std::vector<int>& positions) {
    return slice_batch(Batch{inputs, targets}, positions);
}

std::vector<std::vector<int>> epoch_batches(int n, int batch_size, std::mt19937_64& rng) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    // A single batch covering the shard needs no permutation; keeping the
    // natural order makes the full-batch step equal one plain gradient step
    // bit for bit.
    if (batch_size < n) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::uniform_int_distribution<std::size_t> d(0, i - 1);
            std::swap(order[i - 1], order[d(rng)]);
        }
    }
    std::vector<std::vector<int>> batches;
    for (int start = 0; start < n; start += batch_size) {
        const int end = std::min(start + batch_size, n);
        batches.emplace_back(order.begin() + start, order.begin() + end);
    }
    return batches;
}

// Shared minibatch descent loop for the baseline algorithms. transform may
// adjust the raw gradient in place (proximal/penalty/correction terms); DP
// clip-and-noise runs after it. Returns false when a non-finite value
// appears, in which case the caller flags the update.
template <typename TransformFn>
bool descend(const ModelSpec& spec, ParamVector& params, const ParamVector& params_prev,
             const Batch& shard, const LocalTrainConfig& cfg, TransformFn&& transform,
             int* steps_taken = nullptr) {
    const int n = static_cast<int>(shard.inputs.rows());
    std::mt19937_64 shuffle_rng(cfg.shuffle_seed);
    std::mt19937_64 noise_rng(cfg.noise_seed);
    int steps = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (const auto& positions : epoch_batches(n, cfg.batch_size, shuffle_rng)) {
            ParamVector g = grad_params(spec, params, slice_batch(shard, positions));
            transform(g, params);
            if (cfg.dp) g = clip_and_noise(g, *cfg.dp, noise_rng);
            if (!vec_finite(g)) return false;
            vec_axpy(params, -cfg.learning_rate, g);
            if (!vec_finite(params)) return false;
            ++steps;
        }
    }
    if (steps_taken) *steps_taken = steps;
    return true;
}

ClientUpdate make_flagged(const ParamVector& params_prev) {
    ClientUpdate u;
    u.params = params_prev;
    u.flagged = true;
    return u;
}

} // namespace

Algorithm algorithm_from_string(const std::string& s) {
    if (s == "sgd") return Algorithm::sgd;
    if (s == "fedavg") return Algorithm::fedavg;
    if (s == "fedprox") return Algorithm::fedprox;
    if (s == "fedcurv") return Algorithm::fedcurv;
    if (s == "scaffold") return Algorithm::scaffold;
    if (s == "fedreg") return Algorithm::fedreg;
    throw std::invalid_argument("unknown algorithm: " + s);
}

std::string to_string(Algorithm a) {
    switch (a) {
        case Algorithm::sgd: return "sgd";
        case Algorithm::fedavg: return "fedavg";
        case Algorithm::fedprox: return "fedprox";
        case Algorithm::fedcurv: return "fedcurv";
        case Algorithm::scaffold: return "scaffold";
        case Algorithm::fedreg: return "fedreg";
    }
    return "?";
}

void LocalTrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be > 0");
    if (mu < 0.0) throw std::invalid_argument("mu must be >= 0");
    if (lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
    if (algorithm == Algorithm::fedreg) {
        fedreg.validate();
        if (dp) throw std::invalid_argument("dp noise with fedreg is not supported; use use_mg");
    }
    if (dp) dp->validate();
}

std::vector<int> sample_clients(int n_clients, int k, std::mt19937_64& rng) {
    if (k < 1 || k > n_clients) throw std::invalid_argument("cannot sample " + std::to_string(k) +
                                                            " of " + std::to_string(n_clients) +
                                                            " clients");
    std::vector<int> ids(static_cast<std::size_t>(n_clients));
    std::iota(ids.begin(), ids.end(), 0);
    // Partial Fisher-Yates: the first k entries are a uniform sample.
    for (int i = 0; i < k; ++i) {
        std::uniform_int_distribution<int> d(i, n_clients - 1);
        std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(d(rng))]);
    }
    ids.resize(static_cast<std::size_t>(k));
    std::sort(ids.begin(), ids.end());
    return ids;
}

namespace {

// Sums each coordinate over the sorted addends so the result does not depend
// on the order of the update list (bit-exact permutation invariance).
ParamVector sorted_coordinate_mean(const std::vector<std::vector<double>>& addends,
                                   std::size_t len, double divisor) {
    ParamVector out(len, 0.0);
    std::vector<double> column(addends.size());
    for (std::size_t i = 0; i < len; ++i) {
        for (std::size_t k = 0; k < addends.size(); ++k) column[k] = addends[k][i];
        std::sort(column.begin(), column.end());
        double acc = 0.0;
        for (double v : column) acc += v;
        out[i] = acc / divisor;
    }
    return out;
}

} // namespace

ParamVector aggregate_average(const std::vector<const ParamVector*>& updates) {
    if (updates.empty()) throw std::invalid_argument("cannot aggregate an empty update list");
    const std::size_t len = updates.front()->size();
    std::vector<std::vector<double>> addends;
    addends.reserve(updates.size());
    for (const ParamVector* u : updates) {
        if (u->size() != len) throw std::invalid_argument("update length mismatch");
        addends.push_back(*u);
    }
    return sorted_coordinate_mean(addends, len, static_cast<double>(updates.size()));
}

ParamVector aggregate_weighted(const std::vector<const ParamVector*>& updates,
                               const std::vector<double>& weights) {
    if (updates.empty()) throw std::invalid_argument("cannot aggregate an empty update list");
    if (updates.size() != weights.size())
        throw std::invalid_argument("weight count mismatch");
    std::vector<double> sorted_weights = weights;
    std::sort(sorted_weights.begin(), sorted_weights.end());
    double total = 0.0;
    for (double w : sorted_weights) total += w;
    if (total <= 0.0) throw std::invalid_argument("weights must sum to a positive value");
    const std::size_t len = updates.front()->size();
    std::vector<std::vector<double>> addends;
    addends.reserve(updates.size());
    for (std::size_t k = 0; k < updates.size(); ++k) {
        if (updates[k]->size() != len)
            throw std::invalid_argument("update length mismatch");
        std::vector<double> scaled = *updates[k];
        for (double& v : scaled) v *= weights[k];
        addends.push_back(std::move(scaled));
    }
    return sorted_coordinate_mean(addends, len, total);
}

ClientUpdate local_train_fedavg(const ModelSpec& spec, const ParamVector& params_prev,
                                const Batch& shard, const LocalTrainConfig& cfg) {
    if (shard.inputs.rows() < 1) throw std::invalid_argument("shard must be non-empty");
    ClientUpdate u;
    u.params = params_prev;
    if (!descend(spec, u.params, params_prev, shard, cfg, [](ParamVector&, const ParamVector&) {}))
        return make_flagged(params_prev);
    return u;
}

ClientUpdate local_train_fedprox(const ModelSpec& spec, const ParamVector& params_prev,
                                 const Batch& shard, const LocalTrainConfig& cfg, double mu) {
    if (mu < 0.0) throw std::invalid_argument("mu must be >= 0");
    if (shard.inputs.rows() < 1) throw std::invalid_argument("shard must be non-empty");
    ClientUpdate u;
    u.params = params_prev;
    auto prox = [&](ParamVector& g, const ParamVector& theta) {
        if (mu == 0.0) return; // keep the mu = 0 path bit-identical to fedavg
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += mu * (theta[i] - params_prev[i]);
    };
    if (!descend(spec, u.params, params_prev, shard, cfg, prox)) return make_flagged(params_prev);
    return u;
}

ClientUpdate local_train_fedcurv(const ModelSpec& spec, const ParamVector& params_prev,
                                 const Batch& shard, const LocalTrainConfig& cfg, double lambda,
                                 const FedCurvPenalty& penalty) {
    if (lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
    if (shard.inputs.rows() < 1) throw std::invalid_argument("shard must be non-empty");
    if (penalty.active &&
        (penalty.fisher_sum.size() != params_prev.size() ||
         penalty.weighted_sum.size() != params_prev.size()))
        throw std::invalid_argument("FedCurv penalty state does not match model");

    ClientUpdate u;
    u.params = params_prev;
    auto ewc = [&](ParamVector& g, const ParamVector& theta) {
        if (lambda == 0.0 || !penalty.active) return;
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += 2.0 * lambda * (penalty.fisher_sum[i] * theta[i] - penalty.weighted_sum[i]);
    };
    if (!descend(spec, u.params, params_prev, shard, cfg, ewc)) return make_flagged(params_prev);

    FedCurvExtras extras;
    extras.fisher_diag = empirical_fisher(spec, u.params, shard);
    extras.fisher_weighted_params.resize(u.params.size());
    for (std::size_t i = 0; i < u.params.size(); ++i)
        extras.fisher_weighted_params[i] = extras.fisher_diag[i] * u.params[i];
    u.fedcurv = std::move(extras);
    return u;
}

ClientUpdate local_train_scaffold(const ModelSpec& spec, const ParamVector& params_prev,
                                  const Batch& shard, const LocalTrainConfig& cfg,
                                  const ParamVector& c_global, const ParamVector& c_i) {
    if (shard.inputs.rows() < 1) throw std::invalid_argument("shard must be non-empty");
    if (c_global.size() != params_prev.size() || c_i.size() != params_prev.size())
        throw std::invalid_argument("control variate length mismatch");

    // Correction term c_global - c_i; skipping the all-zero case keeps the
    // first round bit-identical to fedavg.
    ParamVector correction(params_prev.size(), 0.0);
    const bool use_correction = !(all_zero(c_global) && all_zero(c_i));
    if (use_correction)
        for (std::size_t i = 0; i < correction.size(); ++i)
            correction[i] = c_global[i] - c_i[i];

    ClientUpdate u;
    u.params = params_prev;
    int steps = 0;
    auto corrected = [&](ParamVector& g, const ParamVector&) {
        if (use_correction) vec_axpy(g, 1.0, correction);
    };
    if (!descend(spec, u.params, params_prev, shard, cfg, corrected, &steps))
        return make_flagged(params_prev);

    // Control-variate update, option II: the difference quotient of the
    // whole local pass. c_i' = c_i - c_global + (prev - trained)/(steps*eta).
    ParamVector delta(params_prev.size());
    const double scale = 1.0 / (static_cast<double>(steps) * cfg.learning_rate);
    for (std::size_t i = 0; i < delta.size(); ++i)
        delta[i] = -c_global[i] + (params_prev[i] - u.params[i]) * scale;
    u.control_delta = std::move(delta);
    return u;
}

ClientUpdate local_train_fedreg(const ModelSpec& spec, const ParamVector& params_prev,
                                const Batch& shard, const LocalTrainConfig& cfg) {
    if (shard.inputs.rows() < 1) throw std::invalid_argument("shard must be non-empty");
    cfg.fedreg.validate();
    const FedRegConfig& fr = cfg.fedreg;
    const int n = static_cast<int>(shard.inputs.rows());

    // Pseudo and perturbed sets are generated once per round from the incoming
    // global parameters, before any local step.
    const PseudoSet pseudo =
        gen_pseudo(spec, params_prev, shard, fr.eta_s, fr.fgsm_steps, fr.clip_inputs);
    const PerturbSet perturbed = gen_perturbed(spec, params_prev, shard, fr.resolved_eta_p(),
                                               fr.fgsm_steps, fr.clip_inputs);
    Batch uniform_set;
    if (fr.use_mg) uniform_set = build_uniform_label_set(pseudo, spec.n_classes());

    ClientUpdate u;
    u.params = params_prev;
    std::mt19937_64 shuffle_rng(cfg.shuffle_seed);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (const auto& positions : epoch_batches(n, cfg.batch_size, shuffle_rng)) {
            // (a) descend along the slow-update gradient of the local batch
            ParamVector g_step =
                grad_at_mix(spec, u.params, params_prev, fr.gamma, slice_batch(shard, positions));
            if (fr.use_mg) {
                const ParamVector g_prime =
                    grad_at_mix(spec, u.params, params_prev, fr.gamma,
                                slice_rows(uniform_set.inputs, uniform_set.targets, positions));
                g_step = modified_gradient(g_step, g_prime);
            }
            if (!vec_finite(g_step)) return make_flagged(params_prev);
            vec_axpy(u.params, -cfg.learning_rate, g_step);

            // (b) midpoint gradients on the index-aligned pseudo/perturbed batches
            const ParamVector g_s =
                grad_at_mix(spec, u.params, params_prev, 0.5,
                            slice_rows(pseudo.inputs, pseudo.targets, positions));
            const ParamVector g_p =
                grad_at_mix(spec, u.params, params_prev, 0.5,
                            slice_rows(perturbed.inputs, perturbed.targets, positions));

            // (c) sequential halfspace projections
            const ProjectionWeights w = project_weights(u.params, params_prev, g_s, g_p);
            if (w.w_s != 0.0) vec_axpy(u.params, -w.w_s, g_s);
            if (w.w_p != 0.0) vec_axpy(u.params, -w.w_p, g_p);
            if (!vec_finite(u.params)) return make_flagged(params_prev);
        }
    }
    return u;
}

double evaluate_accuracy(const ModelSpec& spec, const ParamVector& params, const Dataset& test,
                         int chunk) {
    const Eigen::Index n = test.size();
    Eigen::Index correct = 0;
    for (Eigen::Index start = 0; start < n; start += chunk) {
        const Eigen::Index len = std::min<Eigen::Index>(chunk, n - start);
        const Matrix probs = forward(spec, params, test.features.middleRows(start, len));
        for (Eigen::Index i = 0; i < len; ++i)
            if (argmax_row(probs, i) == test.labels[static_cast<std::size_t>(start + i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

namespace {

// Per-round dispatch of one client's local training.
ClientUpdate train_client(const ModelSpec& spec, const Dataset& train,
                          const ClientPartition& part, const ParamVector& params_prev,
                          const RunOptions& opts, const ServerState& server, int round,
                          int client_id, const FedCurvPenalty& penalty) {
    const Batch shard = make_batch(train, part.assignments[static_cast<std::size_t>(client_id)]);
    LocalTrainConfig cfg = opts.local;
    cfg.shuffle_seed = derive_seed(opts.master_seed, "shuffle", static_cast<std::uint64_t>(round),
                                   static_cast<std::uint64_t>(client_id));
    cfg.noise_seed = derive_seed(opts.master_seed, "dpnoise", static_cast<std::uint64_t>(round),
                                 static_cast<std::uint64_t>(client_id));

    ClientUpdate u;
    switch (cfg.algorithm) {
        case Algorithm::sgd: {
            // One step over the whole shard in a single batch.
            LocalTrainConfig sgd_cfg = cfg;
            sgd_cfg.epochs = 1;
            sgd_cfg.batch_size = static_cast<int>(shard.inputs.rows());
            u = local_train_fedavg(spec, params_prev, shard, sgd_cfg);
            break;
        }
        case Algorithm::fedavg:
            u = local_train_fedavg(spec, params_prev, shard, cfg);
            break;
        case Algorithm::fedprox:
            u = local_train_fedprox(spec, params_prev, shard, cfg, cfg.mu);
            break;
        case Algorithm::fedcurv:
            u = local_train_fedcurv(spec, params_prev, shard, cfg, cfg.lambda, penalty);
            break;
        case Algorithm::scaffold: {
            const ParamVector& stored = server.client_controls[static_cast<std::size_t>(client_id)];
            ParamVector c_i = stored.empty() ? ParamVector(params_prev.size(), 0.0) : stored;
            u = local_train_scaffold(spec, params_prev, shard, cfg, server.c_global, c_i);
            break;
        }
        case Algorithm::fedreg:
            u = local_train_fedreg(spec, params_prev, shard, cfg);
            break;
    }
    u.client_id = client_id;
    return u;
}

} // namespace

RunResult run_rounds(const ModelSpec& spec, const Dataset& train, const ClientPartition& part,
                     const Dataset& test, const ParamVector& init_params, const RunOptions& opts,
                     const std::function<void(const RoundRecord&)>& on_round) {
    spec.validate();
    opts.local.validate();
    if (opts.rounds < 0) throw std::invalid_argument("rounds must be >= 0");
    if (opts.clients_per_round < 1 || opts.clients_per_round > part.n_clients())
        throw std::invalid_argument("clients_per_round out of range");
    if (init_params.size() != spec.param_count())
        throw std::invalid_argument("initial parameters do not match model");

    RunResult result;
    ServerState& server = result.server;
    server.params = init_params;
    server.c_global.assign(spec.param_count(), 0.0);
    server.client_controls.assign(static_cast<std::size_t>(part.n_clients()), {});
    server.fedcurv_store.assign(static_cast<std::size_t>(part.n_clients()), std::nullopt);
    server.fedcurv_store_round.assign(static_cast<std::size_t>(part.n_clients()), -1);

    std::vector<int> prev_sampled;
    std::vector<std::vector<int>> sampled_history;

    for (int round = 1; round <= opts.rounds; ++round) {
        auto sample_rng = make_rng(opts.master_seed, "sample", static_cast<std::uint64_t>(round));
        const std::vector<int> sampled =
            sample_clients(part.n_clients(), opts.clients_per_round, sample_rng);
        const ParamVector params_prev = server.params; // theta^(t-1)

        // FedCurv penalties are assembled serially before the parallel phase;
        // each is the store-wide sum minus the client's own latest extras.
        std::vector<FedCurvPenalty> penalties(sampled.size());
        if (opts.local.algorithm == Algorithm::fedcurv) {
            FedCurvPenalty total;
            total.fisher_sum.assign(spec.param_count(), 0.0);
            total.weighted_sum.assign(spec.param_count(), 0.0);
            int stored = 0;
            for (const auto& e : server.fedcurv_store)
                if (e) {
                    vec_axpy(total.fisher_sum, 1.0, e->fisher_diag);
                    vec_axpy(total.weighted_sum, 1.0, e->fisher_weighted_params);
                    ++stored;
                }
            for (std::size_t s = 0; s < sampled.size(); ++s) {
                FedCurvPenalty p = total;
                const auto& own = server.fedcurv_store[static_cast<std::size_t>(sampled[s])];
                if (own) {
                    vec_axpy(p.fisher_sum, -1.0, own->fisher_diag);
                    vec_axpy(p.weighted_sum, -1.0, own->fisher_weighted_params);
                }
                p.active = stored > (own ? 1 : 0);
                penalties[s] = std::move(p);
            }
        }

        // Parallel local training; slots keep client-id order so reduction is
        // identical for any worker count.
        std::vector<ClientUpdate> updates(sampled.size());
        std::vector<std::exception_ptr> errors(sampled.size());
        std::atomic<std::size_t> next{0};
        auto work = [&]() {
            for (;;) {
                const std::size_t s = next.fetch_add(1);
                if (s >= sampled.size()) break;
                try {
                    updates[s] = train_client(spec, train, part, params_prev, opts, server, round,
                                              sampled[s], penalties[s]);
                } catch (...) {
                    errors[s] = std::current_exception();
                }
            }
        };
        const int n_workers = std::max(1, std::min<int>(opts.workers,
                                                        static_cast<int>(sampled.size())));
        if (n_workers == 1) {
            work();
        } else {
            std::vector<std::thread> pool;
            pool.reserve(static_cast<std::size_t>(n_workers));
            for (int w = 0; w < n_workers; ++w) pool.emplace_back(work);
            for (auto& th : pool) th.join();
        }
        for (const auto& e : errors)
            if (e) std::rethrow_exception(e);

        std::vector<const ParamVector*> good;
        std::vector<double> weights;
        int flagged = 0;
        for (const auto& u : updates) {
            if (u.flagged) {
                ++flagged;
                continue;
            }
            good.push_back(&u.params);
            weights.push_back(static_cast<double>(
                part.assignments[static_cast<std::size_t>(u.client_id)].size()));
        }
        if (good.empty())
            throw std::runtime_error("round " + std::to_string(round) +
                                     ": every sampled client diverged");

        server.params = opts.weight_by_shard_size ? aggregate_weighted(good, weights)
                                                  : aggregate_average(good);
        if (!vec_finite(server.params))
            throw std::runtime_error("round " + std::to_string(round) +
                                     ": aggregated parameters are non-finite");
        server.round = round;

        // Per-algorithm server state updates.
        if (opts.local.algorithm == Algorithm::scaffold) {
            ParamVector mean_delta(spec.param_count(), 0.0);
            int n_delta = 0;
            for (const auto& u : updates)
                if (!u.flagged && u.control_delta) {
                    vec_axpy(mean_delta, 1.0, *u.control_delta);
                    auto& c_i = server.client_controls[static_cast<std::size_t>(u.client_id)];
                    if (c_i.empty()) c_i.assign(spec.param_count(), 0.0);
                    vec_axpy(c_i, 1.0, *u.control_delta);
                    ++n_delta;
                }
            if (n_delta > 0) {
                const double scale = static_cast<double>(opts.clients_per_round) /
                                     static_cast<double>(part.n_clients()) /
                                     static_cast<double>(n_delta);
                vec_axpy(server.c_global, scale, mean_delta);
            }
        }
        if (opts.local.algorithm == Algorithm::fedcurv) {
            for (auto& u : updates)
                if (!u.flagged && u.fedcurv) {
                    server.fedcurv_store[static_cast<std::size_t>(u.client_id)] =
                        std::move(u.fedcurv);
                    server.fedcurv_store_round[static_cast<std::size_t>(u.client_id)] = round;
                }
        }

        RoundRecord rec;
        rec.round = round;
        rec.flagged_clients = flagged;
        rec.test_accuracy = evaluate_accuracy(spec, server.params, test, opts.eval_chunk);

        // Forgetting diagnostics over the previous round's sample.
        if (!prev_sampled.empty()) {
            std::vector<ParamVector> trained;
            for (const auto& u : updates)
                if (!u.flagged) trained.push_back(u.params);
            double sum_prev = 0.0, sum_curr = 0.0;
            for (int j : prev_sampled) {
                const Batch shard_j =
                    make_batch(train, part.assignments[static_cast<std::size_t>(j)]);
                sum_prev += loss_prev(spec, params_prev, shard_j);
                sum_curr += loss_curr(spec, trained, shard_j);
            }
            const double m = static_cast<double>(prev_sampled.size());
            rec.mean_loss_prev = sum_prev / m;
            rec.mean_loss_curr = sum_curr / m;
            rec.mean_forgetting_increment = *rec.mean_loss_curr - *rec.mean_loss_prev;
        }

        // Pseudo-data Fisher correlation against the previous training data.
        if (opts.fisher_diagnostics && opts.local.algorithm == Algorithm::fedreg &&
            !sampled_history.empty()) {
            std::vector<int> window_clients;
            const std::size_t lo = sampled_history.size() > static_cast<std::size_t>(opts.fisher_window)
                                       ? sampled_history.size() - opts.fisher_window
                                       : 0;
            for (std::size_t s = lo; s < sampled_history.size(); ++s)
                for (int c : sampled_history[s]) window_clients.push_back(c);
            std::sort(window_clients.begin(), window_clients.end());
            window_clients.erase(std::unique(window_clients.begin(), window_clients.end()),
                                 window_clients.end());
            std::vector<int> prev_indices;
            for (int c : window_clients)
                for (int idx : part.assignments[static_cast<std::size_t>(c)])
                    prev_indices.push_back(idx);
            const Batch prev_data = make_batch(train, prev_indices);

            double rho_sum = 0.0;
            int rho_n = 0;
            std::vector<double> layer_sum(static_cast<std::size_t>(spec.n_layers()), 0.0);
            std::vector<int> layer_n(static_cast<std::size_t>(spec.n_layers()), 0);
            for (const auto& u : updates) {
                if (u.flagged) continue;
                const Batch shard_i =
                    make_batch(train, part.assignments[static_cast<std::size_t>(u.client_id)]);
                const PseudoSet ps = gen_pseudo(spec, params_prev, shard_i, opts.local.fedreg.eta_s,
                                                opts.local.fedreg.fgsm_steps,
                                                opts.local.fedreg.clip_inputs);
                const ParamVector f_s =
                    empirical_fisher(spec, u.params, Batch{ps.inputs, ps.targets});
                const ParamVector f_prev = empirical_fisher(spec, u.params, prev_data);
                if (auto rho = fisher_correlation(f_s, f_prev)) {
                    rho_sum += *rho;
                    ++rho_n;
                }
                const auto per_layer = fisher_correlation_per_layer(spec, f_s, f_prev);
                for (std::size_t l = 0; l < per_layer.size(); ++l)
                    if (per_layer[l]) {
                        layer_sum[l] += *per_layer[l];
                        ++layer_n[l];
                    }
            }
            if (rho_n > 0) rec.fisher_rho = rho_sum / rho_n;
            for (std::size_t l = 0; l < layer_sum.size(); ++l)
                if (layer_n[l] > 0) rec.fisher_rho_per_layer.push_back(layer_sum[l] / layer_n[l]);
        }

        result.records.push_back(rec);
        if (on_round) on_round(rec);

        prev_sampled = sampled;
        sampled_history.push_back(sampled);
        if (opts.stop_at_accuracy > 0.0 && rec.test_accuracy >= opts.stop_at_accuracy) break;
    }
    return result;
}

} // namespace fedsim
