#pragma once

// Independent test oracles. Everything here recomputes expected values by a
// route separate from the library implementation: straight scalar loops,
// finite differences, grid refinement, or scripted step-by-step trajectories.

#include "fedsim/grad_core.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

using fedsim::Batch;
using fedsim::Matrix;
using fedsim::ModelSpec;
using fedsim::ParamVector;

// Straight-line forward pass over scalar loops: x -> relu(Wx+b) ... -> softmax.
inline std::vector<double> forward_scalar(const ModelSpec& spec, const ParamVector& params,
                                          const std::vector<double>& input) {
    std::vector<double> act = input;
    std::size_t off = 0;
    for (int l = 0; l < spec.n_layers(); ++l) {
        const int in = spec.layer_dims[static_cast<std::size_t>(l)];
        const int out = spec.layer_dims[static_cast<std::size_t>(l) + 1];
        std::vector<double> z(static_cast<std::size_t>(out), 0.0);
        for (int o = 0; o < out; ++o) {
            double acc = 0.0;
            for (int i = 0; i < in; ++i)
                acc += params[off + static_cast<std::size_t>(o) * in + i] * act[static_cast<std::size_t>(i)];
            z[static_cast<std::size_t>(o)] =
                acc + params[off + static_cast<std::size_t>(out) * in + o];
        }
        off += static_cast<std::size_t>(out) * in + out;
        if (l + 1 < spec.n_layers()) {
            for (double& v : z) v = v > 0.0 ? v : 0.0;
            act = z;
        } else {
            double m = z[0];
            for (double v : z) m = std::max(m, v);
            double sum = 0.0;
            for (double& v : z) sum += v = std::exp(v - m);
            for (double& v : z) v /= sum;
            act = z;
        }
    }
    return act;
}

// Mean soft-target cross-entropy by scalar loops.
inline double loss_scalar(const Matrix& probs, const Matrix& targets) {
    double total = 0.0;
    for (Eigen::Index r = 0; r < probs.rows(); ++r)
        for (Eigen::Index c = 0; c < probs.cols(); ++c)
            total -= targets(r, c) * std::log(probs(r, c) + fedsim::kLogEps);
    return total / static_cast<double>(probs.rows());
}

// Central finite differences of a scalar function over a flat vector.
inline std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double h = 1e-5) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f(x);
        x[i] = orig - h;
        const double fm = f(x);
        x[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// Finite-difference gradient of the mean loss w.r.t. the parameters.
inline ParamVector fd_grad_params(const ModelSpec& spec, const ParamVector& params,
                                  const Batch& batch, double h = 1e-5) {
    return central_diff(
        [&](const std::vector<double>& p) { return fedsim::loss_mean(spec, p, batch); }, params, h);
}

// Finite-difference gradient of the mean loss w.r.t. the inputs.
inline Matrix fd_grad_inputs(const ModelSpec& spec, const ParamVector& params, const Batch& batch,
                             double h = 1e-5) {
    Matrix g(batch.inputs.rows(), batch.inputs.cols());
    Batch b = batch;
    for (Eigen::Index r = 0; r < b.inputs.rows(); ++r)
        for (Eigen::Index c = 0; c < b.inputs.cols(); ++c) {
            const double orig = b.inputs(r, c);
            b.inputs(r, c) = orig + h;
            const double fp = fedsim::loss_mean(spec, params, b);
            b.inputs(r, c) = orig - h;
            const double fm = fedsim::loss_mean(spec, params, b);
            b.inputs(r, c) = orig;
            g(r, c) = (fp - fm) / (2.0 * h);
        }
    return g;
}

// Largest relative error over coordinates with |reference| > floor.
inline double max_rel_err(const std::vector<double>& got, const std::vector<double>& ref,
                          double floor = 1e-8) {
    double worst = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        if (std::abs(ref[i]) <= floor) continue;
        worst = std::max(worst, std::abs(got[i] - ref[i]) / std::abs(ref[i]));
    }
    return worst;
}

// Scripted FGSM trajectory: per-example sign steps driven by the library's
// input gradient but iterated independently of gen_pseudo/gen_perturbed.
inline Matrix scripted_fgsm(const ModelSpec& spec, const ParamVector& params, const Batch& shard,
                            double eta, int steps) {
    Matrix x = shard.inputs;
    for (int j = 0; j < steps; ++j) {
        Matrix g = fd_grad_inputs(spec, params, Batch{x, shard.targets}, 1e-6);
        for (Eigen::Index r = 0; r < x.rows(); ++r)
            for (Eigen::Index c = 0; c < x.cols(); ++c) {
                const double s = g(r, c) > 0.0 ? 1.0 : (g(r, c) < 0.0 ? -1.0 : 0.0);
                x(r, c) += eta * s;
            }
    }
    return x;
}

// Brute-force halfspace projection: refine a grid over the step length w that
// minimizes ||w g||^2 subject to (prev - (cur - w g)) . g >= 0.
inline double grid_projection_weight(const std::vector<double>& cur,
                                     const std::vector<double>& prev,
                                     const std::vector<double>& g) {
    double gg = 0.0, dg = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        gg += g[i] * g[i];
        dg += (cur[i] - prev[i]) * g[i];
    }
    if (gg < 1e-24) return 0.0;
    auto feasible = [&](double w) { return dg - w * gg <= 1e-15; };
    if (feasible(0.0)) return 0.0;
    double lo = 0.0, hi = 2.0 * std::abs(dg) / gg + 1.0;
    for (int level = 0; level < 6; ++level) {
        const int n = 1000;
        double best = hi;
        for (int k = 0; k <= n; ++k) {
            const double w = lo + (hi - lo) * k / n;
            if (feasible(w)) {
                best = w;
                break;
            }
        }
        const double width = (hi - lo) / n;
        lo = std::max(0.0, best - width);
        hi = best;
    }
    return hi;
}

// Deterministic random batch with rows normalized into soft labels.
inline Batch random_batch(int b, int d, int n, std::mt19937_64& rng, bool one_hot_targets = false) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Batch batch;
    batch.inputs.resize(b, d);
    batch.targets.resize(b, n);
    for (int r = 0; r < b; ++r) {
        for (int c = 0; c < d; ++c) batch.inputs(r, c) = unit(rng);
        if (one_hot_targets) {
            batch.targets.row(r).setZero();
            std::uniform_int_distribution<int> cls(0, n - 1);
            batch.targets(r, cls(rng)) = 1.0;
        } else {
            double sum = 0.0;
            for (int c = 0; c < n; ++c) sum += batch.targets(r, c) = unit(rng) + 1e-3;
            batch.targets.row(r) /= sum;
        }
    }
    return batch;
}

inline ParamVector random_params(const ModelSpec& spec, std::mt19937_64& rng, double scale = 0.5) {
    std::normal_distribution<double> dist(0.0, scale);
    ParamVector p(spec.param_count());
    for (double& v : p) v = dist(rng);
    return p;
}

} // namespace oracle
