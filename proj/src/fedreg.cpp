#include "fedsim/fedreg.hpp"

#include <stdexcept>

namespace fedsim {

namespace {

constexpr double kDegenerateNorm = 1e-12;

Matrix sign_matrix(const Matrix& m) {
    return m.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Matrix fgsm_iterate(const ModelSpec& spec, const ParamVector& params_prev, const Batch& shard,
                    double eta, int steps, bool clip_inputs) {
    if (shard.inputs.rows() < 1) throw std::invalid_argument("shard must be non-empty");
    if (steps < 1) throw std::invalid_argument("FGSM step count must be >= 1");
    Matrix x = shard.inputs;
    for (int j = 0; j < steps; ++j) {
        const Matrix g = grad_inputs(spec, params_prev, Batch{x, shard.targets});
        if (!g.allFinite()) throw std::runtime_error("non-finite input gradient in FGSM step");
        x += eta * sign_matrix(g);
        if (clip_inputs) x = x.cwiseMax(0.0).cwiseMin(1.0);
    }
    return x;
}

} // namespace

void FedRegConfig::validate() const {
    if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("gamma must be in [0,1]");
    if (eta_s <= 0.0) throw std::invalid_argument("eta_s must be > 0");
    if (resolved_eta_p() > eta_s)
        throw std::invalid_argument("eta_p must not exceed eta_s");
    if (fgsm_steps < 1) throw std::invalid_argument("fgsm_steps must be >= 1");
}

PseudoSet gen_pseudo(const ModelSpec& spec, const ParamVector& params_prev, const Batch& shard,
                     double eta_s, int steps, bool clip_inputs) {
    PseudoSet out;
    out.inputs = fgsm_iterate(spec, params_prev, shard, eta_s, steps, clip_inputs);
    out.targets = forward(spec, params_prev, out.inputs);
    return out;
}

PerturbSet gen_perturbed(const ModelSpec& spec, const ParamVector& params_prev,
                         const Batch& shard, double eta_p, int steps, bool clip_inputs) {
    PerturbSet out;
    out.inputs = fgsm_iterate(spec, params_prev, shard, eta_p, steps, clip_inputs);
    out.targets = shard.targets;
    return out;
}

ParamVector grad_at_mix(const ModelSpec& spec, const ParamVector& params_cur,
                        const ParamVector& params_prev, double alpha, const Batch& batch) {
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("alpha must be in [0,1]");
    if (params_cur.size() != params_prev.size())
        throw std::invalid_argument("parameter vectors differ in length");
    // Exact endpoints avoid rounding the degenerate mixes; the lerp form keeps
    // the result independent of alpha whenever the endpoints coincide.
    if (alpha == 1.0) return grad_params(spec, params_cur, batch);
    if (alpha == 0.0) return grad_params(spec, params_prev, batch);
    ParamVector mix(params_cur.size());
    for (std::size_t i = 0; i < mix.size(); ++i)
        mix[i] = params_prev[i] + alpha * (params_cur[i] - params_prev[i]);
    return grad_params(spec, mix, batch);
}

ProjectionWeights project_weights(const ParamVector& params_cur, const ParamVector& params_prev,
                                  const ParamVector& g_s, const ParamVector& g_p) {
    if (params_cur.size() != params_prev.size() || g_s.size() != params_cur.size() ||
        g_p.size() != params_cur.size())
        throw std::invalid_argument("project_weights: vector length mismatch");

    ParamVector diff(params_cur.size());
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = params_cur[i] - params_prev[i];

    ProjectionWeights w;
    const double gs_sq = vec_dot(g_s, g_s);
    if (vec_norm(g_s) > kDegenerateNorm)
        w.w_s = std::max(vec_dot(diff, g_s) / gs_sq, 0.0);

    // Second projection starts from the point already moved by w_s * g_s.
    if (w.w_s != 0.0) vec_axpy(diff, -w.w_s, g_s);
    const double gp_sq = vec_dot(g_p, g_p);
    if (vec_norm(g_p) > kDegenerateNorm)
        w.w_p = std::max(vec_dot(diff, g_p) / gp_sq, 0.0);
    return w;
}

Batch build_uniform_label_set(const PseudoSet& pseudo, int n) {
    if (n < 2) throw std::invalid_argument("uniform label set needs n >= 2");
    Batch b;
    b.inputs = pseudo.inputs;
    b.targets = Matrix::Constant(pseudo.inputs.rows(), n, 1.0 / n);
    return b;
}

ParamVector modified_gradient(const ParamVector& g, const ParamVector& g_prime) {
    if (g.size() != g_prime.size())
        throw std::invalid_argument("modified_gradient: vector length mismatch");
    if (vec_norm(g_prime) <= kDegenerateNorm) return g;
    const double v = vec_dot(g, g_prime) / vec_dot(g_prime, g_prime);
    ParamVector out = g;
    vec_axpy(out, -v, g_prime);
    return out;
}

} // namespace fedsim
