#pragma once

#include "fedsim/grad_core.hpp"

namespace fedsim {

// FedReg knobs. eta_p defaults to 0.01 * eta_s when left unset (<= 0).
struct FedRegConfig {
    double gamma = 0.4;      // slow-update mixing, in [0,1]
    double eta_s = 0.2;      // pseudo-data step size, > 0
    double eta_p = -1.0;     // perturbation step size; <= 0 means 0.01 * eta_s
    int fgsm_steps = 10;     // E
    bool use_mg = false;     // replace the local-data gradient with the modified gradient
    bool clip_inputs = false; // clamp generated inputs back to [0,1]

    double resolved_eta_p() const { return eta_p > 0.0 ? eta_p : 0.01 * eta_s; }
    void validate() const; // throws std::invalid_argument
};

// Inputs pushed away from the local data by signed-gradient ascent, labeled
// with the global model's soft predictions.
struct PseudoSet {
    Matrix inputs;
    Matrix targets; // soft rows from the generating parameters
};

// Small signed-gradient perturbations of the local data, original labels kept.
struct PerturbSet {
    Matrix inputs;
    Matrix targets; // the shard's original one-hot labels
};

// Iterates x_j = x_{j-1} + eta * sign(dL/dx) for E steps against the fixed
// generating parameters, then labels the endpoints with the model's own
// predictions. sign(0) is taken as 0.
PseudoSet gen_pseudo(const ModelSpec& spec, const ParamVector& params_prev, const Batch& shard,
                     double eta_s, int steps, bool clip_inputs = false);

// Same iteration with the perturbation step size; original labels kept.
PerturbSet gen_perturbed(const ModelSpec& spec, const ParamVector& params_prev,
                         const Batch& shard, double eta_p, int steps, bool clip_inputs = false);

// Gradient of the mean loss at the convex combination
// alpha * params_cur + (1 - alpha) * params_prev. alpha = 0.5 gives the
// midpoint gradient, alpha = gamma the slow-update gradient.
ParamVector grad_at_mix(const ModelSpec& spec, const ParamVector& params_cur,
                        const ParamVector& params_prev, double alpha, const Batch& batch);

// Closed-form weights of the two sequential halfspace projections:
//   w_s = max(((cur - prev) . g_s) / (g_s . g_s), 0)
//   w_p = max(((cur - w_s g_s - prev) . g_p) / (g_p . g_p), 0)
// A gradient with norm below 1e-12 forces its weight to 0.
struct ProjectionWeights {
    double w_s = 0.0;
    double w_p = 0.0;
};
ProjectionWeights project_weights(const ParamVector& params_cur, const ParamVector& params_prev,
                                  const ParamVector& g_s, const ParamVector& g_p);

// Relabels a pseudo set with the uniform distribution over n classes.
Batch build_uniform_label_set(const PseudoSet& pseudo, int n);

// Component of g orthogonal to g_prime: g - ((g.g')/(g'.g')) g'. Returns g
// unchanged when ||g'|| <= 1e-12.
ParamVector modified_gradient(const ParamVector& g, const ParamVector& g_prime);

} // namespace fedsim
