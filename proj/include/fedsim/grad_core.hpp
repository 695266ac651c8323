#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <vector>

namespace fedsim {

// Dense-network core: forward pass, soft-target cross-entropy, and exact
// reverse-mode gradients with respect to parameters and inputs. All math is
// double precision and bit-deterministic for fixed inputs.

using Matrix = Eigen::MatrixXd; // rows = examples
using ParamVector = std::vector<double>;

// Guard added inside every log() so a zero probability cannot produce -inf.
inline constexpr double kLogEps = 1e-12;

// Fully connected ReLU network topology. layer_dims is
// [input_dim, hidden..., n_classes]; the output layer is always softmax.
struct ModelSpec {
    std::vector<int> layer_dims;

    int input_dim() const { return layer_dims.front(); }
    int n_classes() const { return layer_dims.back(); }
    int n_layers() const { return static_cast<int>(layer_dims.size()) - 1; }
    std::size_t param_count() const;
    // Offset of layer l's weight block; biases follow the weights.
    std::size_t layer_offset(int l) const;
    void validate() const; // throws std::invalid_argument
};

// A batch of examples with soft-label targets (each row sums to 1).
struct Batch {
    Matrix inputs;  // B x d
    Matrix targets; // B x n
};

// He-style random initialization: W ~ N(0, sqrt(2/fan_in)), b = 0.
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);

// Row-wise softmax probabilities of the network output.
Matrix forward(const ModelSpec& spec, const ParamVector& params, const Matrix& inputs);

// Mean soft-target cross-entropy:
// (1/B) sum_rows sum_k -y_k log(min(p_k + eps, 1)). Always >= 0.
double loss_ce(const Matrix& probs, const Matrix& targets);

// loss_ce(forward(...), batch.targets) in one call.
double loss_mean(const ModelSpec& spec, const ParamVector& params, const Batch& batch);

// Exact gradient of loss_mean w.r.t. the flat parameter vector.
ParamVector grad_params(const ModelSpec& spec, const ParamVector& params, const Batch& batch);

// Exact gradient of loss_mean w.r.t. the inputs; targets held fixed.
Matrix grad_inputs(const ModelSpec& spec, const ParamVector& params, const Batch& batch);

double vec_dot(const ParamVector& a, const ParamVector& b);
// y += alpha * x, in place.
void vec_axpy(ParamVector& y, double alpha, const ParamVector& x);
double vec_norm(const ParamVector& a);
bool vec_finite(const ParamVector& a);

int argmax_row(const Matrix& m, Eigen::Index row);

} // namespace fedsim
