#include "fedsim/grad_core.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace fedsim {

namespace {

using RowMajorMap = Eigen::Map<
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using RowMajorMutMap =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using VecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMutMap = Eigen::Map<Eigen::VectorXd>;

void check_shapes(const ModelSpec& spec, const ParamVector& params, const Matrix& inputs) {
    spec.validate();
    if (params.size() != spec.param_count())
        throw std::invalid_argument("parameter vector length " + std::to_string(params.size()) +
                                    " does not match model (" +
                                    std::to_string(spec.param_count()) + ")");
    if (inputs.cols() != spec.input_dim())
        throw std::invalid_argument("input column count " + std::to_string(inputs.cols()) +
                                    " does not match model input dim " +
                                    std::to_string(spec.input_dim()));
}

Matrix softmax_rows(const Matrix& z) {
    Matrix p(z.rows(), z.cols());
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        const double m = z.row(r).maxCoeff();
        p.row(r) = (z.row(r).array() - m).exp();
        p.row(r) /= p.row(r).sum();
    }
    return p;
}

// Shared forward pass retaining activations for the backward sweep.
struct ForwardTrace {
    std::vector<Matrix> acts; // acts[0] = inputs, acts[l] = post-ReLU of layer l
    Matrix probs;
};

ForwardTrace forward_trace(const ModelSpec& spec, const ParamVector& params,
                           const Matrix& inputs) {
    ForwardTrace t;
    t.acts.reserve(spec.n_layers());
    t.acts.push_back(inputs);
    for (int l = 0; l < spec.n_layers(); ++l) {
        const int in = spec.layer_dims[l];
        const int out = spec.layer_dims[l + 1];
        RowMajorMap w(params.data() + spec.layer_offset(l), out, in);
        VecMap b(params.data() + spec.layer_offset(l) + static_cast<std::size_t>(out) * in, out);
        Matrix z = t.acts.back() * w.transpose();
        z.rowwise() += b.transpose();
        if (l + 1 < spec.n_layers()) {
            t.acts.push_back(z.cwiseMax(0.0));
        } else {
            t.probs = softmax_rows(z);
        }
    }
    return t;
}

// Backward sweep shared by grad_params and grad_inputs. Differentiates the
// exact implemented loss, including the kLogEps guard, so finite-difference
// checks agree on every coordinate.
struct BackwardResult {
    ParamVector grad;  // filled when want_params
    Matrix input_grad; // filled when want_inputs
};

BackwardResult backward(const ModelSpec& spec, const ParamVector& params, const Batch& batch,
                        bool want_params, bool want_inputs) {
    check_shapes(spec, params, batch.inputs);
    if (batch.targets.rows() != batch.inputs.rows() ||
        batch.targets.cols() != spec.n_classes())
        throw std::invalid_argument("target shape does not match batch/model");
    if (!batch.inputs.allFinite())
        throw std::runtime_error("non-finite values in inputs");
    for (double v : params)
        if (!std::isfinite(v)) throw std::runtime_error("non-finite values in parameters");

    const ForwardTrace t = forward_trace(spec, params, batch.inputs);
    const Eigen::Index bsz = batch.inputs.rows();

    // dL/dp for L = (1/B) sum -y log(min(p + eps, 1)), then through the
    // softmax. Coordinates sitting on the clamp have zero slope.
    Matrix dp = (-(batch.targets.array() / (t.probs.array() + kLogEps)) /
                 static_cast<double>(bsz))
                    .matrix();
    dp = (t.probs.array() + kLogEps < 1.0).select(dp, Matrix::Zero(dp.rows(), dp.cols()));
    Eigen::VectorXd rowdot = t.probs.cwiseProduct(dp).rowwise().sum();
    Matrix dz = dp;
    dz.colwise() -= rowdot;
    dz = t.probs.cwiseProduct(dz);

    BackwardResult res;
    if (want_params) res.grad.assign(params.size(), 0.0);

    for (int l = spec.n_layers() - 1; l >= 0; --l) {
        const int in = spec.layer_dims[l];
        const int out = spec.layer_dims[l + 1];
        const Matrix& a_prev = t.acts[static_cast<std::size_t>(l)];
        if (want_params) {
            RowMajorMutMap gw(res.grad.data() + spec.layer_offset(l), out, in);
            VecMutMap gb(res.grad.data() + spec.layer_offset(l) +
                             static_cast<std::size_t>(out) * in,
                         out);
            gw = dz.transpose() * a_prev;
            gb = dz.colwise().sum();
        }
        if (l > 0 || want_inputs) {
            RowMajorMap w(params.data() + spec.layer_offset(l), out, in);
            Matrix da = dz * w;
            if (l > 0) {
                // ReLU mask: activation > 0 iff pre-activation > 0.
                dz = (t.acts[static_cast<std::size_t>(l)].array() > 0.0)
                         .select(da, Matrix::Zero(da.rows(), da.cols()));
            } else {
                res.input_grad = std::move(da);
            }
        }
    }
    return res;
}

} // namespace

std::size_t ModelSpec::param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l)
        n += static_cast<std::size_t>(layer_dims[l + 1]) * layer_dims[l] + layer_dims[l + 1];
    return n;
}

std::size_t ModelSpec::layer_offset(int l) const {
    std::size_t off = 0;
    for (int k = 0; k < l; ++k)
        off += static_cast<std::size_t>(layer_dims[k + 1]) * layer_dims[k] + layer_dims[k + 1];
    return off;
}

void ModelSpec::validate() const {
    if (layer_dims.size() < 2)
        throw std::invalid_argument("layer_dims needs at least input and output entries");
    for (int d : layer_dims)
        if (d < 1) throw std::invalid_argument("layer_dims entries must be >= 1");
    if (layer_dims.back() < 2)
        throw std::invalid_argument("output layer needs n_classes >= 2");
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    ParamVector p(spec.param_count(), 0.0);
    std::mt19937_64 rng(seed);
    for (int l = 0; l < spec.n_layers(); ++l) {
        const int in = spec.layer_dims[l];
        const int out = spec.layer_dims[l + 1];
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / in));
        double* w = p.data() + spec.layer_offset(l);
        for (std::size_t k = 0; k < static_cast<std::size_t>(out) * in; ++k) w[k] = dist(rng);
        // biases stay zero
    }
    return p;
}

Matrix forward(const ModelSpec& spec, const ParamVector& params, const Matrix& inputs) {
    check_shapes(spec, params, inputs);
    return forward_trace(spec, params, inputs).probs;
}

double loss_ce(const Matrix& probs, const Matrix& targets) {
    if (probs.rows() != targets.rows() || probs.cols() != targets.cols())
        throw std::invalid_argument("probs/targets shape mismatch");
    // The epsilon guard keeps log finite at p = 0; the clamp at 1 keeps the
    // loss from dipping below zero for perfect predictions.
    const double total =
        -(targets.array() * (probs.array() + kLogEps).min(1.0).log()).sum();
    return total / static_cast<double>(probs.rows());
}

double loss_mean(const ModelSpec& spec, const ParamVector& params, const Batch& batch) {
    return loss_ce(forward(spec, params, batch.inputs), batch.targets);
}

ParamVector grad_params(const ModelSpec& spec, const ParamVector& params, const Batch& batch) {
    return backward(spec, params, batch, true, false).grad;
}

Matrix grad_inputs(const ModelSpec& spec, const ParamVector& params, const Batch& batch) {
    return backward(spec, params, batch, false, true).input_grad;
}

double vec_dot(const ParamVector& a, const ParamVector& b) {
    if (a.size() != b.size()) throw std::invalid_argument("vector length mismatch");
    return VecMap(a.data(), static_cast<Eigen::Index>(a.size()))
        .dot(VecMap(b.data(), static_cast<Eigen::Index>(b.size())));
}

void vec_axpy(ParamVector& y, double alpha, const ParamVector& x) {
    if (y.size() != x.size()) throw std::invalid_argument("vector length mismatch");
    VecMutMap(y.data(), static_cast<Eigen::Index>(y.size())) +=
        alpha * VecMap(x.data(), static_cast<Eigen::Index>(x.size()));
}

double vec_norm(const ParamVector& a) {
    return VecMap(a.data(), static_cast<Eigen::Index>(a.size())).norm();
}

bool vec_finite(const ParamVector& a) {
    for (double v : a)
        if (!std::isfinite(v)) return false;
    return true;
}

int argmax_row(const Matrix& m, Eigen::Index row) {
    Eigen::Index idx = 0;
    m.row(row).maxCoeff(&idx);
    return static_cast<int>(idx);
}

} // namespace fedsim
