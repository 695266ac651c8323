#include "fedsim/diagnostics.hpp"

#include <cmath>
#include <stdexcept>

namespace fedsim {

double loss_prev(const ModelSpec& spec, const ParamVector& params_prev, const Batch& shard) {
    if (shard.inputs.rows() < 1) throw std::invalid_argument("shard must be non-empty");
    return loss_mean(spec, params_prev, shard);
}

double loss_curr(const ModelSpec& spec, const std::vector<ParamVector>& sampled_updates,
                 const Batch& shard) {
    if (sampled_updates.empty()) throw std::invalid_argument("need at least one update");
    if (shard.inputs.rows() < 1) throw std::invalid_argument("shard must be non-empty");
    // Mean over data of mean over clients equals mean over clients of mean
    // over data, since every term is a plain average.
    double acc = 0.0;
    for (const auto& p : sampled_updates) acc += loss_mean(spec, p, shard);
    return acc / static_cast<double>(sampled_updates.size());
}

ParamVector empirical_fisher(const ModelSpec& spec, const ParamVector& params,
                             const Batch& dataset) {
    const Eigen::Index n = dataset.inputs.rows();
    if (n < 1) throw std::invalid_argument("dataset must be non-empty");
    ParamVector fisher(params.size(), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
        Batch one{dataset.inputs.row(i), dataset.targets.row(i)};
        // grad of the single-example cross-entropy is -grad of y^T log p;
        // the square removes the sign.
        const ParamVector g = grad_params(spec, params, one);
        for (std::size_t k = 0; k < fisher.size(); ++k) fisher[k] += g[k] * g[k];
    }
    for (double& v : fisher) v /= static_cast<double>(n);
    return fisher;
}

namespace {

std::optional<double> pearson_filtered(const double* a, const double* b, std::size_t n) {
    // Drop coordinates where both diagonals are numerically zero.
    std::vector<double> xs, ys;
    xs.reserve(n);
    ys.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (std::abs(a[i]) < 1e-15 && std::abs(b[i]) < 1e-15) continue;
        xs.push_back(a[i]);
        ys.push_back(b[i]);
    }
    const std::size_t m = xs.size();
    if (m < 2) return std::nullopt;
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= static_cast<double>(m);
    my /= static_cast<double>(m);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

} // namespace

std::optional<double> fisher_correlation(const ParamVector& f_a, const ParamVector& f_b) {
    if (f_a.size() != f_b.size() || f_a.size() < 2)
        throw std::invalid_argument("fisher_correlation needs equal lengths >= 2");
    return pearson_filtered(f_a.data(), f_b.data(), f_a.size());
}

std::vector<std::optional<double>> fisher_correlation_per_layer(const ModelSpec& spec,
                                                                const ParamVector& f_a,
                                                                const ParamVector& f_b) {
    if (f_a.size() != spec.param_count() || f_b.size() != spec.param_count())
        throw std::invalid_argument("fisher vectors do not match model");
    std::vector<std::optional<double>> out;
    for (int l = 0; l < spec.n_layers(); ++l) {
        const std::size_t off = spec.layer_offset(l);
        const std::size_t len =
            static_cast<std::size_t>(spec.layer_dims[l + 1]) * spec.layer_dims[l] +
            spec.layer_dims[l + 1];
        out.push_back(pearson_filtered(f_a.data() + off, f_b.data() + off, len));
    }
    return out;
}

std::optional<int> rounds_to_fraction(const std::vector<double>& accuracy_series,
                                      double reference_final_acc, double a) {
    if (a <= 0.0) throw std::invalid_argument("fraction a must be > 0");
    if (accuracy_series.empty()) throw std::invalid_argument("accuracy series is empty");
    const double target = a * reference_final_acc;
    for (std::size_t t = 0; t < accuracy_series.size(); ++t)
        if (accuracy_series[t] >= target) return static_cast<int>(t) + 1;
    return std::nullopt;
}

} // namespace fedsim
