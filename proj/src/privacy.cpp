#include "fedsim/privacy.hpp"

#include "fedsim/rng.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace fedsim {

void DpConfig::validate() const {
    if (clip_bound <= 0.0) throw std::invalid_argument("clip_bound must be > 0");
    if (noise_scale < 0.0) throw std::invalid_argument("noise_scale must be >= 0");
}

ParamVector clip_and_noise(const ParamVector& g, const DpConfig& dp, std::mt19937_64& rng) {
    dp.validate();
    ParamVector out = g;
    // Rescaling once can overshoot the bound by an ulp; repeat until the
    // computed norm is exactly within it.
    for (double norm = vec_norm(out); norm > dp.clip_bound; norm = vec_norm(out)) {
        const double scale = dp.clip_bound / norm;
        for (double& v : out) v *= scale;
    }
    if (dp.noise_scale > 0.0) {
        std::normal_distribution<double> noise(0.0, dp.noise_scale * dp.clip_bound);
        for (double& v : out) v += noise(rng);
    }
    return out;
}

double total_variation(const Matrix& x) {
    if (x.rows() < 1 || x.cols() < 1) throw std::invalid_argument("image must be non-empty");
    double tv = 0.0;
    for (Eigen::Index i = 0; i + 1 < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j) tv += std::abs(x(i + 1, j) - x(i, j));
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j + 1 < x.cols(); ++j) tv += std::abs(x(i, j + 1) - x(i, j));
    return tv;
}

AttackDefense attack_defense_from_string(const std::string& s) {
    if (s == "plain") return AttackDefense::plain;
    if (s == "dpsgd") return AttackDefense::dpsgd;
    if (s == "fedreg_mg") return AttackDefense::fedreg_mg;
    throw std::invalid_argument("unknown defense: " + s);
}

std::string to_string(AttackDefense d) {
    switch (d) {
        case AttackDefense::plain: return "plain";
        case AttackDefense::dpsgd: return "dpsgd";
        case AttackDefense::fedreg_mg: return "fedreg_mg";
    }
    return "?";
}

AttackDistance attack_distance_from_string(const std::string& s) {
    if (s == "l2") return AttackDistance::l2;
    if (s == "cosine") return AttackDistance::cosine;
    throw std::invalid_argument("unknown distance: " + s);
}

std::string to_string(AttackDistance d) {
    return d == AttackDistance::l2 ? "l2" : "cosine";
}

LrDecay lr_decay_from_string(const std::string& s) {
    if (s == "staged") return LrDecay::staged;
    if (s == "constant") return LrDecay::constant;
    throw std::invalid_argument("unknown lr decay schedule: " + s);
}

std::string to_string(LrDecay d) {
    return d == LrDecay::staged ? "staged" : "constant";
}

void AttackConfig::validate() const {
    if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
    if (tv_weight < 0.0) throw std::invalid_argument("tv_weight must be >= 0");
    if (step_size <= 0.0) throw std::invalid_argument("step_size must be > 0");
}

ParamVector simulated_update(const ModelSpec& spec, const ParamVector& params,
                             const Batch& example, const SimulatedUpdateConfig& cfg) {
    if (example.inputs.rows() != 1) throw std::invalid_argument("expected a single example");
    ParamVector g = grad_params(spec, params, example);
    switch (cfg.defense) {
        case AttackDefense::plain:
            break;
        case AttackDefense::dpsgd: {
            if (!cfg.dp) throw std::invalid_argument("dpsgd defense needs a DpConfig");
            std::mt19937_64 rng(cfg.noise_seed);
            g = clip_and_noise(g, *cfg.dp, rng);
            break;
        }
        case AttackDefense::fedreg_mg: {
            // One step from the global parameters: theta_gamma collapses onto
            // them, so the slow-update gradient is just g. The reference
            // gradient comes from the uniform-labeled pseudo example.
            const PseudoSet pseudo = gen_pseudo(spec, params, example, cfg.fedreg.eta_s,
                                                cfg.fedreg.fgsm_steps, cfg.fedreg.clip_inputs);
            const Batch uniform = build_uniform_label_set(pseudo, spec.n_classes());
            const ParamVector g_prime = grad_params(spec, params, uniform);
            g = modified_gradient(g, g_prime);
            const double residual = std::abs(vec_dot(g, g_prime));
            if (residual > 1e-12 * std::max(1.0, vec_norm(g) * vec_norm(g_prime)))
                throw std::runtime_error("modified gradient lost orthogonality");
            break;
        }
    }
    for (double& v : g) v *= -cfg.eta;
    return g;
}

double attack_objective(const ParamVector& update_true, const ParamVector& update_candidate,
                        const Matrix& candidate_image, const AttackConfig& cfg) {
    if (update_true.size() != update_candidate.size())
        throw std::invalid_argument("update length mismatch");
    double dist = 0.0;
    if (cfg.distance == AttackDistance::l2) {
        for (std::size_t i = 0; i < update_true.size(); ++i) {
            const double d = update_true[i] - update_candidate[i];
            dist += d * d;
        }
    } else {
        const double na = vec_norm(update_true);
        const double nb = vec_norm(update_candidate);
        if (na == 0.0 || nb == 0.0) {
            dist = 1.0; // zero-norm update: maximally dissimilar by definition
        } else {
            dist = 1.0 - vec_dot(update_true, update_candidate) / (na * nb);
        }
    }
    return dist + cfg.tv_weight * total_variation(candidate_image);
}

namespace {

struct AdamState {
    std::vector<double> m, v;
    int t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

    void step(std::vector<double>& x, const std::vector<double>& g, double lr) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, t);
        const double bc2 = 1.0 - std::pow(beta2, t);
        for (std::size_t i = 0; i < x.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            x[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
    }
};

} // namespace

ReconResult invert_gradient(const ModelSpec& spec, const ParamVector& params,
                            const ParamVector& update_true, double eta, int image_rows,
                            int image_cols, const AttackConfig& cfg) {
    cfg.validate();
    const int dim = image_rows * image_cols;
    if (dim != spec.input_dim())
        throw std::invalid_argument("image shape does not match model input dim");

    SimulatedUpdateConfig sim;
    sim.eta = eta;
    sim.defense = AttackDefense::plain; // the attacker models an undefended step

    auto objective_for = [&](const std::vector<double>& x, const Matrix& y) {
        Matrix img(image_rows, image_cols);
        for (int i = 0; i < dim; ++i) img(i / image_cols, i % image_cols) = x[static_cast<std::size_t>(i)];
        Batch ex;
        ex.inputs = Eigen::Map<const Eigen::RowVectorXd>(x.data(), dim);
        ex.targets = y;
        const ParamVector upd = simulated_update(spec, params, ex, sim);
        return attack_objective(update_true, upd, img, cfg);
    };

    ReconResult best;
    best.objective = std::numeric_limits<double>::infinity();

    // Label recovery: enumerate every class, optimize independently, keep the
    // best final objective.
    for (int label = 0; label < spec.n_classes(); ++label) {
        Matrix y = Matrix::Zero(1, spec.n_classes());
        y(0, label) = 1.0;

        for (int restart = 0; restart <= 3; ++restart) {
            std::mt19937_64 rng(derive_seed(cfg.seed, "attack-init",
                                            static_cast<std::uint64_t>(label),
                                            static_cast<std::uint64_t>(restart)));
            std::uniform_real_distribution<double> unit(0.0, 1.0);
            std::vector<double> x(static_cast<std::size_t>(dim));
            for (double& v : x) v = unit(rng);

            AdamState adam(x.size());
            std::vector<double> g(x.size(), 0.0);
            double run_best = std::numeric_limits<double>::infinity();
            std::vector<double> run_best_x = x;
            std::vector<double> trace;
            trace.reserve(static_cast<std::size_t>(cfg.iterations));
            bool diverged = false;

            const double h = 1e-4;
            for (int it = 0; it < cfg.iterations; ++it) {
                double lr = cfg.step_size;
                if (cfg.decay == LrDecay::staged) {
                    const double frac = static_cast<double>(it) / cfg.iterations;
                    if (frac >= 0.375) lr *= 0.1;
                    if (frac >= 0.625) lr *= 0.1;
                    if (frac >= 0.875) lr *= 0.1;
                }

                const double f0 = objective_for(x, y);
                if (!std::isfinite(f0)) {
                    diverged = true;
                    break;
                }
                if (f0 < run_best) {
                    run_best = f0;
                    run_best_x = x;
                }
                trace.push_back(run_best);
                if (cfg.iterations == 1) break; // degenerate run: score the init only

                // central-difference gradient of the objective
                for (std::size_t i = 0; i < x.size(); ++i) {
                    const double orig = x[i];
                    x[i] = orig + h;
                    const double fp = objective_for(x, y);
                    x[i] = orig - h;
                    const double fm = objective_for(x, y);
                    x[i] = orig;
                    g[i] = (fp - fm) / (2.0 * h);
                }
                adam.step(x, g, lr);
            }
            if (diverged && restart < 3) continue;

            // score the final iterate as well
            const double f_final = objective_for(x, y);
            if (std::isfinite(f_final) && f_final < run_best) {
                run_best = f_final;
                run_best_x = x;
            }
            if (run_best < best.objective) {
                best.objective = run_best;
                best.label = label;
                best.input.resize(image_rows, image_cols);
                for (int i = 0; i < dim; ++i)
                    best.input(i / image_cols, i % image_cols) = run_best_x[static_cast<std::size_t>(i)];
            }
            break; // no divergence: done with this label
        }
    }
    if (!std::isfinite(best.objective))
        throw std::runtime_error("gradient inversion diverged for every restart");
    return best;
}

double psnr(const Matrix& x, const Matrix& x_ref, double max_value) {
    if (x.rows() != x_ref.rows() || x.cols() != x_ref.cols())
        throw std::invalid_argument("psnr shape mismatch");
    const double mse = (x - x_ref).squaredNorm() / static_cast<double>(x.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(max_value * max_value / mse);
}

void write_pgm_pair(const std::string& path, const Matrix& truth, const Matrix& recon) {
    if (truth.rows() != recon.rows())
        throw std::invalid_argument("image heights differ");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    const Eigen::Index h = truth.rows();
    const Eigen::Index w = truth.cols() + 1 + recon.cols();
    out << "P5\n" << w << " " << h << "\n255\n";
    auto put = [&](double v) {
        out.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    };
    for (Eigen::Index i = 0; i < h; ++i) {
        for (Eigen::Index j = 0; j < truth.cols(); ++j) put(truth(i, j));
        put(0.5); // separator column
        for (Eigen::Index j = 0; j < recon.cols(); ++j) put(recon(i, j));
    }
}

} // namespace fedsim
