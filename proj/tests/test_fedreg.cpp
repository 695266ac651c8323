#include "fedsim/fedreg.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace fedsim;

namespace {

Batch logistic_example(double x0) {
    Batch b;
    b.inputs = Matrix::Constant(1, 1, x0);
    b.targets.resize(1, 2);
    b.targets << 1.0, 0.0;
    return b;
}

} // namespace

TEST_CASE("gen_pseudo with zero step size returns the shard with model labels") {
    std::mt19937_64 rng(3);
    ModelSpec spec{{2, 5, 3}};
    const ParamVector params = oracle::random_params(spec, rng);
    const Batch shard = oracle::random_batch(4, 2, 3, rng, true);
    // eta_s = 0 is not a valid config value, but the generator itself must
    // behave as the identity at step size 0
    const PseudoSet ps = gen_pseudo(spec, params, shard, 0.0, 3);
    CHECK((ps.inputs - shard.inputs).cwiseAbs().maxCoeff() == 0.0);
    CHECK((ps.targets - forward(spec, params, shard.inputs)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("1-D logistic single FGSM step moves against the input gradient sign") {
    // w=1, x=0, target class 0: dL/dx = -(1 - sigmoid(0)) = -0.5, so one step
    // of size 0.2 lands at -0.2 and the soft label comes from logit -0.2.
    ModelSpec spec{{1, 2}};
    ParamVector params(spec.param_count(), 0.0);
    params[0] = 1.0;
    const PseudoSet ps = gen_pseudo(spec, params, logistic_example(0.0), 0.2, 1);
    CHECK(ps.inputs(0, 0) == doctest::Approx(-0.2).epsilon(1e-12));
    const double p0 = 1.0 / (1.0 + std::exp(0.2));
    CHECK(ps.targets(0, 0) == doctest::Approx(p0).epsilon(1e-10));
    CHECK(ps.targets(0, 1) == doctest::Approx(1.0 - p0).epsilon(1e-10));
}

TEST_CASE("gen_pseudo matches the scripted FGSM oracle over 10 steps") {
    std::mt19937_64 rng(5);
    ModelSpec spec{{2, 6, 2}};
    const ParamVector params = oracle::random_params(spec, rng);
    const Batch shard = oracle::random_batch(5, 2, 2, rng, true);
    const PseudoSet ps = gen_pseudo(spec, params, shard, 0.05, 10);
    const Matrix expected = oracle::scripted_fgsm(spec, params, shard, 0.05, 10);
    CHECK((ps.inputs - expected).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("gen_perturbed keeps original labels and stays near the data") {
    std::mt19937_64 rng(7);
    ModelSpec spec{{3, 6, 2}};
    const ParamVector params = oracle::random_params(spec, rng);
    const Batch shard = oracle::random_batch(6, 3, 2, rng, true);

    const PerturbSet id = gen_perturbed(spec, params, shard, 0.0, 4);
    CHECK((id.inputs - shard.inputs).cwiseAbs().maxCoeff() == 0.0);
    CHECK((id.targets - shard.targets).cwiseAbs().maxCoeff() == 0.0);

    const double eta_s = 0.2, eta_p = 0.002;
    const int steps = 10;
    const PerturbSet pt = gen_perturbed(spec, params, shard, eta_p, steps);
    CHECK((pt.targets - shard.targets).cwiseAbs().maxCoeff() == 0.0);
    // per-step infinity-norm bound eta * E
    CHECK((pt.inputs - shard.inputs).cwiseAbs().maxCoeff() <= eta_p * steps + 1e-12);
    CHECK(eta_p * steps < eta_s * steps);

    const Matrix expected = oracle::scripted_fgsm(spec, params, shard, eta_p, steps);
    CHECK((pt.inputs - expected).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("FGSM ascent: the endpoint loss under the generating labels grows") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 8; ++trial) {
        ModelSpec spec{{2, 8, 3}};
        const ParamVector params = oracle::random_params(spec, rng);
        const Batch shard = oracle::random_batch(30, 2, 3, rng, true);
        const PseudoSet ps = gen_pseudo(spec, params, shard, 0.01, 10);
        const double before = loss_mean(spec, params, shard);
        const double after = loss_mean(spec, params, Batch{ps.inputs, shard.targets});
        CHECK(after >= before);
    }
}

TEST_CASE("grad_at_mix endpoints and midpoint") {
    std::mt19937_64 rng(13);
    ModelSpec spec{{2, 4, 2}};
    const ParamVector cur = oracle::random_params(spec, rng);
    const ParamVector prev = oracle::random_params(spec, rng);
    const Batch batch = oracle::random_batch(4, 2, 2, rng);

    CHECK(grad_at_mix(spec, cur, prev, 1.0, batch) == grad_params(spec, cur, batch));
    CHECK(grad_at_mix(spec, cur, prev, 0.0, batch) == grad_params(spec, prev, batch));

    ParamVector mid(cur.size());
    for (std::size_t i = 0; i < mid.size(); ++i) mid[i] = 0.5 * (cur[i] + prev[i]);
    const ParamVector g = grad_at_mix(spec, cur, prev, 0.5, batch);
    const ParamVector fd = oracle::fd_grad_params(spec, mid, batch);
    CHECK(oracle::max_rel_err(g, fd) < 1e-5);

    // alpha is irrelevant when both endpoints coincide
    CHECK(grad_at_mix(spec, cur, cur, 0.3, batch) == grad_at_mix(spec, cur, cur, 0.9, batch));
    CHECK_THROWS_AS(grad_at_mix(spec, cur, prev, 1.5, batch), std::invalid_argument);
}

TEST_CASE("project_weights degenerate cases") {
    ParamVector cur{1.0, 2.0, 3.0};
    ParamVector g_s{0.5, -1.0, 2.0};
    ParamVector g_p{1.0, 1.0, 0.0};

    // zero displacement
    auto w = project_weights(cur, cur, g_s, g_p);
    CHECK(w.w_s == 0.0);
    CHECK(w.w_p == 0.0);

    // constraint already satisfied: (cur - prev) . g_s < 0 clamps to zero
    ParamVector prev{1.5, 2.0, 3.0}; // diff = (-0.5, 0, 0), dot g_s = -0.25
    w = project_weights(cur, prev, g_s, g_p);
    CHECK(w.w_s == 0.0);

    // near-zero gradients force the corresponding weight to zero
    ParamVector tiny(3, 1e-14);
    w = project_weights(cur, ParamVector{0.0, 0.0, 0.0}, tiny, g_p);
    CHECK(w.w_s == 0.0);
}

TEST_CASE("project_weights matches the grid-search QP oracle") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const int dim = 2 + static_cast<int>(rng() % 4); // 2..5
        ParamVector cur(static_cast<std::size_t>(dim)), prev(cur.size()), g_s(cur.size()),
            g_p(cur.size());
        for (auto* v : {&cur, &prev, &g_s, &g_p})
            for (double& x : *v) x = dist(rng);

        const auto w = project_weights(cur, prev, g_s, g_p);
        const double ws_oracle = oracle::grid_projection_weight(cur, prev, g_s);
        CHECK(std::abs(w.w_s - ws_oracle) < 1e-6);

        ParamVector moved = cur;
        vec_axpy(moved, -ws_oracle, g_s);
        const double wp_oracle = oracle::grid_projection_weight(moved, prev, g_p);
        CHECK(std::abs(w.w_p - wp_oracle) < 1e-6);

        // post-projection constraint satisfaction (active when w_s > 0)
        ParamVector after = cur;
        vec_axpy(after, -w.w_s, g_s);
        double lhs = 0.0;
        for (std::size_t i = 0; i < after.size(); ++i) lhs += (prev[i] - after[i]) * g_s[i];
        CHECK(lhs >= -1e-9);
        if (w.w_s > 0.0) CHECK(std::abs(lhs) < 1e-9); // boundary-active

        // KKT consistency: w_s = 0 iff the unprojected point was feasible
        double raw = 0.0;
        for (std::size_t i = 0; i < cur.size(); ++i) raw += (prev[i] - cur[i]) * g_s[i];
        if (w.w_s == 0.0)
            CHECK(raw >= -1e-9);
        else
            CHECK(raw < 1e-9);
    }
}

TEST_CASE("build_uniform_label_set relabels with the uniform distribution") {
    PseudoSet ps;
    ps.inputs = Matrix::Random(3, 2);
    ps.targets = Matrix::Random(3, 4);
    const Batch b = build_uniform_label_set(ps, 4);
    CHECK(b.inputs == ps.inputs);
    CHECK(b.targets.rows() == 3);
    for (Eigen::Index r = 0; r < 3; ++r)
        for (Eigen::Index c = 0; c < 4; ++c) CHECK(b.targets(r, c) == 0.25);

    // cross-entropy against uniform targets equals the scalar oracle
    Matrix probs(1, 4);
    probs << 0.1, 0.2, 0.3, 0.4;
    Matrix uniform = Matrix::Constant(1, 4, 0.25);
    CHECK(loss_ce(probs, uniform) ==
          doctest::Approx(oracle::loss_scalar(probs, uniform)).epsilon(1e-12));
}

TEST_CASE("modified_gradient removes the parallel component") {
    ParamVector g{1.0, 2.0, 3.0};
    const ParamVector zero = modified_gradient(g, g);
    for (double v : zero) CHECK(std::abs(v) < 1e-12);

    ParamVector orth{2.0, -1.0, 0.0}; // g . orth = 0
    CHECK(modified_gradient(g, orth) == g);

    std::mt19937_64 rng(23);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int trial = 0; trial < 30; ++trial) {
        ParamVector a(8), b(8);
        for (double& v : a) v = dist(rng);
        for (double& v : b) v = dist(rng);
        const ParamVector mg = modified_gradient(a, b);
        CHECK(std::abs(vec_dot(mg, b)) <= 1e-12 * std::max(1.0, vec_norm(a) * vec_norm(b)));
        CHECK(vec_norm(mg) <= vec_norm(a) + 1e-12);
    }

    // degenerate reference gradient: g returned unchanged
    ParamVector tiny(3, 1e-14);
    CHECK(modified_gradient(g, tiny) == g);
    ParamVector short_vec{1.0};
    CHECK_THROWS_AS(modified_gradient(g, short_vec), std::invalid_argument);
}

TEST_CASE("FedRegConfig validation") {
    FedRegConfig ok;
    ok.validate();
    CHECK(ok.resolved_eta_p() == doctest::Approx(0.01 * ok.eta_s));

    FedRegConfig bad = ok;
    bad.gamma = 1.5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = ok;
    bad.eta_s = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = ok;
    bad.eta_p = 0.5; // above eta_s = 0.2
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = ok;
    bad.fgsm_steps = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
