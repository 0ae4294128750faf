#include "simreglab/diagnostics.hpp"

#include <chrono>
#include <cmath>

#include "simreglab/losses.hpp"
#include "simreglab/model.hpp"
#include "simreglab/theory.hpp"
#include "simreglab/trainer.hpp"

namespace simreg {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

Tensor uniform_tensor(const std::vector<int64_t>& shape, Rng& rng, double lo, double hi) {
    Tensor t(shape);
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

Tensor unit_rows(int64_t n, int64_t d, Rng& rng) {
    Tensor t({n, d});
    for (int64_t i = 0; i < n; ++i) {
        double norm = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            t(i, j) = rng.gaussian();
            norm += t(i, j) * t(i, j);
        }
        norm = std::sqrt(norm);
        for (int64_t j = 0; j < d; ++j) t(i, j) /= norm;
    }
    return t;
}

double rel_err_floor(double a, double b, double floor) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

}  // namespace

SuiteResult run_lemma1_suite(int64_t cases, uint64_t seed) {
    const auto t0 = Clock::now();
    Rng rng(seed);
    SuiteResult r;
    r.name = "lemma1";
    double worst_slack = 0.0;
    for (int64_t inst = 0; inst < cases; ++inst) {
        const int64_t n = 2 + static_cast<int64_t>(rng.below(9));
        const int64_t d = 2 + static_cast<int64_t>(rng.below(7));
        const int64_t classes = 2 + static_cast<int64_t>(rng.below(7));
        const Tensor e = uniform_tensor({n, d}, rng, -2.0, 2.0);
        const Tensor head = uniform_tensor({d, classes}, rng, -2.0, 2.0);
        std::vector<int64_t> labels(static_cast<size_t>(n));
        for (auto& l : labels) l = static_cast<int64_t>(rng.below(static_cast<uint64_t>(classes)));
        for (int64_t k = 0; k < n; ++k) {
            const auto entry = group_margin_bounds(e, labels, head, k);
            ++r.cases;
            if (!entry.lower_holds || !entry.upper_holds) ++r.violations;
            worst_slack = std::max(worst_slack, entry.lower - entry.margin);
            if (entry.has_neg) worst_slack = std::max(worst_slack, entry.margin - entry.upper);
        }
    }
    r.worst = worst_slack;
    r.seconds = seconds_since(t0);
    return r;
}

SuiteResult run_margin_bound_suite(int64_t cases, uint64_t seed) {
    const auto t0 = Clock::now();
    Rng rng(seed);
    SuiteResult r;
    r.name = "margin_bound";
    r.cases = cases;
    for (int64_t inst = 0; inst < cases; ++inst) {
        const int64_t classes = 2 + static_cast<int64_t>(rng.below(9));
        std::vector<double> z(static_cast<size_t>(classes));
        for (auto& v : z) v = rng.uniform(-4.0, 4.0);
        const auto check = ce_margin_bound_check(z, static_cast<int64_t>(rng.below(static_cast<uint64_t>(classes))));
        if (!check.holds) ++r.violations;
        r.worst = std::max(r.worst, check.loss - check.bound);
    }
    r.seconds = seconds_since(t0);
    return r;
}

SuiteResult run_dynamics_suite(int64_t cases, uint64_t seed) {
    const auto t0 = Clock::now();
    Rng rng(seed);
    SuiteResult r;
    r.name = "dynamics";
    r.cases = cases;
    for (int64_t inst = 0; inst < cases; ++inst) {
        const int64_t n = 3 + static_cast<int64_t>(rng.below(6));
        const int64_t d = 2 + static_cast<int64_t>(rng.below(7));
        const Tensor a = unit_rows(n, d, rng);
        std::vector<int64_t> labels(static_cast<size_t>(n));
        for (auto& l : labels) l = static_cast<int64_t>(rng.below(3));
        const int64_t k = static_cast<int64_t>(rng.below(static_cast<uint64_t>(n)));
        const auto pos = tangent_dynamics_step(a, labels, k, 1e-3, DynamicsMode::positive_only);
        const auto neg = tangent_dynamics_step(a, labels, k, 1e-3, DynamicsMode::negative_only);
        if (pos.d_pos_sq > 1e-12 || neg.d_neg_sq < -1e-12) ++r.violations;
        r.worst = std::max({r.worst, pos.d_pos_sq, -neg.d_neg_sq});
    }
    r.seconds = seconds_since(t0);
    return r;
}

SuiteResult run_moments_suite(int64_t samples, uint64_t seed) {
    const auto t0 = Clock::now();
    SuiteResult r;
    r.name = "moments";
    for (int64_t d : {2, 8, 64, 1024}) {
        const auto e = cosine_moments_mc(d, samples, seed + static_cast<uint64_t>(d));
        r.cases += 2;
        const double mean_dev = std::fabs(e.mean) / e.stderr_mean;
        const double m2_dev = std::fabs(e.second_moment - 1.0 / static_cast<double>(d)) / e.stderr_second_moment;
        if (mean_dev > 5.0) ++r.violations;
        if (m2_dev > 5.0) ++r.violations;
        r.worst = std::max({r.worst, mean_dev, m2_dev});
    }
    r.seconds = seconds_since(t0);
    return r;
}

SuiteResult run_density_suite() {
    const auto t0 = Clock::now();
    SuiteResult r;
    r.name = "density";
    for (int64_t d : {2, 3, 5, 50}) {
        ++r.cases;
        const double err = std::fabs(cosine_density_normalization(d) - 1.0);
        if (err > 1e-6) ++r.violations;
        r.worst = std::max(r.worst, err);
    }
    r.seconds = seconds_since(t0);
    return r;
}

SuiteResult run_kernel_suite(int64_t pairs, uint64_t seed) {
    const auto t0 = Clock::now();
    Rng rng(seed);
    SuiteResult r;
    r.name = "kernel";
    auto unit = [&](int64_t d) {
        std::vector<double> u(static_cast<size_t>(d));
        double norm = 0.0;
        for (auto& v : u) {
            v = rng.gaussian();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (auto& v : u) v /= norm;
        return u;
    };
    for (int64_t p = 0; p < pairs; ++p) {
        const auto u = unit(6), v = unit(6);
        ++r.cases;
        double prev = kernel_check(u, v, 0);
        bool monotone = true;
        for (int64_t m = 1; m <= 12; ++m) {
            const double err = kernel_check(u, v, m);
            // below ~1e-13 the partial sum has hit the rounding floor of
            // exp(u.v) and only wobbles by ulps; monotonicity applies above it
            if (err > prev + 1e-15 && !(err < 1e-13 && prev < 1e-13)) monotone = false;
            prev = err;
        }
        if (!monotone || prev >= 1e-6) ++r.violations;
        r.worst = std::max(r.worst, prev);
    }
    // dual route: explicit d = 3 tensor-power blocks vs the series identity
    for (int p = 0; p < 10; ++p) {
        const auto u = unit(3), v = unit(3);
        const auto hu = kernel_feature_map(u, 10);
        const auto hv = kernel_feature_map(v, 10);
        double dot = 0.0;
        for (size_t i = 0; i < hu.size(); ++i) dot += hu[i] * hv[i];
        double uv = 0.0;
        for (size_t i = 0; i < u.size(); ++i) uv += u[i] * v[i];
        double series = 1.0, term = 1.0;
        for (int64_t m = 1; m <= 10; ++m) {
            term *= uv / static_cast<double>(m);
            series += term;
        }
        // ~9e4 accumulated products leave ~1e-11 of rounding between routes
        ++r.cases;
        if (std::fabs(dot - series) > 1e-10) ++r.violations;
    }
    r.seconds = seconds_since(t0);
    return r;
}

GradCheckReport run_gradient_check(uint64_t seed) {
    const auto t0 = Clock::now();
    GradCheckReport report;

    ModelConfig c;
    c.vocab_size = 11;
    c.n_layers = 2;
    c.n_heads = 2;
    c.embed_dim = 8;
    c.ffn_hidden = 22;
    c.max_seq_len = 8;
    const ModelParams params = ModelParams::init(c, seed);
    Rng rng(seed ^ 0xfeedULL);
    const int64_t n = 6;
    std::vector<int64_t> tokens(static_cast<size_t>(n)), labels(static_cast<size_t>(n));
    for (auto& t : tokens) t = static_cast<int64_t>(rng.below(static_cast<uint64_t>(c.vocab_size)));
    for (auto& l : labels) l = static_cast<int64_t>(rng.below(static_cast<uint64_t>(c.vocab_size)));
    const double lambda = lambda_for_dim(c.embed_dim);

    for (const double tau : {1.0, 0.1, 0.01}) {
        auto build = [&](Graph& g) {
            const auto inputs = make_param_inputs(g, c);
            const ModelGraph m = build_model(g, c, inputs, tokens, c.n_layers);
            const CeGraph ce = build_cross_entropy(g, m.logits, labels);
            const Expr sr = build_simreg(g, m.capture, labels, tau, 2);
            return build_combined_loss(g, ce.mean, sr, lambda);
        };
        Graph g;
        const Expr root = build(g);
        const Bindings binds = param_bindings(params);
        g.forward(binds);
        g.backward(root);
        for (const auto& [name, value] : params.tensors) {
            const Tensor ad = g.input_grad(name);
            const Tensor fd = finite_difference_gradient(
                [&](const Tensor& point) {
                    Graph g2;
                    const Expr root2 = build(g2);
                    Bindings b2 = binds;
                    b2[name] = point;
                    return evaluate(root2, b2).data[0];
                },
                value, 1e-5);
            for (size_t i = 0; i < ad.data.size(); ++i)
                report.model_max_rel_err =
                    std::max(report.model_max_rel_err, rel_err_floor(ad.data[i], fd.data[i], 1e-2));
        }
    }

    // loss module alone: embeddings and logits as free inputs
    for (const double tau : {1.0, 0.1, 0.01}) {
        const int64_t d = 8, classes = 11;
        const Tensor e0 = uniform_tensor({n, d}, rng, -1.0, 1.0);
        const Tensor z0 = uniform_tensor({n, classes}, rng, -1.0, 1.0);
        auto build = [&](Graph& g) {
            const Expr e = g.input("e", {n, d});
            const Expr z = g.input("z", {n, classes});
            const CeGraph ce = build_cross_entropy(g, z, labels);
            const Expr sr = build_simreg(g, e, labels, tau, 2);
            return build_combined_loss(g, ce.mean, sr, lambda);
        };
        Graph g;
        const Expr root = build(g);
        const Bindings binds{{"e", e0}, {"z", z0}};
        g.forward(binds);
        g.backward(root);
        for (const char* which : {"e", "z"}) {
            const Tensor ad = g.input_grad(which);
            const Tensor fd = finite_difference_gradient(
                [&](const Tensor& point) {
                    Graph g2;
                    const Expr root2 = build(g2);
                    Bindings b2 = binds;
                    b2[which] = point;
                    return evaluate(root2, b2).data[0];
                },
                binds.at(which), 1e-5);
            for (size_t i = 0; i < ad.data.size(); ++i)
                report.loss_max_rel_err =
                    std::max(report.loss_max_rel_err, rel_err_floor(ad.data[i], fd.data[i], 1e-2));
        }
    }

    report.model_pass = report.model_max_rel_err < 1e-3;
    report.loss_pass = report.loss_max_rel_err < 1e-4;
    report.seconds = seconds_since(t0);
    return report;
}

}  // namespace simreg
