#include <cmath>
#include <stdexcept>
#include <numbers>

#include "doctest.h"
#include "simreglab/theory.hpp"
#include "test_util.hpp"

using namespace simreg;
using namespace simreg::testutil;

TEST_CASE("margin: direct formula, ties, misclassification, errors") {
    CHECK(margin(std::vector<double>{2.0, 1.0, 0.0}, 0) == 1.0);
    CHECK(margin(std::vector<double>{0.0, 0.0}, 0) == 0.0);
    CHECK(margin(std::vector<double>{1.0, 3.0}, 0) == -2.0);
    CHECK_THROWS_AS(margin(std::vector<double>{1.0}, 0), std::invalid_argument);
}

TEST_CASE("margin -> loss bound") {
    {
        const auto r = ce_margin_bound_check(std::vector<double>{1.0, 0.0}, 0);
        CHECK(close(r.loss, std::log(1.0 + std::exp(-1.0)), 1e-12));
        CHECK(close(r.bound, std::exp(-1.0), 1e-12));
        CHECK(r.holds);
    }
    {
        std::vector<double> z(10, 0.7);
        const auto r = ce_margin_bound_check(z, 4);
        CHECK(close(r.loss, std::log(10.0), 1e-12));
        CHECK(close(r.bound, 9.0, 1e-12));
        CHECK(r.holds);
    }
    Rng rng(101);
    int violations = 0;
    for (int inst = 0; inst < 1000; ++inst) {
        const int64_t classes = 2 + static_cast<int64_t>(rng.below(9));
        std::vector<double> z(static_cast<size_t>(classes));
        for (auto& v : z) v = rng.uniform(-4.0, 4.0);
        const auto r = ce_margin_bound_check(z, static_cast<int64_t>(rng.below(static_cast<uint64_t>(classes))));
        if (!r.holds) ++violations;
    }
    CHECK(violations == 0);
}

TEST_CASE("weighted centers") {
    {
        // singleton positive group: center is the token itself
        const Tensor e = Tensor::matrix(2, 2, {0.5, -1.0, 2.0, 0.25});
        const auto wc = weighted_centers(e, std::vector<int64_t>{0, 1}, 0);
        CHECK(wc.pos_center[0] == e(0, 0));
        CHECK(wc.pos_center[1] == e(0, 1));
        CHECK(wc.alpha_pos.size() == 1);
        CHECK(wc.alpha_pos[0] == 1.0);
        CHECK(wc.has_neg);
    }
    {
        // equal inner products within the positive pair -> midpoint
        const Tensor e = Tensor::matrix(2, 2, {1.0, 0.0, 1.0, 1.0});  // e0.e0 == e0.e1 == 1
        const auto wc = weighted_centers(e, std::vector<int64_t>{3, 3}, 0);
        CHECK(close(wc.pos_center[0], 1.0, 1e-15));
        CHECK(close(wc.pos_center[1], 0.5, 1e-15));
        CHECK_FALSE(wc.has_neg);
        CHECK(wc.neg_center.empty());
    }
    {
        // random instance vs the unstabilized direct formula at small norms
        Rng rng(55);
        for (int inst = 0; inst < 50; ++inst) {
            const int64_t n = 6, d = 3;
            const Tensor e = rand_tensor({n, d}, rng, -0.5, 0.5);
            std::vector<int64_t> labels(static_cast<size_t>(n));
            for (auto& l : labels) l = static_cast<int64_t>(rng.below(2));
            const int64_t k = static_cast<int64_t>(rng.below(n));
            const auto wc = weighted_centers(e, labels, k);
            std::vector<double> naive(static_cast<size_t>(d), 0.0);
            double total = 0.0;
            for (int64_t i = 0; i < n; ++i) {
                if (labels[static_cast<size_t>(i)] != labels[static_cast<size_t>(k)]) continue;
                double dot = 0.0;
                for (int64_t t = 0; t < d; ++t) dot += e(k, t) * e(i, t);
                const double a = std::exp(dot);
                total += a;
                for (int64_t t = 0; t < d; ++t) naive[static_cast<size_t>(t)] += a * e(i, t);
            }
            for (int64_t t = 0; t < d; ++t)
                CHECK(close(wc.pos_center[static_cast<size_t>(t)], naive[static_cast<size_t>(t)] / total, 1e-10,
                            1e-12));
            double alpha_sum = 0.0;
            for (double a : wc.alpha_pos) {
                CHECK(a >= 0.0);
                alpha_sum += a;
            }
            CHECK(close(alpha_sum, 1.0, 1e-12));
        }
    }
}

TEST_CASE("spectral norm is exact on known matrices") {
    {
        Tensor w({3, 3});
        w(0, 0) = -4.0;
        w(1, 1) = 2.0;
        w(2, 2) = 1.0;
        CHECK(close(spectral_norm(w), 4.0, 1e-12));
    }
    {
        // rank-1: norm = |u||v|
        Tensor w({2, 3});
        const std::vector<double> u{3.0, -4.0}, v{1.0, 2.0, 2.0};
        for (int64_t i = 0; i < 2; ++i)
            for (int64_t j = 0; j < 3; ++j) w(i, j) = u[static_cast<size_t>(i)] * v[static_cast<size_t>(j)];
        CHECK(close(spectral_norm(w), 5.0 * 3.0, 1e-12));
    }
    {
        // against a long power iteration on a random matrix
        Rng rng(77);
        const Tensor w = rand_tensor({5, 7}, rng);
        std::vector<double> x(7, 1.0);
        double est = 0.0;
        for (int it = 0; it < 3000; ++it) {
            std::vector<double> wx(5, 0.0);
            for (int64_t i = 0; i < 5; ++i)
                for (int64_t j = 0; j < 7; ++j) wx[static_cast<size_t>(i)] += w(i, j) * x[static_cast<size_t>(j)];
            std::vector<double> wtwx(7, 0.0);
            for (int64_t j = 0; j < 7; ++j)
                for (int64_t i = 0; i < 5; ++i) wtwx[static_cast<size_t>(j)] += w(i, j) * wx[static_cast<size_t>(i)];
            double norm = 0.0;
            for (double v : wtwx) norm += v * v;
            norm = std::sqrt(norm);
            for (auto& v : wtwx) v /= norm;
            x = wtwx;
            est = std::sqrt(norm);
        }
        CHECK(close(spectral_norm(w), est, 1e-9));
    }
}

TEST_CASE("weighted-center bounds sandwich the token margin") {
    {
        // token at its own positive center: lower bound is an equality
        Rng rng(31);
        const Tensor e = rand_tensor({3, 4}, rng);
        const std::vector<int64_t> labels{0, 1, 1};
        const Tensor head = rand_tensor({4, 5}, rng);
        const auto entry = group_margin_bounds(e, labels, head, 0);
        CHECK(entry.pos_center_dist < 1e-14);
        CHECK(close(entry.lower, entry.margin, 1e-10, 1e-12));
        CHECK(entry.lower_holds);
        CHECK(entry.upper_holds);
    }
    {
        // identity head on d = C = 3, hand-checkable
        Tensor head({3, 3});
        for (int64_t i = 0; i < 3; ++i) head(i, i) = 1.0;
        const Tensor e = Tensor::matrix(3, 3, {1.0, 0.0, 0.0, 0.9, 0.1, 0.0, 0.0, 0.0, 1.0});
        const std::vector<int64_t> labels{0, 0, 2};
        const auto entry = group_margin_bounds(e, labels, head, 0);
        CHECK(close(entry.smoothness, 1.0, 1e-12));
        CHECK(entry.margin == 1.0);  // logits (1,0,0), y=0
        CHECK(entry.lower_holds);
        CHECK(entry.upper_holds);
        CHECK(entry.has_neg);
    }
    {
        // 500 random linear-head instances, zero violations
        Rng rng(500);
        int violations = 0;
        for (int inst = 0; inst < 500; ++inst) {
            const int64_t n = 2 + static_cast<int64_t>(rng.below(9));
            const int64_t d = 2 + static_cast<int64_t>(rng.below(7));
            const int64_t classes = 2 + static_cast<int64_t>(rng.below(7));
            const Tensor e = rand_tensor({n, d}, rng);
            const Tensor head = rand_tensor({d, classes}, rng);
            std::vector<int64_t> labels(static_cast<size_t>(n));
            for (auto& l : labels) l = static_cast<int64_t>(rng.below(static_cast<uint64_t>(classes)));
            for (int64_t k = 0; k < n; ++k) {
                const auto entry = group_margin_bounds(e, labels, head, k);
                if (!entry.lower_holds || !entry.upper_holds) ++violations;
            }
        }
        CHECK(violations == 0);
    }
}

TEST_CASE("smoothness transfer for linear heads") {
    Rng rng(808);
    int violations = 0;
    for (int inst = 0; inst < 500; ++inst) {
        const int64_t d = 2 + static_cast<int64_t>(rng.below(7));
        const int64_t classes = 2 + static_cast<int64_t>(rng.below(7));
        const Tensor head = rand_tensor({d, classes}, rng);
        const double lp = spectral_norm(head);
        const Tensor ep = rand_tensor({1, d}, rng);
        const Tensor eq = rand_tensor({1, d}, rng);
        const int64_t y = static_cast<int64_t>(rng.below(static_cast<uint64_t>(classes)));
        int64_t j = static_cast<int64_t>(rng.below(static_cast<uint64_t>(classes)));
        if (j == y) j = (j + 1) % classes;
        const double gp = logit_gap({ep.data.data(), ep.data.size()}, head, y, j);
        const double gq = logit_gap({eq.data.data(), eq.data.size()}, head, y, j);
        double dist = 0.0;
        for (size_t t = 0; t < ep.data.size(); ++t)
            dist += (ep.data[t] - eq.data[t]) * (ep.data[t] - eq.data[t]);
        dist = std::sqrt(dist);
        if (std::fabs(gp - gq) > std::numbers::sqrt2 * lp * dist + 1e-9) ++violations;
    }
    CHECK(violations == 0);
}

namespace {
Tensor random_unit_rows(int64_t n, int64_t d, Rng& rng) {
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
}  // namespace

TEST_CASE("tangent dynamics") {
    {
        // singleton positive group: v+ is parallel to a_k, so nothing moves
        Rng rng(4);
        const Tensor a = random_unit_rows(3, 4, rng);
        const auto e = tangent_dynamics_step(a, std::vector<int64_t>{0, 1, 1}, 0, 1e-3,
                                             DynamicsMode::positive_only);
        for (double v : e.tangent_update) CHECK(std::fabs(v) < 1e-14);
        CHECK(std::fabs(e.d_pos_sq) < 1e-14);
    }
    {
        // antipodal negative pair in d = 2: the tangent component vanishes
        Tensor a = Tensor::matrix(2, 2, {1.0, 0.0, -1.0, 0.0});
        const auto e = tangent_dynamics_step(a, std::vector<int64_t>{0, 1}, 0, 1e-3,
                                             DynamicsMode::negative_only);
        CHECK(e.d_neg_sq >= -1e-15);
        CHECK(std::fabs(e.d_neg_sq) < 1e-14);
    }
    {
        // 200 random instances: positive-only never increases |a - v+|^2,
        // negative-only never decreases |a - v-|^2
        Rng rng(606);
        int pos_viol = 0, neg_viol = 0;
        for (int inst = 0; inst < 200; ++inst) {
            const int64_t n = 3 + static_cast<int64_t>(rng.below(6));
            const int64_t d = 2 + static_cast<int64_t>(rng.below(7));
            const Tensor a = random_unit_rows(n, d, rng);
            std::vector<int64_t> labels(static_cast<size_t>(n));
            for (auto& l : labels) l = static_cast<int64_t>(rng.below(3));
            const int64_t k = static_cast<int64_t>(rng.below(n));
            const auto pos = tangent_dynamics_step(a, labels, k, 1e-3, DynamicsMode::positive_only);
            const auto neg = tangent_dynamics_step(a, labels, k, 1e-3, DynamicsMode::negative_only);
            if (pos.d_pos_sq > 1e-12) ++pos_viol;
            if (neg.d_neg_sq < -1e-12) ++neg_viol;
        }
        CHECK(pos_viol == 0);
        CHECK(neg_viol == 0);
    }
    {
        Tensor bad = Tensor::matrix(2, 2, {2.0, 0.0, 0.0, 1.0});
        CHECK_THROWS_WITH_AS(tangent_dynamics_step(bad, std::vector<int64_t>{0, 1}, 0, 1e-3),
                             doctest::Contains("unit"), std::invalid_argument);
    }
}

TEST_CASE("cosine moments via Monte Carlo") {
    for (int64_t d : {2, 8}) {
        const auto e = cosine_moments_mc(d, 100000, 42);
        CHECK(std::fabs(e.mean) <= 5.0 * e.stderr_mean);
        CHECK(std::fabs(e.second_moment - 1.0 / static_cast<double>(d)) <= 5.0 * e.stderr_second_moment);
        CHECK(e.mean >= -1.0);
        CHECK(e.mean <= 1.0);
        CHECK(e.second_moment >= e.mean * e.mean);
    }
    CHECK_THROWS_AS(cosine_moments_mc(1, 10, 1), std::invalid_argument);
}

TEST_CASE("cosine density: closed form and normalization") {
    for (double z : {-0.9, -0.3, 0.0, 0.4, 0.99}) CHECK(close(cosine_density(z, 3), 0.5, 1e-12));
    CHECK(close(cosine_density(0.0, 2), 1.0 / std::numbers::pi, 1e-12));
    for (int64_t d : {2, 5, 17}) {
        for (double z : {0.1, 0.5, 0.83}) CHECK(close(cosine_density(z, d), cosine_density(-z, d), 1e-13));
    }
    CHECK_THROWS_AS(cosine_density(1.2, 4), std::invalid_argument);
    for (int64_t d : {2, 3, 5, 50}) {
        INFO("d = ", d);
        CHECK(std::fabs(cosine_density_normalization(d) - 1.0) < 1e-6);
    }
}

TEST_CASE("kernel feature map and the exp inner-product identity") {
    Rng rng(909);
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
    {
        // M = 0 keeps only the constant block
        const auto u = unit(3), v = unit(3);
        double uv = 0.0;
        for (size_t i = 0; i < u.size(); ++i) uv += u[i] * v[i];
        CHECK(close(kernel_check(u, v, 0), std::fabs(1.0 - std::exp(uv)), 1e-14));
    }
    {
        const auto u = unit(4);
        CHECK(kernel_check(u, u, 10) < 1e-7);
    }
    {
        // orthogonal pair: every truncation is exact
        const std::vector<double> u{1.0, 0.0}, v{0.0, 1.0};
        for (int64_t m = 0; m <= 12; ++m) CHECK(kernel_check(u, v, m) == 0.0);
    }
    {
        // materialized tensor-power blocks agree with the series identity
        for (int64_t d : {2, 3}) {
            for (int trial = 0; trial < 5; ++trial) {
                const auto u = unit(d), v = unit(d);
                const auto hu = kernel_feature_map(u, 8);
                const auto hv = kernel_feature_map(v, 8);
                REQUIRE(hu.size() == hv.size());
                double dot = 0.0;
                for (size_t i = 0; i < hu.size(); ++i) dot += hu[i] * hv[i];
                double uv = 0.0;
                for (size_t i = 0; i < u.size(); ++i) uv += u[i] * v[i];
                double series = 1.0, term = 1.0;
                for (int64_t m = 1; m <= 8; ++m) {
                    term *= uv / static_cast<double>(m);
                    series += term;
                }
                CHECK(close(dot, series, 1e-12, 1e-14));
            }
        }
    }
    {
        // truncation error shrinks monotonically (down to the rounding floor)
        // and clears 1e-6 by M = 12
        for (int trial = 0; trial < 10; ++trial) {
            const auto u = unit(6), v = unit(6);
            double prev = kernel_check(u, v, 0);
            for (int64_t m = 1; m <= 12; ++m) {
                const double err = kernel_check(u, v, m);
                CHECK((err <= prev + 1e-15 || (err < 1e-13 && prev < 1e-13)));
                prev = err;
            }
            CHECK(prev < 1e-6);
        }
    }
    CHECK_THROWS_AS(kernel_feature_map(std::vector<double>(64, 0.1), 12), std::invalid_argument);
}

TEST_CASE("average angle from similarity") {
    CHECK(close(average_angle_from_similarity(0.0), 90.0, 1e-13));
    CHECK(close(average_angle_from_similarity(1.0), 0.0, 1e-13, 1e-13));
    CHECK(std::fabs(average_angle_from_similarity(0.48) - 61.3) < 0.05);
    CHECK_THROWS_AS(average_angle_from_similarity(1.5), std::invalid_argument);
}
