#include "simreglab/theory.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "simreglab/graph.hpp"
#include "simreglab/losses.hpp"

namespace simreg {

namespace {

double vdot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double vnorm(std::span<const double> a) { return std::sqrt(vdot(a, a)); }

std::span<const double> row(const Tensor& t, int64_t i) {
    return {t.data.data() + i * t.shape[1], static_cast<size_t>(t.shape[1])};
}

std::vector<double> mat_logits(std::span<const double> e, const Tensor& head) {
    const int64_t d = head.shape[0], classes = head.shape[1];
    if (static_cast<int64_t>(e.size()) != d) throw std::invalid_argument("embedding/head dimension mismatch");
    std::vector<double> z(static_cast<size_t>(classes), 0.0);
    for (int64_t p = 0; p < d; ++p) {
        const double ev = e[static_cast<size_t>(p)];
        for (int64_t j = 0; j < classes; ++j) z[static_cast<size_t>(j)] += ev * head(p, j);
    }
    return z;
}

// largest eigenvalue of a symmetric matrix by cyclic Jacobi rotations
double jacobi_lambda_max(std::vector<double> a, int64_t n) {
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int64_t p = 0; p < n; ++p)
            for (int64_t q = p + 1; q < n; ++q) off += a[static_cast<size_t>(p * n + q)] * a[static_cast<size_t>(p * n + q)];
        if (off < 1e-28) break;
        for (int64_t p = 0; p < n; ++p)
            for (int64_t q = p + 1; q < n; ++q) {
                const double apq = a[static_cast<size_t>(p * n + q)];
                if (apq == 0.0) continue;
                const double app = a[static_cast<size_t>(p * n + p)];
                const double aqq = a[static_cast<size_t>(q * n + q)];
                const double theta = 0.5 * std::atan2(2.0 * apq, aqq - app);
                const double c = std::cos(theta), s = std::sin(theta);
                for (int64_t i = 0; i < n; ++i) {
                    const double aip = a[static_cast<size_t>(i * n + p)];
                    const double aiq = a[static_cast<size_t>(i * n + q)];
                    a[static_cast<size_t>(i * n + p)] = c * aip - s * aiq;
                    a[static_cast<size_t>(i * n + q)] = s * aip + c * aiq;
                }
                for (int64_t i = 0; i < n; ++i) {
                    const double api = a[static_cast<size_t>(p * n + i)];
                    const double aqi = a[static_cast<size_t>(q * n + i)];
                    a[static_cast<size_t>(p * n + i)] = c * api - s * aqi;
                    a[static_cast<size_t>(q * n + i)] = s * api + c * aqi;
                }
            }
    }
    double best = a[0];
    for (int64_t i = 1; i < n; ++i) best = std::max(best, a[static_cast<size_t>(i * n + i)]);
    return best;
}

}  // namespace

double margin(std::span<const double> logits, int64_t label) {
    const int64_t classes = static_cast<int64_t>(logits.size());
    if (classes < 2) throw std::invalid_argument("margin needs at least two classes");
    if (label < 0 || label >= classes) throw std::invalid_argument("margin: label out of range");
    double best = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < classes; ++j)
        if (j != label) best = std::max(best, logits[static_cast<size_t>(j)]);
    return logits[static_cast<size_t>(label)] - best;
}

MarginBoundCheck ce_margin_bound_check(std::span<const double> logits, int64_t label) {
    const double m = margin(logits, label);
    std::vector<double> vals(logits.begin(), logits.end());
    const double loss = logsumexp_stable(std::move(vals)) - logits[static_cast<size_t>(label)];
    const double bound = static_cast<double>(logits.size() - 1) * std::exp(-m);
    return MarginBoundCheck{loss, bound, loss <= bound + 1e-12};
}

WeightedCenters weighted_centers(const Tensor& embeddings, std::span<const int64_t> labels, int64_t k) {
    const int64_t n = embeddings.shape[0], d = embeddings.shape[1];
    if (n != static_cast<int64_t>(labels.size()))
        throw std::invalid_argument("weighted_centers: embeddings/labels mismatch");
    if (k < 0 || k >= n) throw std::invalid_argument("weighted_centers: token index out of range");
    const GroupIndex groups = build_groups(labels);
    const auto ek = row(embeddings, k);

    auto center = [&](const std::vector<int64_t>& group, std::vector<double>& alpha_out) {
        std::vector<double> scores;
        scores.reserve(group.size());
        for (int64_t i : group) scores.push_back(vdot(ek, row(embeddings, i)));
        const double m = *std::max_element(scores.begin(), scores.end());
        double total = 0.0;
        alpha_out.resize(group.size());
        for (size_t i = 0; i < group.size(); ++i) {
            alpha_out[i] = std::exp(scores[i] - m);
            total += alpha_out[i];
        }
        std::vector<double> c(static_cast<size_t>(d), 0.0);
        for (size_t i = 0; i < group.size(); ++i) {
            alpha_out[i] /= total;
            const auto ei = row(embeddings, group[i]);
            for (int64_t t = 0; t < d; ++t) c[static_cast<size_t>(t)] += alpha_out[i] * ei[static_cast<size_t>(t)];
        }
        return c;
    };

    WeightedCenters out;
    out.pos_center = center(groups.pos[static_cast<size_t>(k)], out.alpha_pos);
    out.has_neg = !groups.neg[static_cast<size_t>(k)].empty();
    if (out.has_neg) out.neg_center = center(groups.neg[static_cast<size_t>(k)], out.alpha_neg);
    return out;
}

double logit_gap(std::span<const double> e, const Tensor& head, int64_t y, int64_t j) {
    const auto z = mat_logits(e, head);
    return z[static_cast<size_t>(y)] - z[static_cast<size_t>(j)];
}

double spectral_norm(const Tensor& w) {
    if (w.rank() != 2) throw std::invalid_argument("spectral_norm expects a matrix");
    const int64_t r = w.shape[0], c = w.shape[1];
    const int64_t n = std::min(r, c);
    std::vector<double> gram(static_cast<size_t>(n * n), 0.0);
    if (r <= c) {  // W W^T
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < r; ++j)
                gram[static_cast<size_t>(i * n + j)] = vdot(row(w, i), row(w, j));
    } else {  // W^T W
        for (int64_t i = 0; i < c; ++i)
            for (int64_t j = 0; j < c; ++j) {
                double s = 0.0;
                for (int64_t p = 0; p < r; ++p) s += w(p, i) * w(p, j);
                gram[static_cast<size_t>(i * n + j)] = s;
            }
    }
    return std::sqrt(std::max(0.0, jacobi_lambda_max(std::move(gram), n)));
}

MarginEntry group_margin_bounds(const Tensor& embeddings, std::span<const int64_t> labels,
                                const Tensor& head, int64_t k, double slack) {
    const int64_t classes = head.shape[1];
    if (classes < 2) throw std::invalid_argument("group_margin_bounds needs at least two classes");
    const int64_t y = labels[static_cast<size_t>(k)];
    const WeightedCenters wc = weighted_centers(embeddings, labels, k);
    const auto ek = row(embeddings, k);

    MarginEntry e;
    e.smoothness = spectral_norm(head);
    e.margin = margin(mat_logits(ek, head), y);
    e.pos_group_margin = margin(mat_logits(wc.pos_center, head), y);
    std::vector<double> diff(ek.size());
    for (size_t t = 0; t < ek.size(); ++t) diff[t] = ek[t] - wc.pos_center[t];
    e.pos_center_dist = vnorm(diff);
    e.lower = e.pos_group_margin - std::numbers::sqrt2 * e.smoothness * e.pos_center_dist;
    e.lower_holds = e.margin >= e.lower - slack;
    e.has_neg = wc.has_neg;
    if (wc.has_neg) {
        e.neg_group_margin = margin(mat_logits(wc.neg_center, head), y);
        for (size_t t = 0; t < ek.size(); ++t) diff[t] = ek[t] - wc.neg_center[t];
        e.neg_center_dist = vnorm(diff);
        e.upper = e.neg_group_margin + std::numbers::sqrt2 * e.smoothness * e.neg_center_dist;
        e.upper_holds = e.margin <= e.upper + slack;
    }
    return e;
}

std::vector<MarginEntry> margin_report(const Tensor& embeddings, std::span<const int64_t> labels,
                                       const Tensor& head, double slack) {
    std::vector<MarginEntry> out;
    for (int64_t k = 0; k < embeddings.shape[0]; ++k)
        out.push_back(group_margin_bounds(embeddings, labels, head, k, slack));
    return out;
}

DynamicsEntry tangent_dynamics_step(const Tensor& unit_embeddings, std::span<const int64_t> labels,
                                    int64_t k, double eta, DynamicsMode mode) {
    const int64_t n = unit_embeddings.shape[0], d = unit_embeddings.shape[1];
    if (n != static_cast<int64_t>(labels.size()))
        throw std::invalid_argument("tangent_dynamics_step: embeddings/labels mismatch");
    if (!(eta > 0.0)) throw std::invalid_argument("tangent_dynamics_step: eta must be > 0");
    for (int64_t i = 0; i < n; ++i)
        if (std::fabs(vnorm(row(unit_embeddings, i)) - 1.0) > 1e-8)
            throw std::invalid_argument("tangent_dynamics_step: row " + std::to_string(i) + " is not unit norm");

    const GroupIndex groups = build_groups(labels);
    const auto ak = row(unit_embeddings, k);

    DynamicsEntry e;
    e.v_pos.assign(static_cast<size_t>(d), 0.0);
    e.v_neg.assign(static_cast<size_t>(d), 0.0);
    for (int64_t i : groups.pos[static_cast<size_t>(k)]) {
        const double w = std::exp(vdot(ak, row(unit_embeddings, i)));
        e.mass_pos += w;
        const auto ai = row(unit_embeddings, i);
        for (int64_t t = 0; t < d; ++t) e.v_pos[static_cast<size_t>(t)] += w * ai[static_cast<size_t>(t)];
    }
    const double inv_pos = 1.0 / static_cast<double>(groups.pos[static_cast<size_t>(k)].size());
    for (auto& v : e.v_pos) v *= inv_pos;
    if (!groups.neg[static_cast<size_t>(k)].empty()) {
        for (int64_t i : groups.neg[static_cast<size_t>(k)]) {
            const double w = std::exp(vdot(ak, row(unit_embeddings, i)));
            e.mass_neg += w;
            const auto ai = row(unit_embeddings, i);
            for (int64_t t = 0; t < d; ++t) e.v_neg[static_cast<size_t>(t)] += w * ai[static_cast<size_t>(t)];
        }
        const double inv_neg = 1.0 / static_cast<double>(groups.neg[static_cast<size_t>(k)].size());
        for (auto& v : e.v_neg) v *= inv_neg;
    }

    const double c = e.mass_neg / (e.mass_pos + e.mass_neg);  // N_k / (P_k + N_k)
    std::vector<double> dir(static_cast<size_t>(d), 0.0);     // raw update before projection
    switch (mode) {
        case DynamicsMode::full:
            for (int64_t t = 0; t < d; ++t)
                dir[static_cast<size_t>(t)] = c * (e.v_pos[static_cast<size_t>(t)] - e.v_neg[static_cast<size_t>(t)]);
            break;
        case DynamicsMode::positive_only:
            for (int64_t t = 0; t < d; ++t) dir[static_cast<size_t>(t)] = c * e.v_pos[static_cast<size_t>(t)];
            break;
        case DynamicsMode::negative_only:
            for (int64_t t = 0; t < d; ++t) dir[static_cast<size_t>(t)] = -c * e.v_neg[static_cast<size_t>(t)];
            break;
    }
    // project onto the tangent space at a_k
    const double along = vdot({dir.data(), dir.size()}, ak);
    e.tangent_update.resize(static_cast<size_t>(d));
    for (int64_t t = 0; t < d; ++t)
        e.tangent_update[static_cast<size_t>(t)] = dir[static_cast<size_t>(t)] - along * ak[static_cast<size_t>(t)];

    std::vector<double> next(static_cast<size_t>(d));
    for (int64_t t = 0; t < d; ++t)
        next[static_cast<size_t>(t)] = ak[static_cast<size_t>(t)] + eta * e.tangent_update[static_cast<size_t>(t)];
    const double nn = vnorm(next);
    for (auto& v : next) v /= nn;
    e.direction = next;

    auto dist_sq = [&](std::span<const double> a, const std::vector<double>& v) {
        double s = 0.0;
        for (size_t t = 0; t < a.size(); ++t) s += (a[t] - v[t]) * (a[t] - v[t]);
        return s;
    };
    e.d_pos_sq = dist_sq({next.data(), next.size()}, e.v_pos) - dist_sq(ak, e.v_pos);
    e.d_neg_sq = dist_sq({next.data(), next.size()}, e.v_neg) - dist_sq(ak, e.v_neg);
    return e;
}

MomentEstimate cosine_moments_mc(int64_t d, int64_t n_samples, uint64_t seed) {
    if (d < 2) throw std::invalid_argument("cosine_moments_mc: d must be >= 2");
    if (n_samples < 1) throw std::invalid_argument("cosine_moments_mc: need at least one sample");
    Rng rng(seed);
    std::vector<double> x(static_cast<size_t>(d)), y(static_cast<size_t>(d));
    double s1 = 0.0, s2 = 0.0, s4 = 0.0;
    for (int64_t s = 0; s < n_samples; ++s) {
        for (auto& v : x) v = rng.gaussian();
        for (auto& v : y) v = rng.gaussian();
        double xy = 0.0, xx = 0.0, yy = 0.0;
        for (int64_t t = 0; t < d; ++t) {
            xy += x[static_cast<size_t>(t)] * y[static_cast<size_t>(t)];
            xx += x[static_cast<size_t>(t)] * x[static_cast<size_t>(t)];
            yy += y[static_cast<size_t>(t)] * y[static_cast<size_t>(t)];
        }
        const double z = xy / std::sqrt(xx * yy);
        s1 += z;
        s2 += z * z;
        s4 += z * z * z * z;
    }
    const double inv = 1.0 / static_cast<double>(n_samples);
    MomentEstimate e;
    e.mean = s1 * inv;
    e.second_moment = s2 * inv;
    const double var_z = std::max(0.0, s2 * inv - e.mean * e.mean);
    const double var_z2 = std::max(0.0, s4 * inv - e.second_moment * e.second_moment);
    e.stderr_mean = std::sqrt(var_z * inv);
    e.stderr_second_moment = std::sqrt(var_z2 * inv);
    return e;
}

double cosine_density(double z, int64_t d) {
    if (d < 2) throw std::invalid_argument("cosine_density: d must be >= 2");
    if (std::fabs(z) > 1.0) throw std::invalid_argument("cosine_density: |z| must be <= 1");
    const double logk = std::lgamma(static_cast<double>(d) / 2.0) -
                        std::lgamma((static_cast<double>(d) - 1.0) / 2.0) -
                        0.5 * std::log(std::numbers::pi);
    return std::exp(logk) * std::pow(1.0 - z * z, (static_cast<double>(d) - 3.0) / 2.0);
}

namespace {
double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double fa, double fb,
                        double fm, double whole, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if (depth <= 0 || std::fabs(left + right - whole) <= 15.0 * tol)
        return left + right + (left + right - whole) / 15.0;
    return adaptive_simpson(f, a, m, fa, fm, flm, left, tol / 2.0, depth - 1) +
           adaptive_simpson(f, m, b, fm, fb, frm, right, tol / 2.0, depth - 1);
}
}  // namespace

double cosine_density_normalization(int64_t d) {
    // z = sin t removes the endpoint singularity (integrand K cos^(d-2) t)
    const std::function<double(double)> f = [d](double t) {
        const double z = std::sin(t);
        if (std::fabs(z) >= 1.0) return d == 2 ? cosine_density(0.0, 2) : 0.0;
        return cosine_density(z, d) * std::cos(t);
    };
    const double a = -std::numbers::pi / 2.0, b = std::numbers::pi / 2.0;
    const double fa = f(a), fb = f(b), fm = f(0.0);
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return adaptive_simpson(f, a, b, fa, fb, fm, whole, 1e-10, 40);
}

std::vector<double> kernel_feature_map(std::span<const double> u, int64_t order) {
    if (order < 0) throw std::invalid_argument("kernel_feature_map: order must be >= 0");
    if (vnorm(u) > 1.0 + 1e-9) throw std::invalid_argument("kernel_feature_map: |u| must be <= 1");
    const int64_t d = static_cast<int64_t>(u.size());
    // total size sum_{m<=M} d^m; refuse anything that cannot be materialized
    double total = 0.0, power = 1.0;
    for (int64_t m = 0; m <= order; ++m) {
        total += power;
        power *= static_cast<double>(d);
    }
    if (total > 6.0e7) throw std::invalid_argument("kernel_feature_map: d^M too large to materialize");

    std::vector<double> out;
    out.reserve(static_cast<size_t>(total));
    std::vector<double> block = {1.0};  // u^{x0} block
    double fact = 1.0;
    out.push_back(1.0);
    for (int64_t m = 1; m <= order; ++m) {
        fact *= static_cast<double>(m);
        std::vector<double> next(block.size() * static_cast<size_t>(d));
        size_t idx = 0;
        for (double b : block)
            for (int64_t t = 0; t < d; ++t) next[idx++] = b * u[static_cast<size_t>(t)];
        block = std::move(next);
        const double scale = 1.0 / std::sqrt(fact);
        for (double b : block) out.push_back(scale * b);
    }
    return out;
}

double kernel_check(std::span<const double> u, std::span<const double> v, int64_t order) {
    if (u.size() != v.size()) throw std::invalid_argument("kernel_check: dimension mismatch");
    if (order < 0) throw std::invalid_argument("kernel_check: order must be >= 0");
    if (vnorm(u) > 1.0 + 1e-9 || vnorm(v) > 1.0 + 1e-9)
        throw std::invalid_argument("kernel_check: operands must lie in the unit ball");
    const double uv = vdot(u, v);
    double term = 1.0, sum = 1.0;
    for (int64_t m = 1; m <= order; ++m) {
        term *= uv / static_cast<double>(m);
        sum += term;
    }
    return std::fabs(sum - std::exp(uv));
}

double average_angle_from_similarity(double mean_cosine) {
    if (std::fabs(mean_cosine) > 1.0)
        throw std::invalid_argument("average_angle_from_similarity: cosine out of [-1,1]");
    return std::acos(mean_cosine) * 180.0 / std::numbers::pi;
}

}  // namespace simreg
