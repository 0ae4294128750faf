#include "simreglab/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace simreg {

namespace {

Tensor rows_slice(const Tensor& e, int64_t start, int64_t len) {
    const int64_t d = e.shape[1];
    Tensor out({len, d});
    std::copy_n(e.data.begin() + start * d, len * d, out.data.begin());
    return out;
}

Tensor similarity_values(const Tensor& e, Similarity sim) {
    return sim == Similarity::cosine ? cosine_matrix_values(e) : gram_matrix_values(e);
}

// Fraction of pair slots that are negative: sum_k |N_k| / sum_k (|P_k|+|N_k|).
// Since P_k and N_k partition the window, the denominator is n^2.
double chunk_neg_ratio(std::span<const int64_t> labels) {
    const int64_t n = static_cast<int64_t>(labels.size());
    int64_t neg = 0;
    for (int64_t k = 0; k < n; ++k) {
        int64_t same = 0;
        for (int64_t j = 0; j < n; ++j)
            if (labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(k)]) ++same;
        neg += n - same;
    }
    return static_cast<double>(neg) / static_cast<double>(n * n);
}

double token_value(const Tensor& sims, int64_t k, const GroupIndex& groups, double tau) {
    if (groups.neg[static_cast<size_t>(k)].empty()) return 0.0;
    std::vector<double> pv, nv;
    pv.reserve(groups.pos[static_cast<size_t>(k)].size());
    nv.reserve(groups.neg[static_cast<size_t>(k)].size());
    for (int64_t j : groups.pos[static_cast<size_t>(k)]) pv.push_back(sims(k, j) / tau);
    for (int64_t j : groups.neg[static_cast<size_t>(k)]) nv.push_back(sims(k, j) / tau);
    return logsumexp_stable(std::move(nv)) - logsumexp_stable(std::move(pv));
}

PerTokenLoss simreg_window(const Tensor& e, std::span<const int64_t> labels, double tau, Similarity sim) {
    const Tensor sims = similarity_values(e, sim);
    const GroupIndex groups = build_groups(labels);
    const int64_t n = e.shape[0];
    PerTokenLoss out;
    out.per_token.resize(static_cast<size_t>(n));
    double acc = 0.0;
    for (int64_t k = 0; k < n; ++k) {
        const double sr = token_value(sims, k, groups, tau);
        out.per_token[static_cast<size_t>(k)] = sr;
        acc += sr;
    }
    out.mean = acc / static_cast<double>(n);
    return out;
}

}  // namespace

void SimRegConfig::validate() const {
    if (!(tau > 0.0)) throw std::invalid_argument("simreg: tau must be > 0");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("simreg: lambda must be finite and >= 0");
    if (chunks < 1) throw std::invalid_argument("simreg: chunk count must be >= 1");
}

double softplus(double x) { return softplus_value(x); }

PerTokenLoss cross_entropy(const Tensor& logits, std::span<const int64_t> labels) {
    if (logits.rank() != 2) throw std::invalid_argument("cross_entropy expects [n,C] logits");
    const int64_t n = logits.shape[0], classes = logits.shape[1];
    if (static_cast<int64_t>(labels.size()) != n)
        throw std::invalid_argument("cross_entropy: label count does not match rows");
    PerTokenLoss out;
    out.per_token.resize(static_cast<size_t>(n));
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const int64_t y = labels[static_cast<size_t>(i)];
        if (y < 0 || y >= classes)
            throw std::invalid_argument("cross_entropy: label " + std::to_string(y) + " out of range [0," +
                                        std::to_string(classes) + ")");
        const double ce = cross_entropy_row(logits.data.data() + i * classes, classes, y);
        out.per_token[static_cast<size_t>(i)] = ce;
        acc += ce;
    }
    out.mean = acc / static_cast<double>(n);
    return out;
}

GroupIndex build_groups(std::span<const int64_t> labels) {
    const int64_t n = static_cast<int64_t>(labels.size());
    if (n == 0) throw std::invalid_argument("build_groups: empty window");
    GroupIndex g;
    g.pos.resize(static_cast<size_t>(n));
    g.neg.resize(static_cast<size_t>(n));
    for (int64_t k = 0; k < n; ++k)
        for (int64_t j = 0; j < n; ++j) {
            if (labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(k)])
                g.pos[static_cast<size_t>(k)].push_back(j);
            else
                g.neg[static_cast<size_t>(k)].push_back(j);
        }
    return g;
}

std::vector<std::pair<int64_t, int64_t>> chunk_spans(int64_t n, int64_t b) {
    if (b < 1) throw std::invalid_argument("chunk count must be >= 1");
    if (b > n) throw std::invalid_argument("chunk count " + std::to_string(b) + " exceeds window length " +
                                           std::to_string(n));
    std::vector<std::pair<int64_t, int64_t>> spans;
    const int64_t base = n / b, extra = n % b;
    int64_t start = 0;
    for (int64_t c = 0; c < b; ++c) {
        const int64_t len = base + (c < extra ? 1 : 0);
        spans.emplace_back(start, len);
        start += len;
    }
    return spans;
}

double simreg_token(const Tensor& embeddings, int64_t k, const GroupIndex& groups, double tau,
                    Similarity sim) {
    if (!(tau > 0.0)) throw std::invalid_argument("simreg_token: tau must be > 0");
    if (k < 0 || k >= embeddings.shape[0]) throw std::invalid_argument("simreg_token: token index out of range");
    return token_value(similarity_values(embeddings, sim), k, groups, tau);
}

PerTokenLoss simreg_sequence(const Tensor& embeddings, std::span<const int64_t> labels, double tau,
                             Similarity sim) {
    if (!(tau > 0.0)) throw std::invalid_argument("simreg_sequence: tau must be > 0");
    if (embeddings.rank() != 2 || embeddings.shape[0] != static_cast<int64_t>(labels.size()))
        throw std::invalid_argument("simreg_sequence: embeddings/labels mismatch");
    return simreg_window(embeddings, labels, tau, sim);
}

double simreg_chunked(const Tensor& embeddings, std::span<const int64_t> labels, double tau, int64_t b,
                      Similarity sim) {
    if (!(tau > 0.0)) throw std::invalid_argument("simreg_chunked: tau must be > 0");
    const int64_t n = embeddings.shape[0];
    if (n != static_cast<int64_t>(labels.size()))
        throw std::invalid_argument("simreg_chunked: embeddings/labels mismatch");
    const auto spans = chunk_spans(n, b);
    std::vector<double> means, ratios;
    for (const auto& [start, len] : spans) {
        const Tensor ec = rows_slice(embeddings, start, len);
        const auto sub = labels.subspan(static_cast<size_t>(start), static_cast<size_t>(len));
        means.push_back(simreg_window(ec, sub, tau, sim).mean);
        ratios.push_back(chunk_neg_ratio(sub));
    }
    double total = 0.0;
    for (double r : ratios) total += r;
    if (total == 0.0) return 0.0;
    double result = 0.0;
    for (size_t c = 0; c < means.size(); ++c) result += (ratios[c] / total) * means[c];
    return result;
}

double combined_loss(double ce_mean, double sr_value, double lambda) {
    if (!(lambda >= 0.0)) throw std::invalid_argument("combined_loss: lambda must be >= 0");
    return ce_mean + lambda * softplus_value(sr_value);
}

LossBreakdown loss_breakdown(const Tensor& logits, const Tensor& embeddings,
                             std::span<const int64_t> labels, double tau, double lambda, Similarity sim) {
    const PerTokenLoss ce = cross_entropy(logits, labels);
    const PerTokenLoss sr = simreg_sequence(embeddings, labels, tau, sim);
    LossBreakdown out;
    const size_t n = labels.size();
    out.ce = ce.per_token;
    out.sr = sr.per_token;
    out.softplus_sr.resize(n);
    out.combined.resize(n);
    double sp_acc = 0.0, comb_acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        out.softplus_sr[i] = softplus_value(out.sr[i]);
        out.combined[i] = out.ce[i] + lambda * out.softplus_sr[i];
        sp_acc += out.softplus_sr[i];
        comb_acc += out.combined[i];
    }
    out.ce_mean = ce.mean;
    out.sr_mean = sr.mean;
    out.softplus_sr_mean = sp_acc / static_cast<double>(n);
    out.combined_mean = comb_acc / static_cast<double>(n);
    return out;
}

// ---------------------------------------------------------------
//  graph builders (mirror the immediate functions operation for
//  operation so values agree bitwise)
// ---------------------------------------------------------------

Expr build_simreg(Graph& g, Expr embeddings, std::span<const int64_t> labels, double tau, int64_t b,
                  Similarity sim) {
    if (!(tau > 0.0)) throw std::invalid_argument("build_simreg: tau must be > 0");
    const int64_t n = g.node(embeddings.id).shape[0];
    if (n != static_cast<int64_t>(labels.size()))
        throw std::invalid_argument("build_simreg: embeddings/labels mismatch");
    const auto spans = chunk_spans(n, b);
    const Expr tau_c = g.scalar(tau);
    std::vector<Expr> means;
    std::vector<double> ratios;
    for (const auto& [start, len] : spans) {
        const Expr ec = (len == n) ? embeddings : g.slice(embeddings, 0, start, len);
        const auto sub = labels.subspan(static_cast<size_t>(start), static_cast<size_t>(len));
        const Expr sims =
            g.div(sim == Similarity::cosine ? g.cosine_matrix(ec) : g.gram_matrix(ec), tau_c);
        const GroupIndex groups = build_groups(sub);
        Expr acc{};
        bool have_acc = false;
        for (int64_t k = 0; k < len; ++k) {
            Expr sr;
            if (groups.neg[static_cast<size_t>(k)].empty()) {
                sr = g.scalar(0.0);
            } else {
                const Expr row = g.slice(sims, 0, k, 1);
                const Expr pos = g.gather(row, 1, groups.pos[static_cast<size_t>(k)]);
                const Expr neg = g.gather(row, 1, groups.neg[static_cast<size_t>(k)]);
                sr = g.sub(g.logsumexp(neg), g.logsumexp(pos));
            }
            acc = have_acc ? g.add(acc, sr) : sr;
            have_acc = true;
        }
        means.push_back(g.div(acc, g.scalar(static_cast<double>(len))));
        ratios.push_back(chunk_neg_ratio(sub));
    }
    double total = 0.0;
    for (double r : ratios) total += r;
    if (total == 0.0) return g.scalar(0.0);
    Expr result{};
    bool have_result = false;
    for (size_t c = 0; c < means.size(); ++c) {
        const Expr term = g.mul(g.scalar(ratios[c] / total), means[c]);
        result = have_result ? g.add(result, term) : term;
        have_result = true;
    }
    return result;
}

CeGraph build_cross_entropy(Graph& g, Expr logits, std::span<const int64_t> labels) {
    const Expr per_token = g.cross_entropy(logits, std::vector<int64_t>(labels.begin(), labels.end()));
    return CeGraph{per_token, g.mean(per_token)};
}

Expr build_combined_loss(Graph& g, Expr ce_mean, Expr sr_value, double lambda) {
    if (!(lambda >= 0.0)) throw std::invalid_argument("build_combined_loss: lambda must be >= 0");
    return g.add(ce_mean, g.mul(g.scalar(lambda), g.softplus(sr_value)));
}

}  // namespace simreg
