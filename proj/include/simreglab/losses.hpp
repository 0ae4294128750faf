#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "simreglab/graph.hpp"
#include "simreglab/tensor.hpp"

namespace simreg {

enum class Similarity : uint8_t { cosine, inner };

// All regularizer knobs in one place.
struct SimRegConfig {
    double tau = 0.01;
    double lambda = 2.5;
    int64_t chunks = 1;
    int64_t capture_layer = -1;  // -1 = final pre-head embedding
    Similarity similarity = Similarity::cosine;

    void validate() const;
};

// Per token k: positions with the same next-token label (always including k
// itself) and positions with a different label.
struct GroupIndex {
    std::vector<std::vector<int64_t>> pos;
    std::vector<std::vector<int64_t>> neg;
    size_t size() const { return pos.size(); }
};

struct LossBreakdown {
    std::vector<double> ce, sr, softplus_sr, combined;
    double ce_mean = 0.0, sr_mean = 0.0, softplus_sr_mean = 0.0, combined_mean = 0.0;
};

struct PerTokenLoss {
    std::vector<double> per_token;
    double mean = 0.0;
};

double softplus(double x);

// Eq-style stable cross-entropy: per-token lse(z_i) - z_{i,y_i}.
PerTokenLoss cross_entropy(const Tensor& logits, std::span<const int64_t> labels);

GroupIndex build_groups(std::span<const int64_t> labels);

// contiguous chunk windows: b chunks of n/b tokens (first n%b get one extra)
std::vector<std::pair<int64_t, int64_t>> chunk_spans(int64_t n, int64_t b);

double simreg_token(const Tensor& embeddings, int64_t k, const GroupIndex& groups, double tau,
                    Similarity sim = Similarity::cosine);

PerTokenLoss simreg_sequence(const Tensor& embeddings, std::span<const int64_t> labels, double tau,
                             Similarity sim = Similarity::cosine);

double simreg_chunked(const Tensor& embeddings, std::span<const int64_t> labels, double tau, int64_t b,
                      Similarity sim = Similarity::cosine);

double combined_loss(double ce_mean, double sr_value, double lambda);

LossBreakdown loss_breakdown(const Tensor& logits, const Tensor& embeddings,
                             std::span<const int64_t> labels, double tau, double lambda,
                             Similarity sim = Similarity::cosine);

// Graph builders used by the trainer; values agree bitwise with the
// immediate functions above (shared kernels, same accumulation order).
Expr build_simreg(Graph& g, Expr embeddings, std::span<const int64_t> labels, double tau, int64_t b,
                  Similarity sim = Similarity::cosine);

struct CeGraph {
    Expr per_token;
    Expr mean;
};
CeGraph build_cross_entropy(Graph& g, Expr logits, std::span<const int64_t> labels);

Expr build_combined_loss(Graph& g, Expr ce_mean, Expr sr_value, double lambda);

}  // namespace simreg
