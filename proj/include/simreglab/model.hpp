#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "simreglab/graph.hpp"
#include "simreglab/tensor.hpp"

namespace simreg {

struct ModelConfig {
    int64_t vocab_size = 256;
    int64_t n_layers = 2;
    int64_t n_heads = 4;
    int64_t embed_dim = 64;
    int64_t ffn_hidden = 172;  // ~ 8/3 * d
    int64_t max_seq_len = 128;
    double rmsnorm_eps = 1e-6;
    double init_std = 0.01;

    int64_t head_dim() const { return embed_dim / n_heads; }
    void validate() const;
};

// Named parameter tensors; untied embedding and LM head, no biases.
struct ModelParams {
    std::map<std::string, Tensor> tensors;

    static ModelParams init(const ModelConfig& config, uint64_t seed);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
};

// --- graph builders -------------------------------------------------

Expr rmsnorm(Graph& g, Expr x, Expr gain, double eps);

// Paired-coordinate rotation, pairs (i, i+hd/2), base-10000 frequencies.
std::pair<Expr, Expr> rope(Graph& g, Expr q, Expr k, std::span<const int64_t> positions,
                           double base = 10000.0);

Expr causal_attention(Graph& g, Expr x, Expr wq, Expr wk, Expr wv, Expr wo, int64_t n_heads,
                      std::span<const int64_t> positions, double rope_base = 10000.0);

Expr swiglu_ffn(Graph& g, Expr x, Expr w_gate, Expr w_up, Expr w_down);

std::map<std::string, Expr> make_param_inputs(Graph& g, const ModelConfig& config);

struct ModelGraph {
    Expr capture;       // embeddings at the requested capture layer
    Expr final_hidden;  // pre-head final-RMSNorm output (Fig-1 diagnostics)
    Expr logits;
};

// capture_layer: 0 = token embeddings, j in [1, n_layers) = residual stream
// after block j, n_layers = final-RMSNorm output fed to the LM head.
ModelGraph build_model(Graph& g, const ModelConfig& config, const std::map<std::string, Expr>& params,
                       std::span<const int64_t> tokens, int64_t capture_layer);

struct ForwardResult {
    Tensor embeddings;
    Tensor logits;
};

ForwardResult model_forward(std::span<const int64_t> tokens, const ModelParams& params,
                            const ModelConfig& config, int64_t capture_layer);

Bindings param_bindings(const ModelParams& params);

// checkpoint helpers: the header carries model.* keys, optimizer state
// tensors are prefixed opt_m. / opt_v.
ModelConfig config_from_header(const std::vector<std::pair<std::string, std::string>>& header);
ModelParams params_from_tensors(const std::map<std::string, Tensor>& tensors);

}  // namespace simreg
