#include "simreglab/model.hpp"

#include <cmath>
#include <stdexcept>

namespace simreg {

void ModelConfig::validate() const {
    if (vocab_size < 1 || n_layers < 1 || n_heads < 1 || embed_dim < 1 || ffn_hidden < 1 || max_seq_len < 1)
        throw std::invalid_argument("model config: all extents must be >= 1");
    if (embed_dim % n_heads != 0)
        throw std::invalid_argument("model config: embed_dim must be divisible by n_heads");
    if (!(init_std > 0.0)) throw std::invalid_argument("model config: init_std must be > 0");
    if (!(rmsnorm_eps > 0.0)) throw std::invalid_argument("model config: rmsnorm_eps must be > 0");
}

ModelParams ModelParams::init(const ModelConfig& c, uint64_t seed) {
    c.validate();
    Rng rng(seed);
    ModelParams p;
    // draw order is fixed so a seed pins every weight
    p.tensors["tok_emb"] = Tensor::randn({c.vocab_size, c.embed_dim}, rng, c.init_std);
    for (int64_t i = 0; i < c.n_layers; ++i) {
        const std::string prefix = "layers." + std::to_string(i) + ".";
        p.tensors[prefix + "attn_norm"] = Tensor({c.embed_dim}, 1.0);
        p.tensors[prefix + "wq"] = Tensor::randn({c.embed_dim, c.embed_dim}, rng, c.init_std);
        p.tensors[prefix + "wk"] = Tensor::randn({c.embed_dim, c.embed_dim}, rng, c.init_std);
        p.tensors[prefix + "wv"] = Tensor::randn({c.embed_dim, c.embed_dim}, rng, c.init_std);
        p.tensors[prefix + "wo"] = Tensor::randn({c.embed_dim, c.embed_dim}, rng, c.init_std);
        p.tensors[prefix + "ffn_norm"] = Tensor({c.embed_dim}, 1.0);
        p.tensors[prefix + "w_gate"] = Tensor::randn({c.embed_dim, c.ffn_hidden}, rng, c.init_std);
        p.tensors[prefix + "w_up"] = Tensor::randn({c.embed_dim, c.ffn_hidden}, rng, c.init_std);
        p.tensors[prefix + "w_down"] = Tensor::randn({c.ffn_hidden, c.embed_dim}, rng, c.init_std);
    }
    p.tensors["final_norm"] = Tensor({c.embed_dim}, 1.0);
    p.tensors["lm_head"] = Tensor::randn({c.embed_dim, c.vocab_size}, rng, c.init_std);
    return p;
}

Tensor& ModelParams::at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::invalid_argument("no parameter named '" + name + "'");
    return it->second;
}

const Tensor& ModelParams::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::invalid_argument("no parameter named '" + name + "'");
    return it->second;
}

Expr rmsnorm(Graph& g, Expr x, Expr gain, double eps) {
    if (eps < 0.0) throw std::invalid_argument("rmsnorm: eps must be >= 0");
    const auto& s = g.node(x.id).shape;
    if (s.size() != 2 || s[0] < 1 || s[1] < 1) throw std::invalid_argument("rmsnorm expects [n,d]");
    const Expr ms = g.mean(g.mul(x, x), 1, true);                 // [n,1]
    const Expr denom = g.sqrt(g.add(ms, g.scalar(eps)));          // [n,1]
    return g.mul(g.div(x, denom), gain);                          // gain broadcasts over rows
}

std::pair<Expr, Expr> rope(Graph& g, Expr q, Expr k, std::span<const int64_t> positions, double base) {
    const auto& s = g.node(q.id).shape;
    if (s != g.node(k.id).shape || s.size() != 2) throw std::invalid_argument("rope expects matching [n,hd] q/k");
    const int64_t n = s[0], hd = s[1];
    if (hd % 2 != 0) throw std::invalid_argument("rope: head dimension must be even");
    if (static_cast<int64_t>(positions.size()) != n) throw std::invalid_argument("rope: positions/rows mismatch");
    const int64_t half = hd / 2;
    Tensor cost({n, hd}), sint({n, hd});
    for (int64_t i = 0; i < n; ++i) {
        const double p = static_cast<double>(positions[static_cast<size_t>(i)]);
        for (int64_t j = 0; j < half; ++j) {
            const double theta = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(hd));
            const double a = p * theta;
            cost(i, j) = cost(i, j + half) = std::cos(a);
            sint(i, j) = sint(i, j + half) = std::sin(a);
        }
    }
    const Expr cos_c = g.constant(std::move(cost));
    const Expr sin_c = g.constant(std::move(sint));
    const Expr neg1 = g.scalar(-1.0);
    auto rotate = [&](Expr v) {
        // rotate_half: [-v_hi, v_lo]
        const Expr lo = g.slice(v, 1, 0, half);
        const Expr hi = g.slice(v, 1, half, half);
        const Expr rot = g.concat({g.mul(hi, neg1), lo}, 1);
        return g.add(g.mul(v, cos_c), g.mul(rot, sin_c));
    };
    return {rotate(q), rotate(k)};
}

Expr causal_attention(Graph& g, Expr x, Expr wq, Expr wk, Expr wv, Expr wo, int64_t n_heads,
                      std::span<const int64_t> positions, double rope_base) {
    const auto& s = g.node(x.id).shape;
    if (s.size() != 2) throw std::invalid_argument("causal_attention expects [n,d]");
    const int64_t n = s[0], d = s[1];
    if (d % n_heads != 0) throw std::invalid_argument("causal_attention: d not divisible by heads");
    const int64_t hd = d / n_heads;
    const Expr q = g.matmul(x, wq);
    const Expr k = g.matmul(x, wk);
    const Expr v = g.matmul(x, wv);
    Tensor mask({n, n});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = i + 1; j < n; ++j) mask(i, j) = -1e30;  // finite so the NaN guard stays armed
    const Expr mask_c = g.constant(std::move(mask));
    const Expr inv_scale = g.scalar(std::sqrt(static_cast<double>(hd)));
    std::vector<Expr> heads;
    for (int64_t h = 0; h < n_heads; ++h) {
        const Expr qh = g.slice(q, 1, h * hd, hd);
        const Expr kh = g.slice(k, 1, h * hd, hd);
        const Expr vh = g.slice(v, 1, h * hd, hd);
        const auto [qr, kr] = rope(g, qh, kh, positions, rope_base);
        const Expr scores = g.add(g.div(g.matmul(qr, g.transpose(kr)), inv_scale), mask_c);
        const Expr attn = g.softmax(scores, 1);
        heads.push_back(g.matmul(attn, vh));
    }
    return g.matmul(n_heads == 1 ? heads[0] : g.concat(heads, 1), wo);
}

Expr swiglu_ffn(Graph& g, Expr x, Expr w_gate, Expr w_up, Expr w_down) {
    const Expr gate = g.matmul(x, w_gate);
    const Expr silu = g.mul(gate, g.sigmoid(gate));
    return g.matmul(g.mul(silu, g.matmul(x, w_up)), w_down);
}

std::map<std::string, Expr> make_param_inputs(Graph& g, const ModelConfig& c) {
    c.validate();
    std::map<std::string, Expr> params;
    params["tok_emb"] = g.input("tok_emb", {c.vocab_size, c.embed_dim});
    for (int64_t i = 0; i < c.n_layers; ++i) {
        const std::string prefix = "layers." + std::to_string(i) + ".";
        params[prefix + "attn_norm"] = g.input(prefix + "attn_norm", {c.embed_dim});
        for (const char* w : {"wq", "wk", "wv", "wo"})
            params[prefix + w] = g.input(prefix + w, {c.embed_dim, c.embed_dim});
        params[prefix + "ffn_norm"] = g.input(prefix + "ffn_norm", {c.embed_dim});
        params[prefix + "w_gate"] = g.input(prefix + "w_gate", {c.embed_dim, c.ffn_hidden});
        params[prefix + "w_up"] = g.input(prefix + "w_up", {c.embed_dim, c.ffn_hidden});
        params[prefix + "w_down"] = g.input(prefix + "w_down", {c.ffn_hidden, c.embed_dim});
    }
    params["final_norm"] = g.input("final_norm", {c.embed_dim});
    params["lm_head"] = g.input("lm_head", {c.embed_dim, c.vocab_size});
    return params;
}

ModelGraph build_model(Graph& g, const ModelConfig& c, const std::map<std::string, Expr>& params,
                       std::span<const int64_t> tokens, int64_t capture_layer) {
    c.validate();
    const int64_t n = static_cast<int64_t>(tokens.size());
    if (n < 1) throw std::invalid_argument("build_model: empty token sequence");
    if (n > c.max_seq_len) throw std::invalid_argument("build_model: sequence longer than max_seq_len");
    if (capture_layer < 0 || capture_layer > c.n_layers)
        throw std::invalid_argument("build_model: capture_layer out of [0, n_layers]");
    std::vector<int64_t> ids(tokens.begin(), tokens.end());
    for (int64_t t : ids)
        if (t < 0 || t >= c.vocab_size)
            throw std::invalid_argument("build_model: token id " + std::to_string(t) + " out of range");
    std::vector<int64_t> positions(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) positions[static_cast<size_t>(i)] = i;

    auto p = [&](const std::string& name) -> Expr {
        auto it = params.find(name);
        if (it == params.end()) throw std::invalid_argument("build_model: missing parameter node '" + name + "'");
        return it->second;
    };

    Expr hidden = g.gather(p("tok_emb"), 0, ids);
    Expr capture = hidden;  // capture_layer == 0
    for (int64_t i = 0; i < c.n_layers; ++i) {
        const std::string prefix = "layers." + std::to_string(i) + ".";
        const Expr attn_in = rmsnorm(g, hidden, p(prefix + "attn_norm"), c.rmsnorm_eps);
        hidden = g.add(hidden, causal_attention(g, attn_in, p(prefix + "wq"), p(prefix + "wk"),
                                                p(prefix + "wv"), p(prefix + "wo"), c.n_heads, positions));
        const Expr ffn_in = rmsnorm(g, hidden, p(prefix + "ffn_norm"), c.rmsnorm_eps);
        hidden = g.add(hidden, swiglu_ffn(g, ffn_in, p(prefix + "w_gate"), p(prefix + "w_up"),
                                          p(prefix + "w_down")));
        if (capture_layer == i + 1 && capture_layer < c.n_layers) capture = hidden;
    }
    const Expr final_hidden = rmsnorm(g, hidden, p("final_norm"), c.rmsnorm_eps);
    if (capture_layer == c.n_layers) capture = final_hidden;
    const Expr logits = g.matmul(final_hidden, p("lm_head"));
    return ModelGraph{capture, final_hidden, logits};
}

Bindings param_bindings(const ModelParams& params) {
    Bindings b;
    for (const auto& [name, tensor] : params.tensors) b[name] = tensor;
    return b;
}

ForwardResult model_forward(std::span<const int64_t> tokens, const ModelParams& params,
                            const ModelConfig& config, int64_t capture_layer) {
    Graph g;
    const auto inputs = make_param_inputs(g, config);
    const ModelGraph m = build_model(g, config, inputs, tokens, capture_layer);
    g.forward(param_bindings(params));
    return ForwardResult{g.value(m.capture), g.value(m.logits)};
}

ModelConfig config_from_header(const std::vector<std::pair<std::string, std::string>>& header) {
    ModelConfig c;
    bool saw_any = false;
    for (const auto& [key, value] : header) {
        if (key.rfind("model.", 0) != 0) continue;
        saw_any = true;
        const std::string field = key.substr(6);
        if (field == "vocab_size") c.vocab_size = std::stoll(value);
        else if (field == "n_layers") c.n_layers = std::stoll(value);
        else if (field == "n_heads") c.n_heads = std::stoll(value);
        else if (field == "embed_dim") c.embed_dim = std::stoll(value);
        else if (field == "ffn_hidden") c.ffn_hidden = std::stoll(value);
        else if (field == "max_seq_len") c.max_seq_len = std::stoll(value);
        else if (field == "rmsnorm_eps") c.rmsnorm_eps = std::stod(value);
        else if (field == "init_std") c.init_std = std::stod(value);
    }
    if (!saw_any) throw std::runtime_error("checkpoint header has no model.* keys");
    c.validate();
    return c;
}

ModelParams params_from_tensors(const std::map<std::string, Tensor>& tensors) {
    ModelParams p;
    for (const auto& [name, t] : tensors) {
        if (name.rfind("opt_m.", 0) == 0 || name.rfind("opt_v.", 0) == 0) continue;
        p.tensors[name] = t;
    }
    if (p.tensors.empty()) throw std::runtime_error("checkpoint holds no model tensors");
    return p;
}

}  // namespace simreg
