#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "simreglab/checkpoint.hpp"
#include "simreglab/losses.hpp"
#include "simreglab/model.hpp"
#include "test_util.hpp"

using namespace simreg;
using namespace simreg::testutil;

namespace {

// Straight-line scalar-loop reimplementation of the 1-layer architecture,
// kept deliberately dumb and independent of the graph engine.
struct ScalarOracle {
    const ModelConfig& c;
    const ModelParams& p;

    std::vector<std::vector<double>> rmsnorm_rows(const std::vector<std::vector<double>>& x,
                                                  const std::string& gain) const {
        const Tensor& gt = p.at(gain);
        std::vector<std::vector<double>> out(x.size(), std::vector<double>(x[0].size()));
        for (size_t i = 0; i < x.size(); ++i) {
            double ms = 0.0;
            for (double v : x[i]) ms += v * v;
            ms /= static_cast<double>(x[i].size());
            const double denom = std::sqrt(ms + c.rmsnorm_eps);
            for (size_t j = 0; j < x[i].size(); ++j) out[i][j] = x[i][j] / denom * gt(static_cast<int64_t>(j));
        }
        return out;
    }

    std::vector<std::vector<double>> matmul(const std::vector<std::vector<double>>& x,
                                            const std::string& w) const {
        const Tensor& wt = p.at(w);
        std::vector<std::vector<double>> out(x.size(), std::vector<double>(static_cast<size_t>(wt.shape[1]), 0.0));
        for (size_t i = 0; i < x.size(); ++i)
            for (int64_t k = 0; k < wt.shape[0]; ++k)
                for (int64_t j = 0; j < wt.shape[1]; ++j) out[i][static_cast<size_t>(j)] += x[i][static_cast<size_t>(k)] * wt(k, j);
        return out;
    }

    void rope_inplace(std::vector<std::vector<double>>& rows) const {
        const size_t hd = rows[0].size();
        const size_t half = hd / 2;
        for (size_t pos = 0; pos < rows.size(); ++pos)
            for (size_t j = 0; j < half; ++j) {
                const double theta = std::pow(10000.0, -2.0 * static_cast<double>(j) / static_cast<double>(hd));
                const double a = static_cast<double>(pos) * theta;
                const double lo = rows[pos][j], hi = rows[pos][j + half];
                rows[pos][j] = lo * std::cos(a) - hi * std::sin(a);
                rows[pos][j + half] = hi * std::cos(a) + lo * std::sin(a);
            }
    }

    std::vector<std::vector<double>> forward_logits(std::span<const int64_t> tokens) const {
        const size_t n = tokens.size();
        const size_t d = static_cast<size_t>(c.embed_dim);
        const Tensor& emb = p.at("tok_emb");
        std::vector<std::vector<double>> h(n, std::vector<double>(d));
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < d; ++j) h[i][j] = emb(tokens[i], static_cast<int64_t>(j));

        for (int64_t layer = 0; layer < c.n_layers; ++layer) {
            const std::string prefix = "layers." + std::to_string(layer) + ".";
            auto normed = rmsnorm_rows(h, prefix + "attn_norm");
            auto q = matmul(normed, prefix + "wq");
            auto k = matmul(normed, prefix + "wk");
            auto v = matmul(normed, prefix + "wv");
            const size_t hd = static_cast<size_t>(c.head_dim());
            std::vector<std::vector<double>> attn_out(n, std::vector<double>(d, 0.0));
            for (int64_t head = 0; head < c.n_heads; ++head) {
                const size_t off = static_cast<size_t>(head) * hd;
                std::vector<std::vector<double>> qh(n, std::vector<double>(hd)), kh = qh, vh = qh;
                for (size_t i = 0; i < n; ++i)
                    for (size_t j = 0; j < hd; ++j) {
                        qh[i][j] = q[i][off + j];
                        kh[i][j] = k[i][off + j];
                        vh[i][j] = v[i][off + j];
                    }
                rope_inplace(qh);
                rope_inplace(kh);
                for (size_t i = 0; i < n; ++i) {
                    std::vector<double> scores(i + 1);
                    for (size_t j = 0; j <= i; ++j) {
                        double s = 0.0;
                        for (size_t t = 0; t < hd; ++t) s += qh[i][t] * kh[j][t];
                        scores[j] = s / std::sqrt(static_cast<double>(hd));
                    }
                    double m = scores[0];
                    for (double s : scores) m = std::max(m, s);
                    double z = 0.0;
                    for (double& s : scores) {
                        s = std::exp(s - m);
                        z += s;
                    }
                    for (size_t j = 0; j <= i; ++j)
                        for (size_t t = 0; t < hd; ++t) attn_out[i][off + t] += scores[j] / z * vh[j][t];
                }
            }
            auto attn_proj = matmul(attn_out, prefix + "wo");
            for (size_t i = 0; i < n; ++i)
                for (size_t j = 0; j < d; ++j) h[i][j] += attn_proj[i][j];

            auto ffn_in = rmsnorm_rows(h, prefix + "ffn_norm");
            auto gate = matmul(ffn_in, prefix + "w_gate");
            auto up = matmul(ffn_in, prefix + "w_up");
            for (size_t i = 0; i < gate.size(); ++i)
                for (size_t j = 0; j < gate[i].size(); ++j) {
                    const double x = gate[i][j];
                    gate[i][j] = x / (1.0 + std::exp(-x)) * up[i][j];
                }
            auto down = matmul(gate, prefix + "w_down");
            for (size_t i = 0; i < n; ++i)
                for (size_t j = 0; j < d; ++j) h[i][j] += down[i][j];
        }
        return matmul(rmsnorm_rows(h, "final_norm"), "lm_head");
    }
};

}  // namespace

TEST_CASE("rmsnorm: unit rows, hand case, zero row") {
    {
        Graph g;
        Expr x = g.input("x", {1, 4});
        Expr gain = g.constant(Tensor({4}, 1.0));
        Tensor out = evaluate(rmsnorm(g, x, gain, 0.0), {{"x", Tensor::matrix(1, 4, {1, 1, 1, 1})}});
        for (double v : out.data) CHECK(close(v, 1.0, 1e-15));
    }
    {
        Graph g;
        Expr x = g.input("x", {1, 2});
        Expr gain = g.constant(Tensor({2}, 1.0));
        Tensor out = evaluate(rmsnorm(g, x, gain, 0.0), {{"x", Tensor::matrix(1, 2, {2.0, 0.0})}});
        CHECK(close(out.data[0], std::sqrt(2.0), 1e-15));
        CHECK(out.data[1] == 0.0);
    }
    {
        Graph g;
        Expr x = g.input("x", {1, 3});
        Expr gain = g.constant(Tensor({3}, 1.0));
        Tensor out = evaluate(rmsnorm(g, x, gain, 1e-6), {{"x", Tensor({1, 3})}});
        for (double v : out.data) CHECK(v == 0.0);
    }
}

TEST_CASE("rope: identity at position 0, rotation formula, norm preservation") {
    {
        Graph g;
        Expr q = g.input("q", {1, 4});
        Expr k = g.input("k", {1, 4});
        auto [qr, kr] = rope(g, q, k, std::vector<int64_t>{0});
        const Tensor qv = Tensor::matrix(1, 4, {0.3, -1.2, 0.5, 2.0});
        Tensor out = evaluate(qr, {{"q", qv}, {"k", qv}});
        for (size_t i = 0; i < 4; ++i) CHECK(out.data[i] == qv.data[i]);
    }
    {
        // pair (1, 0) at position p rotates to (cos p.theta, sin p.theta)
        Graph g;
        Expr q = g.input("q", {1, 2});
        Expr k = g.input("k", {1, 2});
        auto [qr, kr] = rope(g, q, k, std::vector<int64_t>{5});
        const Tensor qv = Tensor::matrix(1, 2, {1.0, 0.0});
        Tensor out = evaluate(qr, {{"q", qv}, {"k", qv}});
        CHECK(close(out.data[0], std::cos(5.0), 1e-15));
        CHECK(close(out.data[1], std::sin(5.0), 1e-15));
    }
    {
        Rng rng(3);
        Graph g;
        const int64_t n = 4, hd = 8;
        Expr q = g.input("q", {n, hd});
        Expr k = g.input("k", {n, hd});
        std::vector<int64_t> pos{0, 1, 2, 3};
        auto [qr, kr] = rope(g, q, k, pos);
        const Tensor qv = rand_tensor({n, hd}, rng);
        Tensor out = evaluate(qr, {{"q", qv}, {"k", qv}});
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < hd / 2; ++j) {
                const double before = std::hypot(qv(i, j), qv(i, j + hd / 2));
                const double after = std::hypot(out(i, j), out(i, j + hd / 2));
                CHECK(close(after, before, 1e-12, 1e-12));
            }
    }
    {
        Graph g;
        Expr q = g.input("q", {1, 3});
        Expr k = g.input("k", {1, 3});
        CHECK_THROWS_WITH_AS(rope(g, q, k, std::vector<int64_t>{0}), doctest::Contains("even"),
                             std::invalid_argument);
    }
}

TEST_CASE("causal attention: single token, causality, uniform-score prefix mean") {
    ModelConfig c;
    c.vocab_size = 11;
    c.n_layers = 1;
    c.n_heads = 1;
    c.embed_dim = 4;
    c.ffn_hidden = 6;
    c.max_seq_len = 8;
    Rng rng(5);
    {
        // n = 1: softmax over one element, output = v . wo
        Graph g;
        Expr x = g.input("x", {1, 4});
        Expr wv = g.input("wv", {4, 4});
        Expr wo = g.input("wo", {4, 4});
        Expr wq = g.input("wq", {4, 4});
        Expr wk = g.input("wk", {4, 4});
        Expr out = causal_attention(g, x, wq, wk, wv, wo, 1, std::vector<int64_t>{0});
        Bindings b{{"x", rand_tensor({1, 4}, rng)},
                   {"wq", rand_tensor({4, 4}, rng)},
                   {"wk", rand_tensor({4, 4}, rng)},
                   {"wv", rand_tensor({4, 4}, rng)},
                   {"wo", rand_tensor({4, 4}, rng)}};
        const Tensor got = evaluate(out, b);
        Graph g2;
        Expr x2 = g2.input("x", {1, 4});
        Expr wv2 = g2.input("wv", {4, 4});
        Expr wo2 = g2.input("wo", {4, 4});
        const Tensor want = evaluate(g2.matmul(g2.matmul(x2, wv2), wo2), b);
        for (size_t i = 0; i < got.data.size(); ++i) CHECK(close(got.data[i], want.data[i], 1e-14));
    }
    {
        // uniform q.k scores: zero wq makes attention a causal prefix mean
        Graph g;
        Expr x = g.input("x", {3, 4});
        Expr wq = g.constant(Tensor({4, 4}));  // zeros
        Expr wk = g.input("wk", {4, 4});
        Tensor id({4, 4});
        for (int64_t i = 0; i < 4; ++i) id(i, i) = 1.0;
        Expr wv = g.constant(id);
        Expr wo = g.constant(id);
        Expr out = causal_attention(g, x, wq, wk, wv, wo, 1, std::vector<int64_t>{0, 1, 2});
        const Tensor xv = rand_tensor({3, 4}, rng);
        const Tensor got = evaluate(out, {{"x", xv}, {"wk", rand_tensor({4, 4}, rng)}});
        for (int64_t i = 0; i < 3; ++i)
            for (int64_t j = 0; j < 4; ++j) {
                double mean = 0.0;
                for (int64_t t = 0; t <= i; ++t) mean += xv(t, j);
                mean /= static_cast<double>(i + 1);
                CHECK(close(got(i, j), mean, 1e-13, 1e-13));
            }
    }
    {
        // perturbing a later token leaves earlier logits bit-identical
        const ModelParams params = ModelParams::init(c, 42);
        std::vector<int64_t> tokens{1, 2, 3, 4, 5};
        const auto base = model_forward(tokens, params, c, c.n_layers);
        std::vector<int64_t> perturbed = tokens;
        perturbed[4] = 9;
        const auto changed = model_forward(perturbed, params, c, c.n_layers);
        for (int64_t i = 0; i < 4; ++i)
            for (int64_t j = 0; j < c.vocab_size; ++j) CHECK(base.logits(i, j) == changed.logits(i, j));
    }
}

TEST_CASE("swiglu: zero input, scalar identity case, finite-difference gradient") {
    {
        Graph g;
        Expr x = g.input("x", {2, 3});
        Expr wg = g.input("wg", {3, 5});
        Expr wu = g.input("wu", {3, 5});
        Expr wd = g.input("wd", {5, 3});
        Rng rng(7);
        Bindings b{{"x", Tensor({2, 3})},
                   {"wg", rand_tensor({3, 5}, rng)},
                   {"wu", rand_tensor({3, 5}, rng)},
                   {"wd", rand_tensor({5, 3}, rng)}};
        const Tensor out = evaluate(swiglu_ffn(g, x, wg, wu, wd), b);
        for (double v : out.data) CHECK(v == 0.0);
    }
    {
        Graph g;
        Expr x = g.input("x", {1, 1});
        Expr one = g.constant(Tensor({1, 1}, 1.0));
        const Tensor out =
            evaluate(swiglu_ffn(g, x, one, one, one), {{"x", Tensor::matrix(1, 1, {1.0})}});
        CHECK(close(out.data[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-12));
        CHECK(close(out.data[0], 0.7311, 1e-4));
    }
    {
        Rng rng(11);
        auto build = [&](Graph& g) {
            Expr x = g.input("x", {2, 3});
            Expr wg = g.input("wg", {3, 4});
            Expr wu = g.input("wu", {3, 4});
            Expr wd = g.input("wd", {4, 3});
            return g.sum(swiglu_ffn(g, x, wg, wu, wd));
        };
        Bindings b{{"x", rand_tensor({2, 3}, rng)},
                   {"wg", rand_tensor({3, 4}, rng)},
                   {"wu", rand_tensor({3, 4}, rng)},
                   {"wd", rand_tensor({4, 3}, rng)}};
        Graph g;
        Expr root = build(g);
        auto grads = gradient(root, b, {"x", "wg", "wu", "wd"});
        for (const char* which : {"x", "wg", "wu", "wd"}) {
            Tensor fd = finite_difference_gradient(
                [&](const Tensor& point) {
                    Graph g2;
                    Expr root2 = build(g2);
                    Bindings b2 = b;
                    b2[which] = point;
                    return evaluate(root2, b2).data[0];
                },
                b.at(which), 1e-5);
            CHECK(max_rel_err(grads[which], fd, 1e-2) < 1e-4);
        }
    }
}

TEST_CASE("model_forward: capture semantics and the scalar-loop oracle") {
    ModelConfig c;
    c.vocab_size = 6;
    c.n_layers = 1;
    c.n_heads = 1;
    c.embed_dim = 4;
    c.ffn_hidden = 10;
    c.max_seq_len = 16;
    const ModelParams params = ModelParams::init(c, 123);
    const std::vector<int64_t> tokens{0, 3, 5};

    const auto r = model_forward(tokens, params, c, c.n_layers);
    // capture at n_layers is exactly what feeds the LM head
    const Tensor& head = params.at("lm_head");
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < c.vocab_size; ++j) {
            double s = 0.0;
            for (int64_t t = 0; t < c.embed_dim; ++t) s += r.embeddings(i, t) * head(t, j);
            CHECK(close(r.logits(i, j), s, 1e-13, 1e-15));
        }

    const ScalarOracle oracle{c, params};
    const auto want = oracle.forward_logits(tokens);
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < c.vocab_size; ++j)
            CHECK(close(r.logits(i, j), want[static_cast<size_t>(i)][static_cast<size_t>(j)], 1e-10, 1e-12));
}

TEST_CASE("scalar-loop oracle agrees on a multi-head two-layer model") {
    ModelConfig c;
    c.vocab_size = 11;
    c.n_layers = 2;
    c.n_heads = 2;
    c.embed_dim = 8;
    c.ffn_hidden = 22;
    c.max_seq_len = 8;
    const ModelParams params = ModelParams::init(c, 99);
    const std::vector<int64_t> tokens{1, 4, 7, 2, 10, 0};
    const auto r = model_forward(tokens, params, c, c.n_layers);
    const ScalarOracle oracle{c, params};
    const auto want = oracle.forward_logits(tokens);
    for (size_t i = 0; i < tokens.size(); ++i)
        for (int64_t j = 0; j < c.vocab_size; ++j)
            CHECK(close(r.logits(static_cast<int64_t>(i), j), want[i][static_cast<size_t>(j)], 1e-10, 1e-12));
}

TEST_CASE("capture layer changes embeddings only; forward is deterministic") {
    ModelConfig c;
    c.vocab_size = 11;
    c.n_layers = 2;
    c.n_heads = 2;
    c.embed_dim = 8;
    c.ffn_hidden = 22;
    c.max_seq_len = 8;
    const ModelParams params = ModelParams::init(c, 7);
    const std::vector<int64_t> tokens{1, 2, 3, 4};
    const auto base = model_forward(tokens, params, c, 2);
    for (int64_t layer = 0; layer <= c.n_layers; ++layer) {
        const auto r = model_forward(tokens, params, c, layer);
        for (size_t i = 0; i < base.logits.data.size(); ++i) CHECK(r.logits.data[i] == base.logits.data[i]);
    }
    const auto again = model_forward(tokens, params, c, 2);
    for (size_t i = 0; i < base.embeddings.data.size(); ++i)
        CHECK(again.embeddings.data[i] == base.embeddings.data[i]);
    const ModelParams params2 = ModelParams::init(c, 7);
    for (const auto& [name, t] : params.tensors) {
        const Tensor& other = params2.at(name);
        for (size_t i = 0; i < t.data.size(); ++i) CHECK(t.data[i] == other.data[i]);
    }
    CHECK_THROWS_AS(model_forward(tokens, params, c, 3), std::invalid_argument);
    CHECK_THROWS_AS(model_forward(std::vector<int64_t>{99}, params, c, 0), std::invalid_argument);
}

TEST_CASE("end-to-end CE gradient through the full model matches finite differences") {
    ModelConfig c;
    c.vocab_size = 11;
    c.n_layers = 2;
    c.n_heads = 2;
    c.embed_dim = 8;
    c.ffn_hidden = 22;
    c.max_seq_len = 8;
    const ModelParams params = ModelParams::init(c, 2024);
    const std::vector<int64_t> tokens{3, 1, 4, 1, 5, 9};
    const std::vector<int64_t> labels{1, 4, 1, 5, 9, 2};
    auto build = [&](Graph& g) {
        const auto inputs = make_param_inputs(g, c);
        const ModelGraph m = build_model(g, c, inputs, tokens, c.n_layers);
        return build_cross_entropy(g, m.logits, labels).mean;
    };
    Graph g;
    Expr root = build(g);
    const Bindings binds = param_bindings(params);
    g.forward(binds);
    g.backward(root);
    for (const auto& [name, value] : params.tensors) {
        const Tensor ad = g.input_grad(name);
        Tensor fd = finite_difference_gradient(
            [&](const Tensor& point) {
                Graph g2;
                Expr root2 = build(g2);
                Bindings b2 = binds;
                b2[name] = point;
                return evaluate(root2, b2).data[0];
            },
            value, 1e-5);
        INFO("param ", name);
        CHECK(max_rel_err(ad, fd, 1e-2) < 1e-3);
    }
}

TEST_CASE("checkpoint round-trips bitwise") {
    ModelConfig c;
    c.vocab_size = 6;
    c.n_layers = 1;
    c.n_heads = 1;
    c.embed_dim = 4;
    c.ffn_hidden = 8;
    const ModelParams params = ModelParams::init(c, 5);
    Checkpoint ckpt;
    ckpt.header = {{"model.vocab_size", "6"}, {"note", "round trip"}};
    ckpt.tensors = params.tensors;
    const std::string path = "/tmp/simreglab_test_roundtrip.ckpt";
    save_checkpoint(path, ckpt);
    const Checkpoint back = load_checkpoint(path);
    CHECK(back.header == ckpt.header);
    REQUIRE(back.tensors.size() == ckpt.tensors.size());
    for (const auto& [name, t] : ckpt.tensors) {
        const Tensor& other = back.tensors.at(name);
        REQUIRE(other.shape == t.shape);
        for (size_t i = 0; i < t.data.size(); ++i) CHECK(other.data[i] == t.data[i]);
    }
    CHECK_THROWS_AS(load_checkpoint("/tmp/definitely_missing.ckpt"), std::runtime_error);
}
