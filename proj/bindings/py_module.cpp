// Python bindings for the main operations: losses, theory checks, data
// utilities, schedules, and a config-driven training entry point.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "simreglab/config.hpp"
#include "simreglab/data.hpp"
#include "simreglab/diagnostics.hpp"
#include "simreglab/losses.hpp"
#include "simreglab/theory.hpp"
#include "simreglab/trainer.hpp"

namespace py = pybind11;
using namespace simreg;

namespace {

Tensor to_matrix(const std::vector<std::vector<double>>& rows, const char* what) {
    if (rows.empty()) throw std::invalid_argument(std::string(what) + ": empty matrix");
    const int64_t n = static_cast<int64_t>(rows.size());
    const int64_t d = static_cast<int64_t>(rows[0].size());
    Tensor t({n, d});
    for (int64_t i = 0; i < n; ++i) {
        if (static_cast<int64_t>(rows[static_cast<size_t>(i)].size()) != d)
            throw std::invalid_argument(std::string(what) + ": ragged matrix");
        for (int64_t j = 0; j < d; ++j) t(i, j) = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
    }
    return t;
}

TrainConfig config_from_text(const std::string& text, const std::vector<std::string>& overrides) {
    ConfigMap cfg = default_config();
    std::istringstream stream(text);
    std::string line;
    while (std::getline(stream, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r\n");
            if (b == std::string::npos) return std::string();
            const auto e = s.find_last_not_of(" \t\r\n");
            return s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) continue;
        cfg.set(key, trim(line.substr(eq + 1)));
    }
    for (const auto& o : overrides) apply_override(cfg, o);
    return to_train_config(cfg);
}

}  // namespace

PYBIND11_MODULE(_simreglab, m) {
    m.doc() = "SimReg pretraining laboratory: losses, margin theory, data tools";

    m.def("softplus", &softplus, py::arg("x"));

    m.def(
        "cross_entropy",
        [](const std::vector<std::vector<double>>& logits, const std::vector<int64_t>& labels) {
            const auto r = cross_entropy(to_matrix(logits, "logits"), labels);
            return py::make_tuple(r.per_token, r.mean);
        },
        py::arg("logits"), py::arg("labels"), "per-token and mean stable cross-entropy");

    m.def(
        "build_groups",
        [](const std::vector<int64_t>& labels) {
            const auto g = build_groups(labels);
            return py::make_tuple(g.pos, g.neg);
        },
        py::arg("labels"), "positive/negative index sets per token");

    m.def(
        "simreg_sequence",
        [](const std::vector<std::vector<double>>& emb, const std::vector<int64_t>& labels, double tau) {
            const auto r = simreg_sequence(to_matrix(emb, "embeddings"), labels, tau);
            return py::make_tuple(r.per_token, r.mean);
        },
        py::arg("embeddings"), py::arg("labels"), py::arg("tau"));

    m.def(
        "simreg_chunked",
        [](const std::vector<std::vector<double>>& emb, const std::vector<int64_t>& labels, double tau,
           int64_t chunks) { return simreg_chunked(to_matrix(emb, "embeddings"), labels, tau, chunks); },
        py::arg("embeddings"), py::arg("labels"), py::arg("tau"), py::arg("chunks") = 1);

    m.def("combined_loss", &combined_loss, py::arg("ce_mean"), py::arg("sr_value"), py::arg("lambda_"));

    m.def(
        "margin", [](const std::vector<double>& logits, int64_t label) { return margin(logits, label); },
        py::arg("logits"), py::arg("label"));

    m.def(
        "ce_margin_bound_check",
        [](const std::vector<double>& logits, int64_t label) {
            const auto r = ce_margin_bound_check(logits, label);
            return py::make_tuple(r.loss, r.bound, r.holds);
        },
        py::arg("logits"), py::arg("label"));

    m.def(
        "weighted_centers",
        [](const std::vector<std::vector<double>>& emb, const std::vector<int64_t>& labels, int64_t k) {
            const auto wc = weighted_centers(to_matrix(emb, "embeddings"), labels, k);
            return py::make_tuple(wc.pos_center, wc.neg_center, wc.has_neg);
        },
        py::arg("embeddings"), py::arg("labels"), py::arg("k"));

    m.def("cosine_density", &cosine_density, py::arg("z"), py::arg("d"));
    m.def(
        "cosine_moments_mc",
        [](int64_t d, int64_t n_samples, uint64_t seed) {
            const auto e = cosine_moments_mc(d, n_samples, seed);
            return py::make_tuple(e.mean, e.second_moment);
        },
        py::arg("d"), py::arg("n_samples"), py::arg("seed"));
    m.def(
        "kernel_check",
        [](const std::vector<double>& u, const std::vector<double>& v, int64_t order) {
            return kernel_check(u, v, order);
        },
        py::arg("u"), py::arg("v"), py::arg("order"));
    m.def("average_angle_from_similarity", &average_angle_from_similarity, py::arg("mean_cosine"));

    m.def("lambda_for_dim", &lambda_for_dim, py::arg("d"));
    m.def(
        "lr_schedule",
        [](int64_t step, double peak_lr, int64_t warmup_steps, int64_t total_steps, double final_lr_fraction) {
            OptimConfig o;
            o.peak_lr = peak_lr;
            o.warmup_steps = warmup_steps;
            o.total_steps = total_steps;
            o.final_lr_fraction = final_lr_fraction;
            return lr_schedule(step, o);
        },
        py::arg("step"), py::arg("peak_lr") = 3e-4, py::arg("warmup_steps") = 200,
        py::arg("total_steps") = 2000, py::arg("final_lr_fraction") = 0.1);

    m.def(
        "tokenize_bytes",
        [](const py::bytes& data) {
            const std::string s = data;
            return tokenize({s.data(), s.size()}, Vocabulary::bytes());
        },
        py::arg("data"));
    m.def("zipf_corpus", &zipf_corpus, py::arg("vocab"), py::arg("exponent"), py::arg("length"),
          py::arg("seed"));
    m.def(
        "head_share",
        [](const std::vector<int64_t>& corpus, double head_fraction) {
            return token_frequency_report(corpus, head_fraction).head_share;
        },
        py::arg("corpus"), py::arg("head_fraction"));

    m.def(
        "train_from_config",
        [](const std::string& config_text, const std::vector<std::string>& overrides,
           const std::string& out_dir) {
            const TrainResult r = train_run(config_from_text(config_text, overrides), out_dir);
            py::dict d;
            d["final_ce"] = r.final_ce;
            d["final_sr"] = r.final_sr;
            d["final_mean_cosine"] = r.final_mean_cosine;
            d["val_ppl"] = r.val_ppl;
            d["records"] = r.records.size();
            d["step0_ce"] = r.records.empty() ? 0.0 : r.records.front().ce_loss;
            return d;
        },
        py::arg("config_text") = "", py::arg("overrides") = std::vector<std::string>{},
        py::arg("out_dir") = "", "run a seeded training job; returns the final metrics");

    m.def(
        "gradcheck",
        [](uint64_t seed) {
            const auto r = run_gradient_check(seed);
            return py::make_tuple(r.model_max_rel_err, r.loss_max_rel_err, r.model_pass && r.loss_pass);
        },
        py::arg("seed") = 7);
}
