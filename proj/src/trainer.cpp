#include "simreglab/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "json.hpp"
#include "simreglab/checkpoint.hpp"

namespace simreg {

namespace {

std::vector<int64_t> valid_positions(const std::vector<bool>& mask) {
    std::vector<int64_t> idx;
    for (size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) idx.push_back(static_cast<int64_t>(i));
    return idx;
}

std::vector<int64_t> load_corpus(const TrainConfig& cfg) {
    if (cfg.data.corpus == "zipf")
        return zipf_corpus(cfg.model.vocab_size, cfg.data.zipf_exponent, cfg.data.zipf_length,
                           cfg.seed + 0x5eedULL);
    std::ifstream f(cfg.data.corpus, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open corpus file '" + cfg.data.corpus + "'");
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const Vocabulary vocab = cfg.data.tokenizer == "word" ? Vocabulary::from_file(cfg.data.vocab_file)
                                                          : Vocabulary::bytes();
    auto ids = tokenize({bytes.data(), bytes.size()}, vocab);
    for (int64_t id : ids)
        if (id >= cfg.model.vocab_size)
            throw std::runtime_error("corpus token id " + std::to_string(id) +
                                     " exceeds model.vocab_size; raise model.vocab_size to at least " +
                                     std::to_string(vocab.size()));
    return ids;
}

bool decay_allowed(const std::string& name) {
    // norm gains and the embedding table stay decay-free
    return name.find("norm") == std::string::npos && name != "tok_emb";
}

}  // namespace

void OptimConfig::validate() const {
    if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0))
        throw std::invalid_argument("optim: betas must lie in (0,1)");
    if (warmup_steps > total_steps) throw std::invalid_argument("optim: warmup_steps exceeds total_steps");
    if (!(peak_lr > 0.0)) throw std::invalid_argument("optim: peak_lr must be > 0");
    if (!(clip_norm > 0.0)) throw std::invalid_argument("optim: clip_norm must be > 0");
    if (warmup_steps < 0 || total_steps < 1) throw std::invalid_argument("optim: bad step counts");
}

void TrainConfig::validate() const {
    model.validate();
    simreg.validate();
    optim.validate();
    if (data.batch_size < 1 || data.seq_len < 1) throw std::invalid_argument("data: batch/seq_len must be >= 1");
    if (data.seq_len > model.max_seq_len) throw std::invalid_argument("data: seq_len exceeds model.max_seq_len");
    if (capture_layer_resolved() > model.n_layers)
        throw std::invalid_argument("simreg: capture_layer out of [0, n_layers]");
    if (data.val_fraction < 0.0 || data.val_fraction >= 1.0)
        throw std::invalid_argument("data: val_fraction must be in [0,1)");
    if (log_interval < 1) throw std::invalid_argument("log_interval must be >= 1");
}

std::string metric_record_jsonl(const MetricRecord& r) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["lr"] = r.lr;
    j["ce_loss"] = r.ce_loss;
    j["sr_loss"] = r.sr_loss;
    j["softplus_sr"] = r.softplus_sr;
    j["combined_loss"] = r.combined_loss;
    j["grad_norm"] = r.grad_norm;
    j["mean_pairwise_cosine"] = r.mean_pairwise_cosine;
    j["wall_ms_per_step"] = r.wall_ms_per_step;
    j["peak_mem_bytes"] = r.peak_mem_bytes;
    return j.dump();
}

void adamw_step(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads,
                AdamState& state, int64_t step, double lr, double beta1, double beta2,
                double weight_decay, double eps, const std::function<bool(const std::string&)>& decay_filter) {
    if (step < 1) throw std::invalid_argument("adamw_step: step must be >= 1");
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (auto& [name, p] : params) {
        const auto git = grads.find(name);
        if (git == grads.end()) throw std::invalid_argument("adamw_step: no gradient for '" + name + "'");
        const Tensor& g = git->second;
        if (!g.same_shape(p)) throw std::invalid_argument("adamw_step: grad shape mismatch for '" + name + "'");
        Tensor& m = state.m.try_emplace(name, Tensor(p.shape)).first->second;
        Tensor& v = state.v.try_emplace(name, Tensor(p.shape)).first->second;
        if (!m.same_shape(p) || !v.same_shape(p))
            throw std::invalid_argument("adamw_step: state shape mismatch for '" + name + "'");
        const double wd = (!decay_filter || decay_filter(name)) ? weight_decay : 0.0;
        for (size_t i = 0; i < p.data.size(); ++i) {
            m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * g.data[i];
            v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * g.data[i] * g.data[i];
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            p.data[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p.data[i]);
        }
    }
}

double lr_schedule(int64_t step, const OptimConfig& optim) {
    if (step < 0 || step > optim.total_steps)
        throw std::invalid_argument("lr_schedule: step " + std::to_string(step) + " outside [0," +
                                    std::to_string(optim.total_steps) + "]");
    if (step <= optim.warmup_steps) {
        if (optim.warmup_steps == 0) return optim.peak_lr;
        return optim.peak_lr * static_cast<double>(step) / static_cast<double>(optim.warmup_steps);
    }
    const double final_lr = optim.peak_lr * optim.final_lr_fraction;
    const double progress = static_cast<double>(step - optim.warmup_steps) /
                            static_cast<double>(optim.total_steps - optim.warmup_steps);
    return final_lr + (optim.peak_lr - final_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double clip_gradients(std::map<std::string, Tensor>& grads, double max_norm) {
    if (!(max_norm > 0.0)) throw std::invalid_argument("clip_gradients: max_norm must be > 0");
    double sq = 0.0;
    for (const auto& [name, g] : grads) {
        for (double v : g.data) {
            if (!std::isfinite(v))
                throw std::runtime_error("non-finite gradient in parameter '" + name + "'");
            sq += v * v;
        }
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (auto& [name, g] : grads)
            for (double& v : g.data) v *= scale;
    }
    return norm;
}

double lambda_for_dim(int64_t d) {
    if (d < 1) throw std::invalid_argument("lambda_for_dim: d must be >= 1");
    return 10.0 * std::sqrt(static_cast<double>(d) / 1024.0);
}

double mean_offdiagonal_cosine(const Tensor& embeddings) {
    const Tensor c = cosine_matrix_values(embeddings);
    const int64_t n = c.shape[0];
    if (n < 2) return 0.0;
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j)
            if (i != j) acc += c(i, j);
    return acc / static_cast<double>(n * (n - 1));
}

int64_t peak_rss_bytes() {
    // some sandboxed kernels omit VmHWM; track the high-water mark of the
    // sampled VmRSS ourselves in that case
    static int64_t observed_peak = 0;
    std::ifstream f("/proc/self/status");
    std::string line;
    int64_t rss = 0;
    while (std::getline(f, line)) {
        int64_t kb = 0;
        if (line.rfind("VmHWM:", 0) == 0 && std::sscanf(line.c_str() + 6, "%ld", &kb) == 1)
            return std::max<int64_t>(observed_peak, kb * 1024);
        if (line.rfind("VmRSS:", 0) == 0 && std::sscanf(line.c_str() + 6, "%ld", &kb) == 1) rss = kb * 1024;
    }
    observed_peak = std::max(observed_peak, rss);
    return observed_peak;
}

StepNodes build_step_graph(Graph& g, const TrainConfig& cfg, const TokenBatch& batch) {
    cfg.validate();
    if (batch.sequences.empty()) throw std::invalid_argument("build_step_graph: empty batch");
    g.reserve(batch.sequences.size() * (static_cast<size_t>(cfg.model.n_layers) * 60 +
                                        6 * static_cast<size_t>(cfg.data.seq_len) + 32));
    StepNodes nodes;
    nodes.params = make_param_inputs(g, cfg.model);
    const int64_t capture_layer = cfg.capture_layer_resolved();

    std::vector<Expr> ce_means, sr_values;
    for (size_t s = 0; s < batch.sequences.size(); ++s) {
        const auto& tokens = batch.sequences[s];
        const auto& labels = batch.labels[s];
        const ModelGraph m = build_model(g, cfg.model, nodes.params, tokens, capture_layer);
        nodes.final_hidden.push_back(m.final_hidden);
        nodes.capture.push_back(m.capture);

        const auto valid = valid_positions(batch.label_valid[s]);
        if (valid.empty()) throw std::invalid_argument("build_step_graph: sequence with no valid labels");
        const bool all_valid = valid.size() == tokens.size();

        std::vector<int64_t> used_labels;
        used_labels.reserve(valid.size());
        for (int64_t i : valid) used_labels.push_back(labels[static_cast<size_t>(i)]);

        const Expr logits = all_valid ? m.logits : g.gather(m.logits, 0, valid);
        const Expr emb = all_valid ? m.capture : g.gather(m.capture, 0, valid);
        const CeGraph ce = build_cross_entropy(g, logits, used_labels);
        ce_means.push_back(ce.mean);
        sr_values.push_back(
            build_simreg(g, emb, used_labels, cfg.simreg.tau, cfg.simreg.chunks, cfg.simreg.similarity));
    }

    auto batch_mean = [&](const std::vector<Expr>& parts) {
        Expr acc = parts[0];
        for (size_t i = 1; i < parts.size(); ++i) acc = g.add(acc, parts[i]);
        return parts.size() == 1 ? acc : g.div(acc, g.scalar(static_cast<double>(parts.size())));
    };
    nodes.ce_mean = batch_mean(ce_means);
    nodes.sr_value = batch_mean(sr_values);
    nodes.combined = build_combined_loss(g, nodes.ce_mean, nodes.sr_value, cfg.simreg.lambda);
    return nodes;
}

namespace {

struct ValSplit {
    std::vector<int64_t> train;
    std::vector<int64_t> val;
};

ValSplit split_corpus(std::vector<int64_t> corpus, double val_fraction) {
    ValSplit s;
    const auto n = static_cast<int64_t>(corpus.size());
    const int64_t n_val = static_cast<int64_t>(std::floor(val_fraction * static_cast<double>(n)));
    s.val.assign(corpus.begin() + (n - n_val), corpus.end());
    corpus.resize(static_cast<size_t>(n - n_val));
    s.train = std::move(corpus);
    return s;
}

double validation_perplexity(const TrainConfig& cfg, const ModelParams& params,
                             const std::vector<int64_t>& val) {
    const int64_t window = cfg.data.seq_len + 1;
    const int64_t windows = static_cast<int64_t>(val.size()) / window;
    if (windows < 1) return std::numeric_limits<double>::quiet_NaN();
    double ce_acc = 0.0;
    int64_t tokens = 0;
    const Bindings binds = param_bindings(params);
    for (int64_t w = 0; w < windows; ++w) {
        Graph g;
        const auto inputs = make_param_inputs(g, cfg.model);
        std::span<const int64_t> win(val.data() + w * window, static_cast<size_t>(window));
        const ModelGraph m =
            build_model(g, cfg.model, inputs, win.subspan(0, static_cast<size_t>(cfg.data.seq_len)),
                        cfg.model.n_layers);
        std::vector<int64_t> labels(win.begin() + 1, win.end());
        const CeGraph ce = build_cross_entropy(g, m.logits, labels);
        ce_acc += evaluate(ce.mean, binds).data[0] * static_cast<double>(cfg.data.seq_len);
        tokens += cfg.data.seq_len;
    }
    return std::exp(ce_acc / static_cast<double>(tokens));
}

Checkpoint make_checkpoint(const TrainConfig& cfg, const ModelParams& params, const AdamState& state,
                           int64_t step) {
    Checkpoint ckpt;
    ckpt.header = {
        {"format", "simreglab"},
        {"step", std::to_string(step)},
        {"seed", std::to_string(cfg.seed)},
        {"model.vocab_size", std::to_string(cfg.model.vocab_size)},
        {"model.n_layers", std::to_string(cfg.model.n_layers)},
        {"model.n_heads", std::to_string(cfg.model.n_heads)},
        {"model.embed_dim", std::to_string(cfg.model.embed_dim)},
        {"model.ffn_hidden", std::to_string(cfg.model.ffn_hidden)},
        {"model.max_seq_len", std::to_string(cfg.model.max_seq_len)},
        {"model.rmsnorm_eps", std::to_string(cfg.model.rmsnorm_eps)},
        {"model.init_std", std::to_string(cfg.model.init_std)},
    };
    for (const auto& [name, t] : params.tensors) ckpt.tensors[name] = t;
    for (const auto& [name, t] : state.m) ckpt.tensors["opt_m." + name] = t;
    for (const auto& [name, t] : state.v) ckpt.tensors["opt_v." + name] = t;
    return ckpt;
}

}  // namespace

TrainResult train_run(const TrainConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    const auto corpus = load_corpus(cfg);
    const ValSplit split = split_corpus(corpus, cfg.data.val_fraction);

    ModelParams params = ModelParams::init(cfg.model, cfg.seed);
    AdamState state;
    BatchIterator it({split.train.data(), split.train.size()}, cfg.data.batch_size, cfg.data.seq_len,
                     cfg.seed + 0xba7c4ULL);

    std::ofstream metrics_file;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        metrics_file.open(out_dir + "/metrics.jsonl");
        if (!metrics_file) throw std::runtime_error("cannot write metrics under '" + out_dir + "'");
    }

    TrainResult result;
    MetricRecord last{};
    int64_t epoch = 0;

    auto emit = [&](const MetricRecord& r) {
        result.records.push_back(r);
        last = r;
        if (metrics_file) metrics_file << metric_record_jsonl(r) << "\n";
    };

    auto evaluate_metrics = [&](Graph& g, const StepNodes& nodes, int64_t logical_step, double lr,
                                double grad_norm, double wall_ms) {
        MetricRecord r;
        r.step = logical_step;
        r.lr = lr;
        r.ce_loss = g.value(nodes.ce_mean).data[0];
        r.sr_loss = g.value(nodes.sr_value).data[0];
        r.softplus_sr = softplus(r.sr_loss);
        r.combined_loss = g.value(nodes.combined).data[0];
        r.grad_norm = grad_norm;
        double cos_acc = 0.0;
        for (const Expr& fh : nodes.final_hidden) cos_acc += mean_offdiagonal_cosine(g.value(fh));
        r.mean_pairwise_cosine = cos_acc / static_cast<double>(nodes.final_hidden.size());
        r.wall_ms_per_step = wall_ms;
        r.peak_mem_bytes = peak_rss_bytes();
        return r;
    };

    for (int64_t step = 1; step <= cfg.optim.total_steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        auto maybe_batch = it.next();
        if (!maybe_batch) {
            it.start_epoch(++epoch);
            maybe_batch = it.next();
            if (!maybe_batch) throw std::runtime_error("corpus yields no batches");
        }
        Graph g;
        StepNodes nodes;
        double grad_norm = 0.0;
        std::map<std::string, Tensor> grads;
        try {
            nodes = build_step_graph(g, cfg, *maybe_batch);
            g.forward(param_bindings(params));
            g.backward(nodes.combined);
            for (const auto& [name, t] : params.tensors) grads[name] = g.input_grad(name);
            grad_norm = clip_gradients(grads, cfg.optim.clip_norm);
        } catch (const std::runtime_error& err) {
            throw std::runtime_error("training aborted at step " + std::to_string(step) + ": " + err.what() +
                                     "; last record: " + metric_record_jsonl(last));
        }
        const double lr = lr_schedule(step, cfg.optim);
        const int64_t logical = step - 1;  // metrics describe pre-update params
        if (logical % cfg.log_interval == 0) {
            const double wall =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            emit(evaluate_metrics(g, nodes, logical, lr_schedule(logical, cfg.optim), grad_norm, wall));
        }
        adamw_step(params.tensors, grads, state, step, lr, cfg.optim.beta1, cfg.optim.beta2,
                   cfg.optim.weight_decay, cfg.optim.eps, decay_allowed);
        if (!out_dir.empty() && cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0 &&
            step != cfg.optim.total_steps)
            save_checkpoint(out_dir + "/step" + std::to_string(step) + ".ckpt",
                            make_checkpoint(cfg, params, state, step));
    }

    // one extra forward/backward to log the post-training state
    {
        const auto t0 = std::chrono::steady_clock::now();
        auto maybe_batch = it.next();
        if (!maybe_batch) {
            it.start_epoch(++epoch);
            maybe_batch = it.next();
        }
        Graph g;
        const StepNodes nodes = build_step_graph(g, cfg, *maybe_batch);
        g.forward(param_bindings(params));
        g.backward(nodes.combined);
        std::map<std::string, Tensor> grads;
        for (const auto& [name, t] : params.tensors) grads[name] = g.input_grad(name);
        const double grad_norm = clip_gradients(grads, cfg.optim.clip_norm);
        const double wall =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        emit(evaluate_metrics(g, nodes, cfg.optim.total_steps, lr_schedule(cfg.optim.total_steps, cfg.optim),
                              grad_norm, wall));
    }

    result.final_ce = last.ce_loss;
    result.final_sr = last.sr_loss;
    result.final_mean_cosine = last.mean_pairwise_cosine;
    result.val_ppl = validation_perplexity(cfg, params, split.val);
    if (!out_dir.empty()) {
        result.checkpoint_path = out_dir + "/final.ckpt";
        save_checkpoint(result.checkpoint_path, make_checkpoint(cfg, params, state, cfg.optim.total_steps));
    }
    return result;
}

std::vector<SweepCell> sweep(const std::vector<std::pair<double, double>>& grid, const TrainConfig& base,
                             const std::string& out_dir) {
    if (grid.empty()) throw std::invalid_argument("sweep: empty grid");
    std::vector<SweepCell> cells;
    for (const auto& [tau, lambda] : grid) {
        SweepCell cell;
        cell.tau = tau;
        cell.lambda = lambda;
        TrainConfig cfg = base;
        cfg.simreg.tau = tau;
        cfg.simreg.lambda = lambda;
        char name[64];
        std::snprintf(name, sizeof(name), "cell_tau%g_lambda%g", tau, lambda);
        const std::string cell_dir = out_dir.empty() ? "" : out_dir + "/" + name;
        try {
            const TrainResult r = train_run(cfg, cell_dir);
            cell.final_ce = r.final_ce;
            cell.final_sr = r.final_sr;
            cell.val_ppl = r.val_ppl;
        } catch (const std::exception& err) {
            cell.failed = true;
            cell.error = err.what();
            cell.final_ce = cell.final_sr = cell.val_ppl = std::numeric_limits<double>::quiet_NaN();
        }
        cells.push_back(std::move(cell));
    }
    if (!out_dir.empty()) write_sweep_csv(cells, out_dir + "/sweep.csv");
    return cells;
}

void write_sweep_csv(const std::vector<SweepCell>& cells, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    f << "tau,lambda,final_ce,final_sr,val_ppl\n";
    char buf[256];
    for (const auto& c : cells) {
        std::snprintf(buf, sizeof(buf), "%g,%g,%.12g,%.12g,%.12g\n", c.tau, c.lambda, c.final_ce, c.final_sr,
                      c.val_ppl);
        f << buf;
    }
}

}  // namespace simreg
