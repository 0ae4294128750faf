#include "simreglab/config.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace simreg {

namespace {

const std::vector<std::pair<std::string, std::pair<std::string, std::string>>>& docs() {
    static const std::vector<std::pair<std::string, std::pair<std::string, std::string>>> table = {
        {"model.vocab_size", {"256", "token vocabulary size"}},
        {"model.n_layers", {"2", "decoder blocks"}},
        {"model.n_heads", {"4", "attention heads"}},
        {"model.embed_dim", {"64", "embedding dimension d"}},
        {"model.ffn_hidden", {"172", "SwiGLU hidden size (~8/3 d)"}},
        {"model.max_seq_len", {"128", "maximum sequence length"}},
        {"model.rmsnorm_eps", {"1e-6", "RMSNorm epsilon"}},
        {"model.init_std", {"0.01", "Gaussian init standard deviation"}},
        {"simreg.tau", {"0.01", "similarity temperature"}},
        {"simreg.lambda", {"auto", "regularizer weight; auto = 10*sqrt(d/1024)"}},
        {"simreg.chunks", {"1", "chunk count b for chunk-wise SimReg"}},
        {"simreg.capture_layer", {"-1", "embedding capture depth; -1 = final pre-head"}},
        {"simreg.similarity", {"cosine", "similarity form: cosine | inner"}},
        {"optim.beta1", {"0.9", "AdamW beta1"}},
        {"optim.beta2", {"0.95", "AdamW beta2"}},
        {"optim.weight_decay", {"0.1", "decoupled weight decay"}},
        {"optim.peak_lr", {"3e-4", "peak learning rate"}},
        {"optim.final_lr_fraction", {"0.1", "cosine decay floor as a fraction of peak"}},
        {"optim.warmup_steps", {"200", "linear warmup steps"}},
        {"optim.total_steps", {"2000", "optimizer steps"}},
        {"optim.clip_norm", {"1.0", "global gradient norm clip"}},
        {"optim.eps", {"1e-8", "AdamW epsilon"}},
        {"optim.adagc_lambda", {"1.04", "recorded for provenance; unused"}},
        {"optim.adagc_beta", {"0.99", "recorded for provenance; unused"}},
        {"data.corpus", {"zipf", "'zipf' or path to a raw bytes file"}},
        {"data.tokenizer", {"byte", "tokenizer mode: byte | word"}},
        {"data.vocab_file", {"", "vocabulary file for word mode"}},
        {"data.zipf_exponent", {"1.2", "Zipf exponent s"}},
        {"data.zipf_length", {"500000", "synthetic corpus length"}},
        {"data.batch_size", {"2", "sequences per step"}},
        {"data.seq_len", {"128", "training window length"}},
        {"data.val_fraction", {"0.05", "held-out tail fraction for validation ppl"}},
        {"run.seed", {"1", "master seed"}},
        {"run.log_interval", {"10", "steps between metric records"}},
        {"run.checkpoint_interval", {"0", "0 = final checkpoint only"}},
    };
    return table;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

int64_t to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const int64_t r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw std::invalid_argument("config: '" + key + "' expects an integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw std::invalid_argument("config: '" + key + "' expects a number, got '" + v + "'");
    }
}

}  // namespace

const std::string& ConfigMap::get(const std::string& key) const {
    auto it = values.find(key);
    if (it == values.end()) throw std::invalid_argument("unknown config key '" + key + "'");
    return it->second;
}

void ConfigMap::set(const std::string& key, const std::string& value) {
    auto it = values.find(key);
    if (it == values.end()) throw std::invalid_argument("unknown config key '" + key + "'");
    it->second = value;
}

ConfigMap default_config() {
    ConfigMap cfg;
    for (const auto& [key, dv] : docs()) cfg.values[key] = dv.first;
    return cfg;
}

ConfigMap load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file '" + path + "'");
    ConfigMap cfg = default_config();
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

void apply_override(ConfigMap& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument("--set expects KEY=VALUE, got '" + assignment + "'");
    cfg.set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

TrainConfig to_train_config(const ConfigMap& cfg) {
    TrainConfig t;
    t.model.vocab_size = to_int("model.vocab_size", cfg.get("model.vocab_size"));
    t.model.n_layers = to_int("model.n_layers", cfg.get("model.n_layers"));
    t.model.n_heads = to_int("model.n_heads", cfg.get("model.n_heads"));
    t.model.embed_dim = to_int("model.embed_dim", cfg.get("model.embed_dim"));
    t.model.ffn_hidden = to_int("model.ffn_hidden", cfg.get("model.ffn_hidden"));
    t.model.max_seq_len = to_int("model.max_seq_len", cfg.get("model.max_seq_len"));
    t.model.rmsnorm_eps = to_double("model.rmsnorm_eps", cfg.get("model.rmsnorm_eps"));
    t.model.init_std = to_double("model.init_std", cfg.get("model.init_std"));

    t.simreg.tau = to_double("simreg.tau", cfg.get("simreg.tau"));
    const std::string lambda = cfg.get("simreg.lambda");
    t.simreg.lambda = lambda == "auto" ? lambda_for_dim(t.model.embed_dim) : to_double("simreg.lambda", lambda);
    t.simreg.chunks = to_int("simreg.chunks", cfg.get("simreg.chunks"));
    t.simreg.capture_layer = to_int("simreg.capture_layer", cfg.get("simreg.capture_layer"));
    const std::string sim = cfg.get("simreg.similarity");
    if (sim == "cosine")
        t.simreg.similarity = Similarity::cosine;
    else if (sim == "inner")
        t.simreg.similarity = Similarity::inner;
    else
        throw std::invalid_argument("config: simreg.similarity must be 'cosine' or 'inner'");

    t.optim.beta1 = to_double("optim.beta1", cfg.get("optim.beta1"));
    t.optim.beta2 = to_double("optim.beta2", cfg.get("optim.beta2"));
    t.optim.weight_decay = to_double("optim.weight_decay", cfg.get("optim.weight_decay"));
    t.optim.peak_lr = to_double("optim.peak_lr", cfg.get("optim.peak_lr"));
    t.optim.final_lr_fraction = to_double("optim.final_lr_fraction", cfg.get("optim.final_lr_fraction"));
    t.optim.warmup_steps = to_int("optim.warmup_steps", cfg.get("optim.warmup_steps"));
    t.optim.total_steps = to_int("optim.total_steps", cfg.get("optim.total_steps"));
    t.optim.clip_norm = to_double("optim.clip_norm", cfg.get("optim.clip_norm"));
    t.optim.eps = to_double("optim.eps", cfg.get("optim.eps"));
    t.optim.adagc_lambda = to_double("optim.adagc_lambda", cfg.get("optim.adagc_lambda"));
    t.optim.adagc_beta = to_double("optim.adagc_beta", cfg.get("optim.adagc_beta"));

    t.data.corpus = cfg.get("data.corpus");
    t.data.tokenizer = cfg.get("data.tokenizer");
    t.data.vocab_file = cfg.get("data.vocab_file");
    t.data.zipf_exponent = to_double("data.zipf_exponent", cfg.get("data.zipf_exponent"));
    t.data.zipf_length = to_int("data.zipf_length", cfg.get("data.zipf_length"));
    t.data.batch_size = to_int("data.batch_size", cfg.get("data.batch_size"));
    t.data.seq_len = to_int("data.seq_len", cfg.get("data.seq_len"));
    t.data.val_fraction = to_double("data.val_fraction", cfg.get("data.val_fraction"));

    t.seed = static_cast<uint64_t>(to_int("run.seed", cfg.get("run.seed")));
    t.log_interval = to_int("run.log_interval", cfg.get("run.log_interval"));
    t.checkpoint_interval = to_int("run.checkpoint_interval", cfg.get("run.checkpoint_interval"));
    t.validate();
    return t;
}

std::vector<std::pair<std::string, std::pair<std::string, std::string>>> config_docs() { return docs(); }

}  // namespace simreg
