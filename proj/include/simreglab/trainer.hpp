#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "simreglab/data.hpp"
#include "simreglab/losses.hpp"
#include "simreglab/model.hpp"

namespace simreg {

struct OptimConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.1;
    double peak_lr = 3e-4;
    double final_lr_fraction = 0.1;
    int64_t warmup_steps = 200;
    int64_t total_steps = 2000;
    double clip_norm = 1.0;
    double eps = 1e-8;
    // recorded for provenance, not used (global-norm clipping instead)
    double adagc_lambda = 1.04;
    double adagc_beta = 0.99;

    void validate() const;
};

struct DataConfig {
    std::string corpus = "zipf";  // "zipf" or a path to a raw bytes file
    std::string tokenizer = "byte";
    std::string vocab_file;
    double zipf_exponent = 1.2;
    int64_t zipf_length = 500000;
    int64_t batch_size = 2;
    int64_t seq_len = 128;
    double val_fraction = 0.05;
};

struct TrainConfig {
    ModelConfig model;
    SimRegConfig simreg;
    OptimConfig optim;
    DataConfig data;
    uint64_t seed = 1;
    int64_t log_interval = 10;
    int64_t checkpoint_interval = 0;  // 0 = final checkpoint only

    int64_t capture_layer_resolved() const {
        return simreg.capture_layer < 0 ? model.n_layers : simreg.capture_layer;
    }
    void validate() const;
};

struct MetricRecord {
    int64_t step = 0;
    double lr = 0.0;
    double ce_loss = 0.0;
    double sr_loss = 0.0;
    double softplus_sr = 0.0;
    double combined_loss = 0.0;
    double grad_norm = 0.0;
    double mean_pairwise_cosine = 0.0;
    double wall_ms_per_step = 0.0;
    int64_t peak_mem_bytes = 0;
};

std::string metric_record_jsonl(const MetricRecord& r);

// --- optimizer primitives --------------------------------------------

struct AdamState {
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
};

// Decoupled AdamW with bias correction; decay_filter(name) == false skips
// the decay term for that parameter (moments still update).
void adamw_step(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads,
                AdamState& state, int64_t step, double lr, double beta1, double beta2,
                double weight_decay, double eps,
                const std::function<bool(const std::string&)>& decay_filter = {});

// linear warmup to peak, then cosine decay to peak * final_lr_fraction
double lr_schedule(int64_t step, const OptimConfig& optim);

// scales all grads by max_norm/global_norm when the global L2 norm exceeds
// max_norm; returns the pre-clip global norm
double clip_gradients(std::map<std::string, Tensor>& grads, double max_norm);

// lambda = 10 * sqrt(d / 1024)
double lambda_for_dim(int64_t d);

// --- training ---------------------------------------------------------

struct StepNodes {
    std::map<std::string, Expr> params;
    Expr ce_mean;
    Expr sr_value;
    Expr combined;
    std::vector<Expr> final_hidden;  // per sequence
    std::vector<Expr> capture;       // per sequence
};

StepNodes build_step_graph(Graph& g, const TrainConfig& cfg, const TokenBatch& batch);

struct TrainResult {
    std::vector<MetricRecord> records;
    double val_ppl = 0.0;
    double final_ce = 0.0;
    double final_sr = 0.0;
    double final_mean_cosine = 0.0;
    std::string checkpoint_path;
};

// Runs total_steps of AdamW on the configured corpus. out_dir may be empty
// (no files written); otherwise metrics.jsonl and checkpoints land there.
TrainResult train_run(const TrainConfig& cfg, const std::string& out_dir);

struct SweepCell {
    double tau = 0.0;
    double lambda = 0.0;
    double final_ce = 0.0;
    double final_sr = 0.0;
    double val_ppl = 0.0;
    bool failed = false;
    std::string error;
};

std::vector<SweepCell> sweep(const std::vector<std::pair<double, double>>& grid, const TrainConfig& base,
                             const std::string& out_dir);

void write_sweep_csv(const std::vector<SweepCell>& cells, const std::string& path);

// mean off-diagonal pairwise cosine of embedding rows (Fig-1 diagnostic)
double mean_offdiagonal_cosine(const Tensor& embeddings);

int64_t peak_rss_bytes();

}  // namespace simreg
