// simreg: train / sweep / gradcheck / theory / analyze / freq
//
// Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "simreglab/checkpoint.hpp"
#include "simreglab/config.hpp"
#include "simreglab/diagnostics.hpp"
#include "simreglab/theory.hpp"
#include "simreglab/trainer.hpp"

using namespace simreg;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir = "out";
    int64_t seed = -1;  // -1 = take run.seed from the config
};

TrainConfig resolve_config(const CommonOpts& opts) {
    ConfigMap cfg = opts.config_path.empty() ? default_config() : load_config(opts.config_path);
    for (const auto& setting : opts.overrides) apply_override(cfg, setting);
    if (opts.seed >= 0) cfg.set("run.seed", std::to_string(opts.seed));
    return to_train_config(cfg);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    f << text;
}

// n x n cosine matrix of the final-layer embeddings plus a trailing summary
// comment with the mean off-diagonal cosine and its angle.
void export_similarity_heatmap(const Tensor& embeddings, const std::string& path) {
    const Tensor cm = cosine_matrix_values(embeddings);
    const int64_t n = cm.shape[0];
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    char buf[64];
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", cm(i, j));
            f << (j ? "," : "") << buf;
        }
        f << "\n";
    }
    const double mean_cos = mean_offdiagonal_cosine(embeddings);
    std::snprintf(buf, sizeof(buf), "%.12g", mean_cos);
    f << "# mean_offdiag_cosine=" << buf;
    std::snprintf(buf, sizeof(buf), "%.6f", average_angle_from_similarity(std::clamp(mean_cos, -1.0, 1.0)));
    f << ",angle_degrees=" << buf << "\n";
}

void write_margin_csv(const std::vector<MarginEntry>& entries, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    f << "token,margin,pos_group_margin,neg_group_margin,pos_center_dist,neg_center_dist,"
         "lower,upper,smoothness,has_neg,lower_holds,upper_holds\n";
    char buf[512];
    for (size_t k = 0; k < entries.size(); ++k) {
        const auto& e = entries[k];
        std::snprintf(buf, sizeof(buf), "%zu,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%d,%d,%d\n", k,
                      e.margin, e.pos_group_margin, e.neg_group_margin, e.pos_center_dist, e.neg_center_dist,
                      e.lower, e.upper, e.smoothness, e.has_neg ? 1 : 0, e.lower_holds ? 1 : 0,
                      e.upper_holds ? 1 : 0);
        f << buf;
    }
}

int do_train(const CommonOpts& opts) {
    const TrainConfig cfg = resolve_config(opts);
    const TrainResult r = train_run(cfg, opts.out_dir);
    std::printf("steps=%ld final_ce=%.6f final_sr=%.6f mean_cos=%.4f val_ppl=%.4f\n",
                static_cast<long>(cfg.optim.total_steps), r.final_ce, r.final_sr, r.final_mean_cosine,
                r.val_ppl);
    std::printf("records: %s/metrics.jsonl  checkpoint: %s\n", opts.out_dir.c_str(),
                r.checkpoint_path.c_str());
    return 0;
}

int do_sweep(const CommonOpts& opts, const std::vector<double>& taus, const std::vector<double>& lambdas) {
    const TrainConfig base = resolve_config(opts);
    std::vector<std::pair<double, double>> grid;
    for (double tau : taus)
        for (double lambda : lambdas) grid.emplace_back(tau, lambda);
    const auto cells = sweep(grid, base, opts.out_dir);
    int failures = 0;
    for (const auto& c : cells) {
        if (c.failed) {
            ++failures;
            std::printf("tau=%g lambda=%g FAILED: %s\n", c.tau, c.lambda, c.error.c_str());
        } else {
            std::printf("tau=%g lambda=%g final_ce=%.6f final_sr=%.6f val_ppl=%.4f\n", c.tau, c.lambda,
                        c.final_ce, c.final_sr, c.val_ppl);
        }
    }
    std::printf("sweep table: %s/sweep.csv (%zu cells, %d failed)\n", opts.out_dir.c_str(), cells.size(),
                failures);
    return 0;
}

int do_gradcheck(int64_t seed) {
    const GradCheckReport r = run_gradient_check(static_cast<uint64_t>(seed < 0 ? 7 : seed));
    std::printf("model path: max relative gradient error %.3e (tolerance 1e-3) -> %s\n", r.model_max_rel_err,
                r.model_pass ? "PASS" : "FAIL");
    std::printf("loss module: max relative gradient error %.3e (tolerance 1e-4) -> %s\n", r.loss_max_rel_err,
                r.loss_pass ? "PASS" : "FAIL");
    std::printf("elapsed %.2fs\n", r.seconds);
    if (!(r.model_pass && r.loss_pass)) throw std::runtime_error("gradient check failed");
    return 0;
}

int do_theory(const std::string& suite, int64_t cases, int64_t seed) {
    const uint64_t s = static_cast<uint64_t>(seed < 0 ? 1 : seed);
    std::vector<SuiteResult> results;
    auto want = [&](const char* name) { return suite == "all" || suite == name; };
    if (want("lemma1")) results.push_back(run_lemma1_suite(cases, s));
    if (want("margin_bound")) results.push_back(run_margin_bound_suite(cases, s));
    if (want("dynamics")) results.push_back(run_dynamics_suite(cases, s));
    if (want("moments")) results.push_back(run_moments_suite(cases >= 10000 ? cases : 1000000, s));
    if (want("density")) results.push_back(run_density_suite());
    if (want("kernel")) results.push_back(run_kernel_suite(cases, s));
    if (results.empty())
        throw std::invalid_argument("unknown suite '" + suite +
                                    "' (expected lemma1|margin_bound|dynamics|moments|density|kernel|all)");
    int64_t total_violations = 0;
    for (const auto& r : results) {
        std::printf("%-13s cases=%-7ld violations=%-4ld worst=%.3e  (%.2fs)\n", r.name.c_str(),
                    static_cast<long>(r.cases), static_cast<long>(r.violations), r.worst, r.seconds);
        total_violations += r.violations;
    }
    std::printf("total violations: %ld\n", static_cast<long>(total_violations));
    if (total_violations > 0) throw std::runtime_error("theory property run found violations");
    return 0;
}

int do_analyze(const std::string& ckpt_path, const std::string& text, const std::string& tokens_csv,
               int64_t zipf_sample, int64_t seed, const std::string& out_dir) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const ModelConfig config = config_from_header(ckpt.header);
    const ModelParams params = params_from_tensors(ckpt.tensors);

    std::vector<int64_t> tokens;
    if (!text.empty()) {
        tokens = tokenize({text.data(), text.size()}, Vocabulary::bytes());
    } else if (!tokens_csv.empty()) {
        std::string item;
        std::istringstream stream(tokens_csv);
        while (std::getline(stream, item, ',')) tokens.push_back(std::stoll(item));
    } else {
        const int64_t n = zipf_sample > 0 ? zipf_sample : std::min<int64_t>(config.max_seq_len, 64);
        tokens = zipf_corpus(config.vocab_size, 1.2, n, static_cast<uint64_t>(seed < 0 ? 1 : seed));
    }
    if (static_cast<int64_t>(tokens.size()) > config.max_seq_len)
        throw std::invalid_argument("input has " + std::to_string(tokens.size()) +
                                    " tokens, model max_seq_len is " + std::to_string(config.max_seq_len));

    const auto fwd = model_forward(tokens, params, config, config.n_layers);
    std::filesystem::create_directories(out_dir);
    export_similarity_heatmap(fwd.embeddings, out_dir + "/heatmap.csv");

    // margins against the LM head over the labeled prefix
    const TokenBatch batch = TokenBatch::from_tokens(tokens);
    std::vector<int64_t> labels(batch.labels[0].begin(), batch.labels[0].end() - 1);
    if (!labels.empty()) {
        Tensor emb_prefix({static_cast<int64_t>(labels.size()), config.embed_dim});
        std::copy_n(fwd.embeddings.data.begin(), emb_prefix.data.size(), emb_prefix.data.begin());
        write_margin_csv(margin_report(emb_prefix, labels, params.at("lm_head")), out_dir + "/margins.csv");
    }

    const double mean_cos = mean_offdiagonal_cosine(fwd.embeddings);
    const double angle = average_angle_from_similarity(std::clamp(mean_cos, -1.0, 1.0));
    char summary[256];
    std::snprintf(summary, sizeof(summary),
                  "tokens=%zu\nmean_offdiag_cosine=%.12g\nangle_degrees=%.6f\n", tokens.size(), mean_cos,
                  angle);
    write_text(out_dir + "/summary.txt", summary);
    std::printf("%s", summary);
    std::printf("wrote %s/heatmap.csv, %s/margins.csv, %s/summary.txt\n", out_dir.c_str(), out_dir.c_str(),
                out_dir.c_str());
    return 0;
}

int do_freq(const std::string& corpus_path, int64_t vocab, double exponent, int64_t length, int64_t seed,
            double head_fraction, const std::string& out_dir) {
    std::vector<int64_t> ids;
    if (!corpus_path.empty()) {
        std::ifstream f(corpus_path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot open corpus '" + corpus_path + "'");
        std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        ids = tokenize({bytes.data(), bytes.size()}, Vocabulary::bytes());
    } else {
        ids = zipf_corpus(vocab, exponent, length, static_cast<uint64_t>(seed < 0 ? 1 : seed));
    }
    const FrequencyReport report = token_frequency_report(ids, head_fraction);
    std::filesystem::create_directories(out_dir);
    write_frequency_csv(report, out_dir + "/freq.csv");
    std::printf("tokens=%ld types=%zu head_types=%ld head_share=%.4f (top %.1f%% of types)\n",
                static_cast<long>(report.total_tokens), report.rows.size(),
                static_cast<long>(report.head_types), report.head_share, head_fraction * 100.0);
    std::printf("wrote %s/freq.csv\n", out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SimReg pretraining laboratory"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::vector<double> taus{0.01, 0.1};
    std::vector<double> lambdas{0.0, 1.0, 10.0};
    std::string suite = "all";
    int64_t cases = 500;
    std::string ckpt_path, text, tokens_csv, corpus_path;
    int64_t zipf_sample = 0;
    int64_t freq_vocab = 5000, freq_length = 1000000;
    double freq_exponent = 1.2, head_fraction = 0.02;

    auto add_common = [&](CLI::App* cmd, bool with_config) {
        if (with_config)
            cmd->add_option("--config", opts.config_path, "flat key = value config file")
                ->check(CLI::ExistingFile);
        cmd->add_option("--set", opts.overrides, "override a config key (KEY=VALUE, repeatable)");
        cmd->add_option("--out", opts.out_dir, "output directory");
        cmd->add_option("--seed", opts.seed, "seed override");
    };

    auto* train_cmd = app.add_subcommand("train", "run a training job");
    add_common(train_cmd, true);

    auto* sweep_cmd = app.add_subcommand("sweep", "grid sweep over (tau, lambda)");
    add_common(sweep_cmd, true);
    sweep_cmd->add_option("--tau", taus, "tau grid values");
    sweep_cmd->add_option("--lambda", lambdas, "lambda grid values");

    auto* grad_cmd = app.add_subcommand("gradcheck", "reverse-mode vs central finite differences");
    grad_cmd->add_option("--seed", opts.seed, "seed");

    auto* theory_cmd = app.add_subcommand("theory", "run theory property suites");
    theory_cmd->add_option("--suite", suite, "lemma1|margin_bound|dynamics|moments|density|kernel|all");
    theory_cmd->add_option("--cases", cases, "cases per suite");
    theory_cmd->add_option("--seed", opts.seed, "seed");

    auto* analyze_cmd = app.add_subcommand("analyze", "similarity heatmap + margin report from a checkpoint");
    analyze_cmd->add_option("--ckpt", ckpt_path, "checkpoint path")->required()->check(CLI::ExistingFile);
    analyze_cmd->add_option("--text", text, "analyze this text (byte tokenizer)");
    analyze_cmd->add_option("--tokens", tokens_csv, "comma-separated token ids");
    analyze_cmd->add_option("--zipf-sample", zipf_sample, "sample this many Zipf tokens instead");
    analyze_cmd->add_option("--out", opts.out_dir, "output directory");
    analyze_cmd->add_option("--seed", opts.seed, "seed for the sampled input");

    auto* freq_cmd = app.add_subcommand("freq", "token-frequency long-tail report");
    freq_cmd->add_option("--corpus", corpus_path, "raw bytes file (byte tokenizer)")->check(CLI::ExistingFile);
    freq_cmd->add_option("--vocab", freq_vocab, "Zipf vocabulary size");
    freq_cmd->add_option("--exponent", freq_exponent, "Zipf exponent");
    freq_cmd->add_option("--length", freq_length, "Zipf corpus length");
    freq_cmd->add_option("--head-fraction", head_fraction, "head fraction p");
    freq_cmd->add_option("--out", opts.out_dir, "output directory");
    freq_cmd->add_option("--seed", opts.seed, "seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (app.got_subcommand(train_cmd)) return do_train(opts);
        if (app.got_subcommand(sweep_cmd)) return do_sweep(opts, taus, lambdas);
        if (app.got_subcommand(grad_cmd)) return do_gradcheck(opts.seed);
        if (app.got_subcommand(theory_cmd)) return do_theory(suite, cases, opts.seed);
        if (app.got_subcommand(analyze_cmd))
            return do_analyze(ckpt_path, text, tokens_csv, zipf_sample, opts.seed, opts.out_dir);
        if (app.got_subcommand(freq_cmd))
            return do_freq(corpus_path, freq_vocab, freq_exponent, freq_length, opts.seed, head_fraction,
                           opts.out_dir);
    } catch (const std::invalid_argument& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    }
    return 1;
}
