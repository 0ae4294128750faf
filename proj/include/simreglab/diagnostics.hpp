#pragma once

#include <cstdint>
#include <string>

namespace simreg {

// Property-run entry points shared by the `theory` / `gradcheck` CLI verbs
// and the acceptance suite.

struct SuiteResult {
    std::string name;
    int64_t cases = 0;
    int64_t violations = 0;
    double worst = 0.0;  // worst slack / error / deviation seen
    double seconds = 0.0;
};

SuiteResult run_lemma1_suite(int64_t cases, uint64_t seed);
SuiteResult run_margin_bound_suite(int64_t cases, uint64_t seed);
SuiteResult run_dynamics_suite(int64_t cases, uint64_t seed);
// four dims {2, 8, 64, 1024}; a violation is a moment outside 5 standard errors
SuiteResult run_moments_suite(int64_t samples, uint64_t seed);
// dims {2, 3, 5, 50}; a violation is a normalization off by more than 1e-6
SuiteResult run_density_suite();
// error at M = 12 below 1e-6 on random unit pairs, monotone in M, and the
// materialized d = 3 feature map agrees with the series inner product
SuiteResult run_kernel_suite(int64_t pairs, uint64_t seed);

struct GradCheckReport {
    double model_max_rel_err = 0.0;  // combined loss through the toy model
    double loss_max_rel_err = 0.0;   // loss module only (embeddings + logits in)
    bool model_pass = false;         // < 1e-3
    bool loss_pass = false;          // < 1e-4
    double seconds = 0.0;
};

GradCheckReport run_gradient_check(uint64_t seed);

}  // namespace simreg
