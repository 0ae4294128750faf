#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "simreglab/tensor.hpp"

namespace simreg {

// --- margins and the weighted-center bounds -------------------------

// Gap between the correct-class logit and the largest competing logit.
double margin(std::span<const double> logits, int64_t label);

struct MarginBoundCheck {
    double loss;
    double bound;  // (C-1) * exp(-margin)
    bool holds;
};
MarginBoundCheck ce_margin_bound_check(std::span<const double> logits, int64_t label);

struct WeightedCenters {
    std::vector<double> pos_center;
    std::vector<double> neg_center;  // empty when the token has no negatives
    std::vector<double> alpha_pos;   // normalized within the group
    std::vector<double> alpha_neg;
    bool has_neg = false;
};
// alpha_{k,i} proportional to exp(e_k . e_i), computed max-shifted.
WeightedCenters weighted_centers(const Tensor& embeddings, std::span<const int64_t> labels, int64_t k);

struct MarginEntry {
    double margin = 0.0;
    double pos_group_margin = 0.0;
    double neg_group_margin = 0.0;
    double pos_center_dist = 0.0;
    double neg_center_dist = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    double smoothness = 0.0;  // L_P = spectral norm of the linear head
    bool has_neg = false;
    bool lower_holds = false;
    bool upper_holds = true;  // vacuous without negatives
};

// Linear head: logits = e . head with head of shape [d, C].
MarginEntry group_margin_bounds(const Tensor& embeddings, std::span<const int64_t> labels,
                                const Tensor& head, int64_t k, double slack = 1e-9);

std::vector<MarginEntry> margin_report(const Tensor& embeddings, std::span<const int64_t> labels,
                                       const Tensor& head, double slack = 1e-9);

// pairwise logit gap g_{y,j}(e) = (We)_y - (We)_j for a [d,C] head
double logit_gap(std::span<const double> e, const Tensor& head, int64_t y, int64_t j);

// Exact spectral norm via a cyclic Jacobi eigensolver on the smaller Gram.
double spectral_norm(const Tensor& w);

// --- tangent-space dynamics -----------------------------------------

enum class DynamicsMode { full, positive_only, negative_only };

struct DynamicsEntry {
    std::vector<double> direction;  // a_k after the update, re-normalized
    std::vector<double> v_pos;
    std::vector<double> v_neg;
    double mass_pos = 0.0;  // P_k
    double mass_neg = 0.0;  // N_k
    std::vector<double> tangent_update;
    double d_pos_sq = 0.0;  // change of |a_k - v_k^+|^2, v held fixed
    double d_neg_sq = 0.0;
};

DynamicsEntry tangent_dynamics_step(const Tensor& unit_embeddings, std::span<const int64_t> labels,
                                    int64_t k, double eta, DynamicsMode mode = DynamicsMode::full);

// --- cosine distribution (isotropic pairs) --------------------------

struct MomentEstimate {
    double mean = 0.0;
    double second_moment = 0.0;
    double stderr_mean = 0.0;
    double stderr_second_moment = 0.0;
};

MomentEstimate cosine_moments_mc(int64_t d, int64_t n_samples, uint64_t seed);

// f_p(z) = Gamma(d/2) / (sqrt(pi) Gamma((d-1)/2)) * (1 - z^2)^((d-3)/2)
double cosine_density(double z, int64_t d);

// integral of cosine_density over [-1,1] via adaptive Simpson on z = sin t
double cosine_density_normalization(int64_t d);

// --- kernel feature map ----------------------------------------------

// Truncated tensor-power expansion with 1/sqrt(m!) block scaling; block m
// has d^m entries, so this is only materializable for small d^M.
std::vector<double> kernel_feature_map(std::span<const double> u, int64_t order);

// |<h_M(u), h_M(v)> - exp(u.v)| with the inner product evaluated through
// the algebraic identity <h_M(u),h_M(v)> = sum_{m<=M} (u.v)^m / m!.
double kernel_check(std::span<const double> u, std::span<const double> v, int64_t order);

double average_angle_from_similarity(double mean_cosine);

}  // namespace simreg
