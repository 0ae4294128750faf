#pragma once

#include <cmath>
#include <vector>

#include "simreglab/rng.hpp"
#include "simreglab/tensor.hpp"

namespace simreg::testutil {

inline Tensor rand_tensor(const std::vector<int64_t>& shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
    Tensor t(shape);
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

inline double rel_err(double a, double b, double floor = 1e-6) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

// max over coordinates of |a-b| / max(|a|,|b|,floor); floor plays the atol role
inline double max_rel_err(const Tensor& a, const Tensor& b, double floor = 1e-6) {
    double worst = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) worst = std::max(worst, rel_err(a.data[i], b.data[i], floor));
    return worst;
}

inline bool close(double a, double b, double rtol, double atol = 0.0) {
    return std::fabs(a - b) <= atol + rtol * std::max(std::fabs(a), std::fabs(b));
}

}  // namespace simreg::testutil
