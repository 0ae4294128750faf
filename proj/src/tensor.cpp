#include "simreglab/tensor.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace simreg {

int64_t Tensor::checked_numel(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t e : s) {
        if (e <= 0) throw std::invalid_argument("tensor extents must be positive, got shape " + shape_to_string(s));
        n *= e;
    }
    return n;
}

Tensor::Tensor(std::vector<int64_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (checked_numel(shape) != static_cast<int64_t>(data.size()))
        throw std::invalid_argument("tensor data length does not match shape " + shape_to_string(shape));
}

Tensor Tensor::scalar(double v) {
    Tensor t;
    t.data.assign(1, v);
    return t;
}

Tensor Tensor::vector(std::initializer_list<double> vals) { return vector(std::vector<double>(vals)); }

Tensor Tensor::vector(std::vector<double> vals) {
    const int64_t n = static_cast<int64_t>(vals.size());
    return Tensor({n}, std::move(vals));
}

Tensor Tensor::matrix(int64_t rows, int64_t cols, std::vector<double> vals) {
    return Tensor({rows, cols}, std::move(vals));
}

Tensor Tensor::randn(const std::vector<int64_t>& s, Rng& rng, double std_dev) {
    Tensor t(s);
    for (auto& v : t.data) v = std_dev * rng.gaussian();
    return t;
}

bool Tensor::all_finite() const {
    // branch-free so the scan vectorizes; NaN fails v == v, Inf the bound
    unsigned ok = 1;
    const double bound = std::numeric_limits<double>::max();
    for (double v : data) ok &= static_cast<unsigned>(v == v) & static_cast<unsigned>(std::fabs(v) <= bound);
    return ok != 0;
}

std::string shape_to_string(const std::vector<int64_t>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

}  // namespace simreg
