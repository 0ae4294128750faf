#include "simreglab/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace simreg {

namespace {

thread_local int64_t g_pairwise_evals = 0;

// ---------------------------------------------------------------
//  broadcasting machinery (numpy trailing-dim rules)
// ---------------------------------------------------------------

std::vector<int64_t> broadcast_shape(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
    const size_t r = std::max(a.size(), b.size());
    std::vector<int64_t> out(r, 1);
    for (size_t i = 0; i < r; ++i) {
        const int64_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const int64_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (ea != eb && ea != 1 && eb != 1)
            throw std::invalid_argument("shapes " + shape_to_string(a) + " and " + shape_to_string(b) +
                                        " do not broadcast");
        out[i] = std::max(ea, eb);
    }
    return out;
}

std::vector<int64_t> aligned_strides(const std::vector<int64_t>& shape, const std::vector<int64_t>& out) {
    const size_t r = out.size(), k = shape.size();
    std::vector<int64_t> natural(k);
    int64_t s = 1;
    for (size_t i = k; i-- > 0;) {
        natural[i] = s;
        s *= shape[i];
    }
    std::vector<int64_t> strides(r, 0);
    for (size_t i = 0; i < k; ++i) {
        const size_t oi = r - k + i;
        strides[oi] = (shape[i] == 1 && out[oi] != 1) ? 0 : natural[i];
    }
    return strides;
}

// Offset pattern of one operand against the broadcast result shape.
struct BcastPattern {
    enum Kind { full, scalar, suffix, row } kind = full;
    int64_t modulo = 1;  // suffix: operand length; row: inner extent
};

BcastPattern classify_operand(const std::vector<int64_t>& shape, const std::vector<int64_t>& out) {
    int64_t numel = 1;
    for (int64_t e : shape) numel *= e;
    if (shape == out) return {BcastPattern::full, 0};
    if (numel == 1) return {BcastPattern::scalar, 0};
    // operand equals a trailing slice of the result shape: offset = lin % numel
    if (shape.size() <= out.size() &&
        std::equal(shape.rbegin(), shape.rend(), out.rbegin()))
        return {BcastPattern::suffix, numel};
    // [n,1] against [n,m]: offset = lin / m
    if (shape.size() == 2 && out.size() == 2 && shape[0] == out[0] && shape[1] == 1)
        return {BcastPattern::row, out[1]};
    return {BcastPattern::full, -1};  // generic odometer
}

// Visits every element of the broadcast result with the matching operand
// offsets. f(linear_out, off_a, off_b).
template <class F>
void for_broadcast(const std::vector<int64_t>& out, const std::vector<int64_t>& a,
                   const std::vector<int64_t>& b, F&& f) {
    int64_t n = 1;
    for (int64_t e : out) n *= e;
    const BcastPattern pa = classify_operand(a, out);
    const BcastPattern pb = classify_operand(b, out);
    auto fast = [](const BcastPattern& p) { return !(p.kind == BcastPattern::full && p.modulo == -1); };
    if (fast(pa) && fast(pb)) {
        auto off = [](const BcastPattern& p, int64_t lin) -> int64_t {
            switch (p.kind) {
                case BcastPattern::full: return lin;
                case BcastPattern::scalar: return 0;
                case BcastPattern::suffix: return lin % p.modulo;
                default: return lin / p.modulo;
            }
        };
        for (int64_t i = 0; i < n; ++i) f(i, off(pa, i), off(pb, i));
        return;
    }
    const auto sa = aligned_strides(a, out);
    const auto sb = aligned_strides(b, out);
    const size_t r = out.size();
    std::vector<int64_t> idx(r, 0);
    int64_t offa = 0, offb = 0;
    for (int64_t lin = 0; lin < n; ++lin) {
        f(lin, offa, offb);
        for (size_t d = r; d-- > 0;) {
            ++idx[d];
            offa += sa[d];
            offb += sb[d];
            if (idx[d] < out[d]) break;
            offa -= sa[d] * out[d];
            offb -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

// ---------------------------------------------------------------
//  matmul kernels (plain loops in orders the compiler vectorizes
//  without reassociating any reduction)
// ---------------------------------------------------------------

// c += a * b, row-major; 4-way unrolling over the inner dimension keeps the
// accumulator row in registers
void mm_nn_accum(const double* __restrict__ a, const double* __restrict__ b, double* __restrict__ c,
                 int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        double* __restrict__ crow = c + i * n;
        const double* __restrict__ arow = a + i * k;
        int64_t p = 0;
        for (; p + 4 <= k; p += 4) {
            const double a0 = arow[p], a1 = arow[p + 1], a2 = arow[p + 2], a3 = arow[p + 3];
            const double* __restrict__ b0 = b + p * n;
            const double* __restrict__ b1 = b0 + n;
            const double* __restrict__ b2 = b1 + n;
            const double* __restrict__ b3 = b2 + n;
            for (int64_t j = 0; j < n; ++j)
                crow[j] = std::fma(a3, b3[j], std::fma(a2, b2[j], std::fma(a1, b1[j], std::fma(a0, b0[j], crow[j]))));
        }
        for (; p < k; ++p) {
            const double av = arow[p];
            const double* __restrict__ brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] = std::fma(av, brow[j], crow[j]);
        }
    }
}

void mm_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    std::fill(c, c + m * n, 0.0);
    mm_nn_accum(a, b, c, m, k, n);
}

// c[p,j] += sum_i a[i,p] * g[i,j]   (a: m x k, g: m x n, c: k x n)
void mm_tn_accum(const double* __restrict__ a, const double* __restrict__ g, double* __restrict__ c,
                 int64_t m, int64_t k, int64_t n) {
    for (int64_t p = 0; p < k; ++p) {
        double* __restrict__ crow = c + p * n;
        int64_t i = 0;
        for (; i + 4 <= m; i += 4) {
            const double a0 = a[i * k + p], a1 = a[(i + 1) * k + p];
            const double a2 = a[(i + 2) * k + p], a3 = a[(i + 3) * k + p];
            const double* __restrict__ g0 = g + i * n;
            const double* __restrict__ g1 = g0 + n;
            const double* __restrict__ g2 = g1 + n;
            const double* __restrict__ g3 = g2 + n;
            for (int64_t j = 0; j < n; ++j)
                crow[j] = std::fma(a3, g3[j], std::fma(a2, g2[j], std::fma(a1, g1[j], std::fma(a0, g0[j], crow[j]))));
        }
        for (; i < m; ++i) {
            const double av = a[i * k + p];
            const double* __restrict__ grow = g + i * n;
            for (int64_t j = 0; j < n; ++j) crow[j] = std::fma(av, grow[j], crow[j]);
        }
    }
}

std::vector<double> transposed(const double* a, int64_t m, int64_t n) {
    std::vector<double> t(static_cast<size_t>(m * n));
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) t[static_cast<size_t>(j * m + i)] = a[i * n + j];
    return t;
}

// Decomposes a shape around `axis` into [outer, extent, inner].
struct AxisSplit {
    int64_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const std::vector<int64_t>& shape, int32_t axis) {
    AxisSplit s;
    for (int32_t i = 0; i < static_cast<int32_t>(shape.size()); ++i) {
        if (i < axis)
            s.outer *= shape[i];
        else if (i == axis)
            s.extent = shape[i];
        else
            s.inner *= shape[i];
    }
    return s;
}

std::vector<int64_t> reduced_shape(const std::vector<int64_t>& in, int32_t axis, bool keepdims) {
    if (axis < 0) {
        if (!keepdims) return {};
        return std::vector<int64_t>(in.size(), 1);
    }
    std::vector<int64_t> out = in;
    if (keepdims)
        out[static_cast<size_t>(axis)] = 1;
    else
        out.erase(out.begin() + axis);
    return out;
}

double dot(const double* a, const double* b, int64_t n) {
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

double l2(const double* a, int64_t n) { return std::sqrt(dot(a, a, n)); }

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::input: return "input";
        case Op::constant: return "constant";
        case Op::add: return "add";
        case Op::sub: return "sub";
        case Op::mul: return "mul";
        case Op::div: return "div";
        case Op::matmul: return "matmul";
        case Op::transpose: return "transpose";
        case Op::exp: return "exp";
        case Op::log: return "log";
        case Op::sqrt: return "sqrt";
        case Op::sigmoid: return "sigmoid";
        case Op::softplus: return "softplus";
        case Op::pow: return "pow";
        case Op::sum: return "sum";
        case Op::mean: return "mean";
        case Op::max: return "max";
        case Op::logsumexp: return "logsumexp";
        case Op::softmax: return "softmax";
        case Op::l2norm: return "l2norm";
        case Op::concat: return "concat";
        case Op::slice: return "slice";
        case Op::gather: return "gather";
        case Op::cosine: return "cosine";
        case Op::cosine_matrix: return "cosine_matrix";
        case Op::cross_entropy: return "cross_entropy";
    }
    return "?";
}

double softplus_value(double x) {
    // max(x,0) + log1p(exp(-|x|)) is exact in both tails
    return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

double sigmoid_value(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double logsumexp_stable(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("logsumexp of an empty set");
    std::sort(values.begin(), values.end());
    const double m = values.back();
    double s = 0.0;
    for (double v : values) s += std::exp(v - m);
    return m + std::log(s);
}

double cross_entropy_row(const double* logits, int64_t classes, int64_t label) {
    double m = logits[0];
    for (int64_t j = 1; j < classes; ++j) m = std::max(m, logits[j]);
    double s = 0.0;
    for (int64_t j = 0; j < classes; ++j) s += std::exp(logits[j] - m);
    return m + std::log(s) - logits[label];
}

int64_t pairwise_eval_count() { return g_pairwise_evals; }
void reset_pairwise_eval_count() { g_pairwise_evals = 0; }
void add_pairwise_evals(int64_t n) { g_pairwise_evals += n; }

Tensor cosine_matrix_values(const Tensor& e) {
    if (e.rank() != 2) throw std::invalid_argument("cosine_matrix_values expects [n,d]");
    const int64_t rows = e.shape[0], d = e.shape[1];
    std::vector<double> norms(static_cast<size_t>(rows));
    for (int64_t k = 0; k < rows; ++k) norms[static_cast<size_t>(k)] = l2(e.data.data() + k * d, d);
    Tensor out({rows, rows});
    for (int64_t k = 0; k < rows; ++k) {
        for (int64_t j = 0; j < rows; ++j) {
            double c;
            if (k == j)
                c = norms[static_cast<size_t>(k)] > 0.0 ? 1.0 : 0.0;
            else if (norms[static_cast<size_t>(k)] == 0.0 || norms[static_cast<size_t>(j)] == 0.0)
                c = 0.0;
            else
                c = dot(e.data.data() + k * d, e.data.data() + j * d, d) /
                    (norms[static_cast<size_t>(k)] * norms[static_cast<size_t>(j)]);
            out.data[static_cast<size_t>(k * rows + j)] = c;
        }
    }
    g_pairwise_evals += rows * rows;
    return out;
}

Tensor gram_matrix_values(const Tensor& e) {
    if (e.rank() != 2) throw std::invalid_argument("gram_matrix_values expects [n,d]");
    const int64_t rows = e.shape[0], d = e.shape[1];
    Tensor out({rows, rows});
    for (int64_t k = 0; k < rows; ++k)
        for (int64_t j = 0; j < rows; ++j)
            out.data[static_cast<size_t>(k * rows + j)] = dot(e.data.data() + k * d, e.data.data() + j * d, d);
    g_pairwise_evals += rows * rows;
    return out;
}

Tensor one_hot(const std::vector<int64_t>& ids, int64_t depth) {
    Tensor t({static_cast<int64_t>(ids.size()), depth});
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= depth)
            throw std::invalid_argument("one_hot id " + std::to_string(ids[i]) + " out of range [0," +
                                        std::to_string(depth) + ")");
        t.data[i * static_cast<size_t>(depth) + static_cast<size_t>(ids[i])] = 1.0;
    }
    return t;
}

// ---------------------------------------------------------------
//  builders
// ---------------------------------------------------------------

Expr Graph::make(Node n) {
    nodes_.push_back(std::move(n));
    return Expr{this, static_cast<int32_t>(nodes_.size() - 1)};
}

Node& Graph::at(Expr e) {
    if (e.graph != this || e.id < 0 || e.id >= static_cast<int32_t>(nodes_.size()))
        throw std::invalid_argument("expression does not belong to this graph");
    return nodes_[static_cast<size_t>(e.id)];
}

Expr Graph::input(const std::string& name, std::vector<int64_t> shape) {
    Tensor::checked_numel(shape);
    Node n;
    n.op = Op::input;
    n.name = name;
    n.shape = std::move(shape);
    return make(std::move(n));
}

Expr Graph::constant(Tensor value) {
    Node n;
    n.op = Op::constant;
    n.shape = value.shape;
    n.value = std::move(value);
    n.evaluated = true;
    return make(std::move(n));
}

Expr Graph::scalar(double v) { return constant(Tensor::scalar(v)); }

static Node binary_node(Op op, Graph* g, Expr a, Expr b) {
    if (a.graph != g || b.graph != g) throw std::invalid_argument("operands from a different graph");
    Node n;
    n.op = op;
    n.args = {a.id, b.id};
    return n;
}

Expr Graph::add(Expr a, Expr b) {
    Node n = binary_node(Op::add, this, a, b);
    n.shape = broadcast_shape(at(a).shape, at(b).shape);
    return make(std::move(n));
}

Expr Graph::sub(Expr a, Expr b) {
    Node n = binary_node(Op::sub, this, a, b);
    n.shape = broadcast_shape(at(a).shape, at(b).shape);
    return make(std::move(n));
}

Expr Graph::mul(Expr a, Expr b) {
    Node n = binary_node(Op::mul, this, a, b);
    n.shape = broadcast_shape(at(a).shape, at(b).shape);
    return make(std::move(n));
}

Expr Graph::div(Expr a, Expr b) {
    Node n = binary_node(Op::div, this, a, b);
    n.shape = broadcast_shape(at(a).shape, at(b).shape);
    return make(std::move(n));
}

Expr Graph::matmul(Expr a, Expr b) {
    const auto& sa = at(a).shape;
    const auto& sb = at(b).shape;
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
        throw std::invalid_argument("matmul shape mismatch " + shape_to_string(sa) + " x " + shape_to_string(sb));
    Node n = binary_node(Op::matmul, this, a, b);
    n.shape = {sa[0], sb[1]};
    return make(std::move(n));
}

Expr Graph::transpose(Expr a) {
    const auto& s = at(a).shape;
    if (s.size() != 2) throw std::invalid_argument("transpose expects a matrix, got " + shape_to_string(s));
    Node n;
    n.op = Op::transpose;
    n.args = {a.id};
    n.shape = {s[1], s[0]};
    return make(std::move(n));
}

#define SIMREG_UNARY(NAME, OP)                  \
    Expr Graph::NAME(Expr a) {                  \
        Node n;                                 \
        n.op = OP;                              \
        n.args = {a.id};                        \
        n.shape = at(a).shape;                  \
        (void)at(a);                            \
        return make(std::move(n));              \
    }

SIMREG_UNARY(exp, Op::exp)
SIMREG_UNARY(log, Op::log)
SIMREG_UNARY(sqrt, Op::sqrt)
SIMREG_UNARY(sigmoid, Op::sigmoid)
SIMREG_UNARY(softplus, Op::softplus)
#undef SIMREG_UNARY

Expr Graph::pow(Expr a, double exponent) {
    Node n;
    n.op = Op::pow;
    n.args = {a.id};
    n.shape = at(a).shape;
    n.attr = exponent;
    return make(std::move(n));
}

static void check_axis(const std::vector<int64_t>& shape, int32_t axis, const char* what) {
    if (axis < -1 || axis >= static_cast<int32_t>(shape.size()))
        throw std::invalid_argument(std::string(what) + ": axis " + std::to_string(axis) +
                                    " out of range for shape " + shape_to_string(shape));
}

Expr Graph::sum(Expr a, int32_t axis, bool keepdims) {
    check_axis(at(a).shape, axis, "sum");
    Node n;
    n.op = Op::sum;
    n.args = {a.id};
    n.axis = axis;
    n.keepdims = keepdims;
    n.shape = reduced_shape(at(a).shape, axis, keepdims);
    return make(std::move(n));
}

Expr Graph::mean(Expr a, int32_t axis, bool keepdims) {
    check_axis(at(a).shape, axis, "mean");
    Node n;
    n.op = Op::mean;
    n.args = {a.id};
    n.axis = axis;
    n.keepdims = keepdims;
    n.shape = reduced_shape(at(a).shape, axis, keepdims);
    return make(std::move(n));
}

Expr Graph::max(Expr a, int32_t axis, bool keepdims) {
    check_axis(at(a).shape, axis, "max");
    Node n;
    n.op = Op::max;
    n.args = {a.id};
    n.axis = axis;
    n.keepdims = keepdims;
    n.shape = reduced_shape(at(a).shape, axis, keepdims);
    return make(std::move(n));
}

Expr Graph::logsumexp(Expr a, int32_t axis, bool keepdims) {
    check_axis(at(a).shape, axis, "logsumexp");
    Node n;
    n.op = Op::logsumexp;
    n.args = {a.id};
    n.axis = axis;
    n.keepdims = keepdims;
    n.shape = reduced_shape(at(a).shape, axis, keepdims);
    return make(std::move(n));
}

Expr Graph::softmax(Expr a, int32_t axis) {
    const auto& s = at(a).shape;
    if (axis < 0 || axis >= static_cast<int32_t>(s.size()))
        throw std::invalid_argument("softmax: axis " + std::to_string(axis) + " out of range for " +
                                    shape_to_string(s));
    Node n;
    n.op = Op::softmax;
    n.args = {a.id};
    n.axis = axis;
    n.shape = s;
    return make(std::move(n));
}

Expr Graph::l2norm(Expr a) {
    Node n;
    n.op = Op::l2norm;
    n.args = {a.id};
    n.shape = {};
    (void)at(a);
    return make(std::move(n));
}

Expr Graph::concat(const std::vector<Expr>& parts, int32_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat of zero parts");
    const auto& first = at(parts[0]).shape;
    if (axis < 0 || axis >= static_cast<int32_t>(first.size()))
        throw std::invalid_argument("concat: bad axis");
    Node n;
    n.op = Op::concat;
    n.axis = axis;
    std::vector<int64_t> out = first;
    out[static_cast<size_t>(axis)] = 0;
    for (Expr p : parts) {
        const auto& s = at(p).shape;
        if (s.size() != first.size()) throw std::invalid_argument("concat: rank mismatch");
        for (size_t i = 0; i < s.size(); ++i)
            if (static_cast<int32_t>(i) != axis && s[i] != first[i])
                throw std::invalid_argument("concat: extent mismatch off the concat axis");
        out[static_cast<size_t>(axis)] += s[static_cast<size_t>(axis)];
        n.args.push_back(p.id);
    }
    n.shape = std::move(out);
    return make(std::move(n));
}

Expr Graph::slice(Expr a, int32_t axis, int64_t start, int64_t length) {
    const auto& s = at(a).shape;
    if (axis < 0 || axis >= static_cast<int32_t>(s.size())) throw std::invalid_argument("slice: bad axis");
    if (length < 1 || start < 0 || start + length > s[static_cast<size_t>(axis)])
        throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                    std::to_string(start + length) + ") out of bounds for " + shape_to_string(s));
    Node n;
    n.op = Op::slice;
    n.args = {a.id};
    n.axis = axis;
    n.start = start;
    n.length = length;
    n.shape = s;
    n.shape[static_cast<size_t>(axis)] = length;
    return make(std::move(n));
}

Expr Graph::gather(Expr a, int32_t axis, std::vector<int64_t> indices) {
    const auto& s = at(a).shape;
    if (axis < 0 || axis >= static_cast<int32_t>(s.size())) throw std::invalid_argument("gather: bad axis");
    if (indices.empty()) throw std::invalid_argument("gather: empty index list");
    for (int64_t i : indices)
        if (i < 0 || i >= s[static_cast<size_t>(axis)])
            throw std::invalid_argument("gather: index " + std::to_string(i) + " out of range for " +
                                        shape_to_string(s));
    Node n;
    n.op = Op::gather;
    n.args = {a.id};
    n.axis = axis;
    n.shape = s;
    n.shape[static_cast<size_t>(axis)] = static_cast<int64_t>(indices.size());
    n.indices = std::move(indices);
    return make(std::move(n));
}

Expr Graph::cosine(Expr u, Expr v) {
    const auto& su = at(u).shape;
    const auto& sv = at(v).shape;
    if (su.size() != 1 || sv.size() != 1 || su[0] != sv[0])
        throw std::invalid_argument("cosine expects two equal-length vectors");
    Node n;
    n.op = Op::cosine;
    n.args = {u.id, v.id};
    n.shape = {};
    return make(std::move(n));
}

Expr Graph::cosine_matrix(Expr embeddings) {
    const auto& s = at(embeddings).shape;
    if (s.size() != 2) throw std::invalid_argument("cosine_matrix expects [n,d]");
    Node n;
    n.op = Op::cosine_matrix;
    n.args = {embeddings.id};
    n.shape = {s[0], s[0]};
    return make(std::move(n));
}

Expr Graph::gram_matrix(Expr embeddings) {
    const auto& s = at(embeddings).shape;
    if (s.size() != 2) throw std::invalid_argument("gram_matrix expects [n,d]");
    Node n;
    n.op = Op::cosine_matrix;
    n.attr = 1.0;  // inner-product mode
    n.args = {embeddings.id};
    n.shape = {s[0], s[0]};
    return make(std::move(n));
}

Expr Graph::cross_entropy(Expr logits, std::vector<int64_t> labels) {
    const auto& s = at(logits).shape;
    if (s.size() != 2) throw std::invalid_argument("cross_entropy expects [n,C] logits");
    if (static_cast<int64_t>(labels.size()) != s[0])
        throw std::invalid_argument("cross_entropy: label count does not match rows");
    for (int64_t y : labels)
        if (y < 0 || y >= s[1])
            throw std::invalid_argument("cross_entropy: label " + std::to_string(y) + " out of range [0," +
                                        std::to_string(s[1]) + ")");
    Node n;
    n.op = Op::cross_entropy;
    n.args = {logits.id};
    n.indices = std::move(labels);
    n.shape = {s[0]};
    return make(std::move(n));
}

Expr operator+(Expr a, Expr b) { return a.graph->add(a, b); }
Expr operator-(Expr a, Expr b) { return a.graph->sub(a, b); }
Expr operator*(Expr a, Expr b) { return a.graph->mul(a, b); }
Expr operator/(Expr a, Expr b) { return a.graph->div(a, b); }

// ---------------------------------------------------------------
//  forward
// ---------------------------------------------------------------

void Graph::bind_inputs(const Bindings& bindings) {
    for (auto& n : nodes_) {
        if (n.op != Op::input) {
            n.evaluated = n.op == Op::constant;
            continue;
        }
        auto it = bindings.find(n.name);
        if (it == bindings.end()) throw std::invalid_argument("missing binding for input '" + n.name + "'");
        if (it->second.shape != n.shape)
            throw std::invalid_argument("binding for '" + n.name + "' has shape " +
                                        shape_to_string(it->second.shape) + ", expected " +
                                        shape_to_string(n.shape));
        n.value = it->second;
        n.evaluated = true;
    }
}

void Graph::eval_node(Node& n) {
    auto arg = [&](size_t i) -> const Tensor& { return nodes_[static_cast<size_t>(n.args[i])].value; };
    switch (n.op) {
        case Op::input:
        case Op::constant:
            return;
        case Op::add:
        case Op::sub:
        case Op::mul:
        case Op::div: {
            const Tensor& a = arg(0);
            const Tensor& b = arg(1);
            Tensor out(n.shape);
            const double* __restrict__ pa = a.data.data();
            const double* __restrict__ pb = b.data.data();
            double* __restrict__ po = out.data.data();
            switch (n.op) {
                case Op::add:
                    for_broadcast(n.shape, a.shape, b.shape,
                                  [&](int64_t lin, int64_t ia, int64_t ib) { po[lin] = pa[ia] + pb[ib]; });
                    break;
                case Op::sub:
                    for_broadcast(n.shape, a.shape, b.shape,
                                  [&](int64_t lin, int64_t ia, int64_t ib) { po[lin] = pa[ia] - pb[ib]; });
                    break;
                case Op::mul:
                    for_broadcast(n.shape, a.shape, b.shape,
                                  [&](int64_t lin, int64_t ia, int64_t ib) { po[lin] = pa[ia] * pb[ib]; });
                    break;
                default:
                    for_broadcast(n.shape, a.shape, b.shape,
                                  [&](int64_t lin, int64_t ia, int64_t ib) { po[lin] = pa[ia] / pb[ib]; });
                    break;
            }
            n.value = std::move(out);
            return;
        }
        case Op::matmul: {
            const Tensor& a = arg(0);
            const Tensor& b = arg(1);
            Tensor out(n.shape);
            mm_nn(a.data.data(), b.data.data(), out.data.data(), a.shape[0], a.shape[1], b.shape[1]);
            n.value = std::move(out);
            return;
        }
        case Op::transpose: {
            const Tensor& a = arg(0);
            Tensor out(n.shape);
            out.data = transposed(a.data.data(), a.shape[0], a.shape[1]);
            n.value = std::move(out);
            return;
        }
        case Op::exp:
        case Op::log:
        case Op::sqrt:
        case Op::sigmoid:
        case Op::softplus:
        case Op::pow: {
            const Tensor& a = arg(0);
            Tensor out(n.shape);
            for (size_t i = 0; i < a.data.size(); ++i) {
                const double x = a.data[i];
                double r;
                switch (n.op) {
                    case Op::exp: r = std::exp(x); break;
                    case Op::log: r = std::log(x); break;
                    case Op::sqrt: r = std::sqrt(x); break;
                    case Op::sigmoid: r = sigmoid_value(x); break;
                    case Op::softplus: r = softplus_value(x); break;
                    default: r = std::pow(x, n.attr); break;
                }
                out.data[i] = r;
            }
            n.value = std::move(out);
            return;
        }
        case Op::sum:
        case Op::mean:
        case Op::max:
        case Op::logsumexp: {
            const Tensor& a = arg(0);
            const int32_t axis = n.axis < 0 ? -1 : n.axis;
            const AxisSplit sp = axis < 0 ? AxisSplit{1, a.numel(), 1} : split_axis(a.shape, axis);
            Tensor out(n.shape);
            std::vector<double> slice_vals(static_cast<size_t>(sp.extent));
            for (int64_t o = 0; o < sp.outer; ++o) {
                for (int64_t in = 0; in < sp.inner; ++in) {
                    const int64_t base = o * sp.extent * sp.inner + in;
                    double r;
                    if (n.op == Op::logsumexp) {
                        for (int64_t e = 0; e < sp.extent; ++e)
                            slice_vals[static_cast<size_t>(e)] = a.data[static_cast<size_t>(base + e * sp.inner)];
                        r = logsumexp_stable(slice_vals);
                    } else if (n.op == Op::max) {
                        r = a.data[static_cast<size_t>(base)];
                        for (int64_t e = 1; e < sp.extent; ++e)
                            r = std::max(r, a.data[static_cast<size_t>(base + e * sp.inner)]);
                    } else {
                        r = 0.0;
                        for (int64_t e = 0; e < sp.extent; ++e)
                            r += a.data[static_cast<size_t>(base + e * sp.inner)];
                        if (n.op == Op::mean) r /= static_cast<double>(sp.extent);
                    }
                    out.data[static_cast<size_t>(o * sp.inner + in)] = r;
                }
            }
            n.value = std::move(out);
            return;
        }
        case Op::softmax: {
            const Tensor& a = arg(0);
            const AxisSplit sp = split_axis(a.shape, n.axis);
            Tensor out(n.shape);
            for (int64_t o = 0; o < sp.outer; ++o)
                for (int64_t in = 0; in < sp.inner; ++in) {
                    const int64_t base = o * sp.extent * sp.inner + in;
                    double m = a.data[static_cast<size_t>(base)];
                    for (int64_t e = 1; e < sp.extent; ++e)
                        m = std::max(m, a.data[static_cast<size_t>(base + e * sp.inner)]);
                    double z = 0.0;
                    for (int64_t e = 0; e < sp.extent; ++e) {
                        const size_t i = static_cast<size_t>(base + e * sp.inner);
                        const double shifted = a.data[i] - m;
                        // exp underflows to exactly +0 below -760; skip the call
                        // (causal masks make half the attention entries such)
                        out.data[i] = shifted <= -760.0 ? 0.0 : std::exp(shifted);
                        z += out.data[i];
                    }
                    for (int64_t e = 0; e < sp.extent; ++e) out.data[static_cast<size_t>(base + e * sp.inner)] /= z;
                }
            n.value = std::move(out);
            return;
        }
        case Op::l2norm: {
            const Tensor& a = arg(0);
            n.value = Tensor::scalar(l2(a.data.data(), a.numel()));
            return;
        }
        case Op::concat: {
            Tensor out(n.shape);
            const AxisSplit sp = split_axis(n.shape, n.axis);
            int64_t written = 0;
            for (int32_t ai : n.args) {
                const Tensor& part = nodes_[static_cast<size_t>(ai)].value;
                const int64_t pe = part.shape[static_cast<size_t>(n.axis)];
                for (int64_t o = 0; o < sp.outer; ++o)
                    std::copy_n(part.data.begin() + o * pe * sp.inner, pe * sp.inner,
                                out.data.begin() + (o * sp.extent + written) * sp.inner);
                written += pe;
            }
            n.value = std::move(out);
            return;
        }
        case Op::slice: {
            const Tensor& a = arg(0);
            const AxisSplit sp = split_axis(a.shape, n.axis);
            Tensor out(n.shape);
            for (int64_t o = 0; o < sp.outer; ++o)
                std::copy_n(a.data.begin() + (o * sp.extent + n.start) * sp.inner, n.length * sp.inner,
                            out.data.begin() + o * n.length * sp.inner);
            n.value = std::move(out);
            return;
        }
        case Op::gather: {
            const Tensor& a = arg(0);
            const AxisSplit sp = split_axis(a.shape, n.axis);
            const int64_t m = static_cast<int64_t>(n.indices.size());
            Tensor out(n.shape);
            for (int64_t o = 0; o < sp.outer; ++o)
                for (int64_t e = 0; e < m; ++e)
                    std::copy_n(a.data.begin() + (o * sp.extent + n.indices[static_cast<size_t>(e)]) * sp.inner,
                                sp.inner, out.data.begin() + (o * m + e) * sp.inner);
            n.value = std::move(out);
            return;
        }
        case Op::cosine: {
            const Tensor& u = arg(0);
            const Tensor& v = arg(1);
            const int64_t d = u.numel();
            const double nu = l2(u.data.data(), d);
            const double nv = l2(v.data.data(), d);
            n.value = Tensor::scalar(nu == 0.0 || nv == 0.0 ? 0.0 : dot(u.data.data(), v.data.data(), d) / (nu * nv));
            return;
        }
        case Op::cosine_matrix: {
            n.value = n.attr == 1.0 ? gram_matrix_values(arg(0)) : cosine_matrix_values(arg(0));
            return;
        }
        case Op::cross_entropy: {
            const Tensor& z = arg(0);
            const int64_t rows = z.shape[0], classes = z.shape[1];
            Tensor out(n.shape);
            for (int64_t i = 0; i < rows; ++i)
                out.data[static_cast<size_t>(i)] =
                    cross_entropy_row(z.data.data() + i * classes, classes, n.indices[static_cast<size_t>(i)]);
            n.value = std::move(out);
            return;
        }
    }
}

void Graph::forward(const Bindings& bindings) {
    bind_inputs(bindings);
    for (size_t i = 0; i < nodes_.size(); ++i) {
        Node& n = nodes_[i];
        if (!n.evaluated) {
            eval_node(n);
            n.evaluated = true;
        }
        if (n.op != Op::constant && !n.value.all_finite())
            throw std::runtime_error("non-finite value produced by node #" + std::to_string(i) + " (" +
                                     op_name(n.op) + (n.name.empty() ? "" : " '" + n.name + "'") + ")");
    }
}

std::vector<char> Graph::reachable_from(int32_t root) const {
    std::vector<char> seen(nodes_.size(), 0);
    std::vector<int32_t> stack = {root};
    seen[static_cast<size_t>(root)] = 1;
    while (!stack.empty()) {
        const int32_t id = stack.back();
        stack.pop_back();
        for (int32_t a : nodes_[static_cast<size_t>(id)].args)
            if (!seen[static_cast<size_t>(a)]) {
                seen[static_cast<size_t>(a)] = 1;
                stack.push_back(a);
            }
    }
    return seen;
}

// ---------------------------------------------------------------
//  backward
// ---------------------------------------------------------------

namespace {
void ensure_grad(Node& n) {
    if (n.grad.data.empty()) n.grad = Tensor(n.shape.empty() ? std::vector<int64_t>{} : n.shape);
}
}  // namespace

void Graph::backprop_node(int32_t id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.data.empty() || n.args.empty()) return;
    const Tensor& g = n.grad;
    auto argnode = [&](size_t i) -> Node& { return nodes_[static_cast<size_t>(n.args[i])]; };

    switch (n.op) {
        case Op::input:
        case Op::constant:
            return;
        case Op::add:
        case Op::sub: {
            Node& a = argnode(0);
            Node& b = argnode(1);
            ensure_grad(a);
            ensure_grad(b);
            const double sign = n.op == Op::add ? 1.0 : -1.0;
            for_broadcast(n.shape, a.shape, b.shape, [&](int64_t lin, int64_t ia, int64_t ib) {
                const double gv = g.data[static_cast<size_t>(lin)];
                a.grad.data[static_cast<size_t>(ia)] += gv;
                b.grad.data[static_cast<size_t>(ib)] += sign * gv;
            });
            return;
        }
        case Op::mul: {
            Node& a = argnode(0);
            Node& b = argnode(1);
            ensure_grad(a);
            ensure_grad(b);
            for_broadcast(n.shape, a.shape, b.shape, [&](int64_t lin, int64_t ia, int64_t ib) {
                const double gv = g.data[static_cast<size_t>(lin)];
                a.grad.data[static_cast<size_t>(ia)] += gv * b.value.data[static_cast<size_t>(ib)];
                b.grad.data[static_cast<size_t>(ib)] += gv * a.value.data[static_cast<size_t>(ia)];
            });
            return;
        }
        case Op::div: {
            Node& a = argnode(0);
            Node& b = argnode(1);
            ensure_grad(a);
            ensure_grad(b);
            for_broadcast(n.shape, a.shape, b.shape, [&](int64_t lin, int64_t ia, int64_t ib) {
                const double gv = g.data[static_cast<size_t>(lin)];
                const double bv = b.value.data[static_cast<size_t>(ib)];
                a.grad.data[static_cast<size_t>(ia)] += gv / bv;
                b.grad.data[static_cast<size_t>(ib)] -= gv * a.value.data[static_cast<size_t>(ia)] / (bv * bv);
            });
            return;
        }
        case Op::matmul: {
            Node& a = argnode(0);
            Node& b = argnode(1);
            ensure_grad(a);
            ensure_grad(b);
            const int64_t m = a.shape[0], k = a.shape[1], c = b.shape[1];
            // dA += G * B^T
            const auto bt = transposed(b.value.data.data(), k, c);
            mm_nn_accum(g.data.data(), bt.data(), a.grad.data.data(), m, c, k);
            // dB += A^T * G
            mm_tn_accum(a.value.data.data(), g.data.data(), b.grad.data.data(), m, k, c);
            return;
        }
        case Op::transpose: {
            Node& a = argnode(0);
            ensure_grad(a);
            const int64_t m = n.shape[0], c = n.shape[1];
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < c; ++j)
                    a.grad.data[static_cast<size_t>(j * m + i)] += g.data[static_cast<size_t>(i * c + j)];
            return;
        }
        case Op::exp:
        case Op::log:
        case Op::sqrt:
        case Op::sigmoid:
        case Op::softplus:
        case Op::pow: {
            Node& a = argnode(0);
            ensure_grad(a);
            for (size_t i = 0; i < a.value.data.size(); ++i) {
                const double x = a.value.data[i];
                const double gv = g.data[i];
                double d;
                switch (n.op) {
                    case Op::exp: d = n.value.data[i]; break;
                    case Op::log: d = 1.0 / x; break;
                    case Op::sqrt: d = 0.5 / n.value.data[i]; break;
                    case Op::sigmoid: {
                        const double s = n.value.data[i];
                        d = s * (1.0 - s);
                        break;
                    }
                    case Op::softplus: d = sigmoid_value(x); break;
                    default: d = n.attr * std::pow(x, n.attr - 1.0); break;
                }
                a.grad.data[i] += gv * d;
            }
            return;
        }
        case Op::sum:
        case Op::mean: {
            Node& a = argnode(0);
            ensure_grad(a);
            const int32_t axis = n.axis;
            const AxisSplit sp = axis < 0 ? AxisSplit{1, a.value.numel(), 1} : split_axis(a.shape, axis);
            const double scale = n.op == Op::mean ? 1.0 / static_cast<double>(sp.extent) : 1.0;
            for (int64_t o = 0; o < sp.outer; ++o)
                for (int64_t in = 0; in < sp.inner; ++in) {
                    const double gv = g.data[static_cast<size_t>(o * sp.inner + in)] * scale;
                    const int64_t base = o * sp.extent * sp.inner + in;
                    for (int64_t e = 0; e < sp.extent; ++e) a.grad.data[static_cast<size_t>(base + e * sp.inner)] += gv;
                }
            return;
        }
        case Op::max: {
            Node& a = argnode(0);
            ensure_grad(a);
            const int32_t axis = n.axis;
            const AxisSplit sp = axis < 0 ? AxisSplit{1, a.value.numel(), 1} : split_axis(a.shape, axis);
            for (int64_t o = 0; o < sp.outer; ++o)
                for (int64_t in = 0; in < sp.inner; ++in) {
                    const int64_t base = o * sp.extent * sp.inner + in;
                    // ties resolve to the first maximal element
                    int64_t best = 0;
                    double bv = a.value.data[static_cast<size_t>(base)];
                    for (int64_t e = 1; e < sp.extent; ++e) {
                        const double v = a.value.data[static_cast<size_t>(base + e * sp.inner)];
                        if (v > bv) {
                            bv = v;
                            best = e;
                        }
                    }
                    a.grad.data[static_cast<size_t>(base + best * sp.inner)] +=
                        g.data[static_cast<size_t>(o * sp.inner + in)];
                }
            return;
        }
        case Op::logsumexp: {
            Node& a = argnode(0);
            ensure_grad(a);
            const int32_t axis = n.axis;
            const AxisSplit sp = axis < 0 ? AxisSplit{1, a.value.numel(), 1} : split_axis(a.shape, axis);
            for (int64_t o = 0; o < sp.outer; ++o)
                for (int64_t in = 0; in < sp.inner; ++in) {
                    const double lse = n.value.data[static_cast<size_t>(o * sp.inner + in)];
                    const double gv = g.data[static_cast<size_t>(o * sp.inner + in)];
                    const int64_t base = o * sp.extent * sp.inner + in;
                    for (int64_t e = 0; e < sp.extent; ++e) {
                        const size_t i = static_cast<size_t>(base + e * sp.inner);
                        a.grad.data[i] += gv * std::exp(a.value.data[i] - lse);
                    }
                }
            return;
        }
        case Op::softmax: {
            Node& a = argnode(0);
            ensure_grad(a);
            const AxisSplit sp = split_axis(a.shape, n.axis);
            for (int64_t o = 0; o < sp.outer; ++o)
                for (int64_t in = 0; in < sp.inner; ++in) {
                    const int64_t base = o * sp.extent * sp.inner + in;
                    double inner_prod = 0.0;
                    for (int64_t e = 0; e < sp.extent; ++e) {
                        const size_t i = static_cast<size_t>(base + e * sp.inner);
                        inner_prod += g.data[i] * n.value.data[i];
                    }
                    for (int64_t e = 0; e < sp.extent; ++e) {
                        const size_t i = static_cast<size_t>(base + e * sp.inner);
                        a.grad.data[i] += n.value.data[i] * (g.data[i] - inner_prod);
                    }
                }
            return;
        }
        case Op::l2norm: {
            Node& a = argnode(0);
            ensure_grad(a);
            const double v = n.value.data[0];
            if (v == 0.0) return;  // gradient defined as 0 at the kink
            const double gv = g.data[0] / v;
            for (size_t i = 0; i < a.value.data.size(); ++i) a.grad.data[i] += gv * a.value.data[i];
            return;
        }
        case Op::concat: {
            const AxisSplit sp = split_axis(n.shape, n.axis);
            int64_t written = 0;
            for (int32_t ai : n.args) {
                Node& part = nodes_[static_cast<size_t>(ai)];
                ensure_grad(part);
                const int64_t pe = part.shape[static_cast<size_t>(n.axis)];
                for (int64_t o = 0; o < sp.outer; ++o) {
                    const int64_t src = (o * sp.extent + written) * sp.inner;
                    const int64_t dst = o * pe * sp.inner;
                    for (int64_t i = 0; i < pe * sp.inner; ++i)
                        part.grad.data[static_cast<size_t>(dst + i)] += g.data[static_cast<size_t>(src + i)];
                }
                written += pe;
            }
            return;
        }
        case Op::slice: {
            Node& a = argnode(0);
            ensure_grad(a);
            const AxisSplit sp = split_axis(a.shape, n.axis);
            for (int64_t o = 0; o < sp.outer; ++o) {
                const int64_t dst = (o * sp.extent + n.start) * sp.inner;
                const int64_t src = o * n.length * sp.inner;
                for (int64_t i = 0; i < n.length * sp.inner; ++i)
                    a.grad.data[static_cast<size_t>(dst + i)] += g.data[static_cast<size_t>(src + i)];
            }
            return;
        }
        case Op::gather: {
            Node& a = argnode(0);
            ensure_grad(a);
            const AxisSplit sp = split_axis(a.shape, n.axis);
            const int64_t m = static_cast<int64_t>(n.indices.size());
            for (int64_t o = 0; o < sp.outer; ++o)
                for (int64_t e = 0; e < m; ++e) {
                    const int64_t dst = (o * sp.extent + n.indices[static_cast<size_t>(e)]) * sp.inner;
                    const int64_t src = (o * m + e) * sp.inner;
                    for (int64_t i = 0; i < sp.inner; ++i)
                        a.grad.data[static_cast<size_t>(dst + i)] += g.data[static_cast<size_t>(src + i)];
                }
            return;
        }
        case Op::cosine: {
            Node& u = argnode(0);
            Node& v = argnode(1);
            ensure_grad(u);
            ensure_grad(v);
            const int64_t d = u.value.numel();
            const double nu = l2(u.value.data.data(), d);
            const double nv = l2(v.value.data.data(), d);
            if (nu == 0.0 || nv == 0.0) return;
            const double c = n.value.data[0];
            const double gv = g.data[0];
            for (int64_t i = 0; i < d; ++i) {
                const double ui = u.value.data[static_cast<size_t>(i)];
                const double vi = v.value.data[static_cast<size_t>(i)];
                u.grad.data[static_cast<size_t>(i)] += gv * (vi / (nu * nv) - c * ui / (nu * nu));
                v.grad.data[static_cast<size_t>(i)] += gv * (ui / (nu * nv) - c * vi / (nv * nv));
            }
            return;
        }
        case Op::cosine_matrix: {
            Node& e = argnode(0);
            ensure_grad(e);
            const int64_t rows = e.shape[0], d = e.shape[1];
            if (n.attr == 1.0) {  // inner-product mode
                for (int64_t k = 0; k < rows; ++k) {
                    const double* ek = e.value.data.data() + k * d;
                    double* gk = e.grad.data.data() + k * d;
                    for (int64_t j = 0; j < rows; ++j) {
                        const double gv = g.data[static_cast<size_t>(k * rows + j)];
                        if (gv == 0.0) continue;
                        const double* ej = e.value.data.data() + j * d;
                        double* gj = e.grad.data.data() + j * d;
                        if (j == k) {
                            for (int64_t t = 0; t < d; ++t) gk[t] += 2.0 * gv * ek[t];
                        } else {
                            for (int64_t t = 0; t < d; ++t) {
                                gk[t] += gv * ej[t];
                                gj[t] += gv * ek[t];
                            }
                        }
                    }
                }
                return;
            }
            std::vector<double> norms(static_cast<size_t>(rows));
            for (int64_t k = 0; k < rows; ++k) norms[static_cast<size_t>(k)] = l2(e.value.data.data() + k * d, d);
            for (int64_t k = 0; k < rows; ++k) {
                const double nk = norms[static_cast<size_t>(k)];
                if (nk == 0.0) continue;
                for (int64_t j = 0; j < rows; ++j) {
                    if (j == k) continue;  // diagonal is a constant
                    const double njn = norms[static_cast<size_t>(j)];
                    if (njn == 0.0) continue;
                    const double gv = g.data[static_cast<size_t>(k * rows + j)];
                    if (gv == 0.0) continue;
                    const double c = n.value.data[static_cast<size_t>(k * rows + j)];
                    const double* ek = e.value.data.data() + k * d;
                    const double* ej = e.value.data.data() + j * d;
                    double* gk = e.grad.data.data() + k * d;
                    double* gj = e.grad.data.data() + j * d;
                    const double inv_kj = 1.0 / (nk * njn);
                    const double ck = c / (nk * nk);
                    const double cj = c / (njn * njn);
                    for (int64_t t = 0; t < d; ++t) {
                        gk[t] += gv * (ej[t] * inv_kj - ck * ek[t]);
                        gj[t] += gv * (ek[t] * inv_kj - cj * ej[t]);
                    }
                }
            }
            return;
        }
        case Op::cross_entropy: {
            Node& z = argnode(0);
            ensure_grad(z);
            const int64_t rows = z.shape[0], classes = z.shape[1];
            for (int64_t i = 0; i < rows; ++i) {
                const double gv = g.data[static_cast<size_t>(i)];
                if (gv == 0.0) continue;
                const double* zr = z.value.data.data() + i * classes;
                double m = zr[0];
                for (int64_t j = 1; j < classes; ++j) m = std::max(m, zr[j]);
                double s = 0.0;
                for (int64_t j = 0; j < classes; ++j) s += std::exp(zr[j] - m);
                double* gr = z.grad.data.data() + i * classes;
                for (int64_t j = 0; j < classes; ++j) gr[j] += gv * std::exp(zr[j] - m) / s;
                gr[n.indices[static_cast<size_t>(i)]] -= gv;
            }
            return;
        }
    }
}

void Graph::backward(Expr root) {
    Node& r = at(root);
    if (!r.evaluated) throw std::runtime_error("backward before forward");
    if (r.value.numel() != 1) throw std::invalid_argument("backward root must be scalar-valued");
    for (auto& n : nodes_) n.grad = Tensor{};
    const auto seen = reachable_from(root.id);
    ensure_grad(r);
    r.grad.data[0] = 1.0;
    for (int32_t id = root.id; id >= 0; --id)
        if (seen[static_cast<size_t>(id)]) backprop_node(id);
}

const Tensor& Graph::value(Expr e) const {
    const Node& n = nodes_[static_cast<size_t>(e.id)];
    if (!n.evaluated) throw std::runtime_error("node not evaluated yet");
    return n.value;
}

const Tensor& Graph::grad(Expr e) const { return nodes_[static_cast<size_t>(e.id)].grad; }

Tensor Graph::input_grad(const std::string& name) const {
    for (const auto& n : nodes_)
        if (n.op == Op::input && n.name == name) return n.grad.data.empty() ? Tensor(n.shape) : n.grad;
    throw std::invalid_argument("no input named '" + name + "'");
}

Tensor evaluate(Expr root, const Bindings& bindings) {
    Graph& g = *root.graph;
    g.bind_inputs(bindings);
    const auto seen = g.reachable_from(root.id);
    for (size_t i = 0; i < g.nodes_.size(); ++i) {
        if (!seen[i]) continue;
        Node& n = g.nodes_[i];
        if (!n.evaluated) {
            g.eval_node(n);
            n.evaluated = true;
        }
        if (n.op != Op::constant && !n.value.all_finite())
            throw std::runtime_error("non-finite value produced by node #" + std::to_string(i) + " (" +
                                     op_name(n.op) + (n.name.empty() ? "" : " '" + n.name + "'") + ")");
    }
    return g.nodes_[static_cast<size_t>(root.id)].value;
}

std::map<std::string, Tensor> gradient(Expr root, const Bindings& bindings,
                                       const std::vector<std::string>& wrt) {
    Graph& g = *root.graph;
    g.forward(bindings);
    g.backward(root);
    std::map<std::string, Tensor> out;
    for (const auto& name : wrt) out[name] = g.input_grad(name);
    return out;
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& point,
                                  double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("finite differences need eps > 0");
    Tensor grad(point.shape.empty() ? std::vector<int64_t>{} : point.shape);
    Tensor x = point;
    for (size_t i = 0; i < x.data.size(); ++i) {
        const double keep = x.data[i];
        x.data[i] = keep + eps;
        const double fp = f(x);
        x.data[i] = keep - eps;
        const double fm = f(x);
        x.data[i] = keep;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("non-finite function value during finite differencing");
        grad.data[i] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

}  // namespace simreg
