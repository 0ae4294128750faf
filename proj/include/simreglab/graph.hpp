#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "simreglab/tensor.hpp"

namespace simreg {

// Node kinds of the expression graph. Graphs are built bottom-up, so node
// ids are already a topological order; forward walks ids ascending and
// reverse accumulation walks them descending.
enum class Op : uint8_t {
    input,
    constant,
    add,
    sub,
    mul,
    div,
    matmul,
    transpose,
    exp,
    log,
    sqrt,
    sigmoid,
    softplus,
    pow,
    sum,
    mean,
    max,
    logsumexp,
    softmax,
    l2norm,
    concat,
    slice,
    gather,
    cosine,
    cosine_matrix,
    cross_entropy,
};

const char* op_name(Op op);

struct Node {
    Op op;
    std::string name;               // input nodes only
    std::vector<int32_t> args;
    int32_t axis = -1;              // -1 on reductions means "all elements"
    bool keepdims = false;
    int64_t start = 0;              // slice
    int64_t length = 0;             // slice
    std::vector<int64_t> indices;   // gather indices / cross_entropy labels
    double attr = 0.0;              // pow exponent
    std::vector<int64_t> shape;     // inferred at build time
    Tensor value;
    Tensor grad;
    bool evaluated = false;
};

class Graph;

// Lightweight handle into a Graph. Valid as long as its graph lives.
struct Expr {
    Graph* graph = nullptr;
    int32_t id = -1;
};

using Bindings = std::map<std::string, Tensor>;

class Graph {
public:
    Graph() = default;
    // Expr handles store the graph address, so a graph must stay put.
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    void reserve(size_t n) { nodes_.reserve(n); }

    Expr input(const std::string& name, std::vector<int64_t> shape);
    Expr constant(Tensor value);
    Expr scalar(double v);

    Expr add(Expr a, Expr b);
    Expr sub(Expr a, Expr b);
    Expr mul(Expr a, Expr b);
    Expr div(Expr a, Expr b);
    Expr matmul(Expr a, Expr b);
    Expr transpose(Expr a);
    Expr exp(Expr a);
    Expr log(Expr a);
    Expr sqrt(Expr a);
    Expr sigmoid(Expr a);
    Expr softplus(Expr a);
    Expr pow(Expr a, double exponent);
    Expr sum(Expr a, int32_t axis = -1, bool keepdims = false);
    Expr mean(Expr a, int32_t axis = -1, bool keepdims = false);
    Expr max(Expr a, int32_t axis = -1, bool keepdims = false);
    Expr logsumexp(Expr a, int32_t axis = -1, bool keepdims = false);
    Expr softmax(Expr a, int32_t axis);
    Expr l2norm(Expr a);
    Expr concat(const std::vector<Expr>& parts, int32_t axis);
    Expr slice(Expr a, int32_t axis, int64_t start, int64_t length);
    Expr gather(Expr a, int32_t axis, std::vector<int64_t> indices);
    // cosine of two 1-D vectors; a zero-norm operand makes the value 0 with
    // zero gradient through both operands.
    Expr cosine(Expr u, Expr v);
    // [n,d] -> [n,n] pairwise cosines. Diagonal entries are the constants
    // 1 (nonzero row) / 0 (zero row) and carry no gradient.
    Expr cosine_matrix(Expr embeddings);
    // [n,d] -> [n,n] inner products, fully differentiable (diagonal included).
    Expr gram_matrix(Expr embeddings);
    // [n,C] logits + labels -> [n] per-token cross-entropy, max-shifted.
    Expr cross_entropy(Expr logits, std::vector<int64_t> labels);

    // Evaluates every node (ancestors or not) so auxiliary heads can be read.
    void forward(const Bindings& bindings);
    // Reverse accumulation from a scalar root; forward() must have run.
    void backward(Expr root);

    const Tensor& value(Expr e) const;
    const Tensor& grad(Expr e) const;
    Tensor input_grad(const std::string& name) const;

    size_t size() const { return nodes_.size(); }
    const Node& node(int32_t id) const { return nodes_[static_cast<size_t>(id)]; }

private:
    friend Tensor evaluate(Expr, const Bindings&);
    friend std::map<std::string, Tensor> gradient(Expr, const Bindings&, const std::vector<std::string>&);

    Expr make(Node n);
    Node& at(Expr e);
    void eval_node(Node& n);
    void backprop_node(int32_t id);
    void bind_inputs(const Bindings& bindings);
    std::vector<char> reachable_from(int32_t root) const;

    std::vector<Node> nodes_;
};

Expr operator+(Expr a, Expr b);
Expr operator-(Expr a, Expr b);
Expr operator*(Expr a, Expr b);
Expr operator/(Expr a, Expr b);

// Forward value of `root` under `bindings`; only ancestors of root are run.
Tensor evaluate(Expr root, const Bindings& bindings);

// d(root)/d(input) for each requested input via reverse accumulation.
std::map<std::string, Tensor> gradient(Expr root, const Bindings& bindings,
                                       const std::vector<std::string>& wrt);

// Central differences (f(x+eps*e_j) - f(x-eps*e_j)) / (2 eps) per coordinate.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& point, double eps);

Tensor one_hot(const std::vector<int64_t>& ids, int64_t depth);

// Shared numeric kernels. logsumexp_stable sorts its operands ascending
// before accumulating, so the result depends only on the operand multiset.
double logsumexp_stable(std::vector<double> values);
// max-shifted per-row cross-entropy, shared by the graph op and the
// immediate loss path
double cross_entropy_row(const double* logits, int64_t classes, int64_t label);
double softplus_value(double x);
double sigmoid_value(double x);

// Count of pairwise-similarity evaluations (one per cosine-matrix entry)
// on this thread since the last reset.
int64_t pairwise_eval_count();
void reset_pairwise_eval_count();
void add_pairwise_evals(int64_t n);

// Pairwise cosines with the diagonal rule above; shared by the graph op and
// the immediate loss path so the two agree bit for bit.
Tensor cosine_matrix_values(const Tensor& embeddings);
Tensor gram_matrix_values(const Tensor& embeddings);

}  // namespace simreg
