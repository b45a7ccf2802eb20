// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ft/tensor.hpp"

namespace ft {

// Node kinds of the expression graph. The graph is an arena: children are
// created before parents, so node-id order is already topological.
enum class OpKind {
    Input,
    Param,
    MatMul,
    Add,
    Relu,
    LayerNorm,
    Softmax,
    Mean,
    Scale,
    Concat,
    CrossEntropy,
    SquaredError,
    L1Norm,
    Sum,
};

const char* op_name(OpKind kind);

struct Node {
    OpKind kind;
    std::vector<int> args;
    std::string name;     // binding name for Input/Param; label binding for CrossEntropy
    Shape shape;          // inferred at construction
    double factor = 1.0;  // Scale
    bool trans_b = false; // MatMul
    int axis = -1;        // Mean: -1 means all axes
};

// Values bound to graph leaves for one evaluation. Tensors feed Input and
// Param nodes; labels feed CrossEntropy nodes.
struct Bindings {
    std::map<std::string, Tensor> tensors;
    std::map<std::string, std::vector<int>> labels;
};

// Immutable-after-construction expression graph. Shapes are checked as
// nodes are added; evaluation caches are per call, so a built graph can be
// shared read-only across threads.
class Graph {
public:
    int input(std::string name, Shape shape);
    int param(std::string name, Shape shape);

    // 2-D a[m,k] x b[k,n] -> [m,n]; 3-D a[B,m,k] with matching 3-D b or a
    // shared 2-D b. trans_b reads b as its transpose ([n,k] storage).
    int matmul(int a, int b, bool trans_b = false);

    // Same-shape elementwise add, or bias add of a rank-1 tensor over rows.
    int add(int a, int b);
    int relu(int a);
    int layernorm(int a);  // last axis, eps 1e-5
    int softmax(int a);    // last axis
    int mean_all(int a);
    int mean_axis(int a, int axis);
    int scale(int a, double factor);
    int concat0(int a, int b);

    // Mean over rows of (logsumexp(row) - row[label]); labels are bound by
    // name at evaluation time.
    int cross_entropy(int logits, std::string labels_name);

    // Total sum of squared differences (no mean).
    int squared_error(int a, int b);
    int l1_norm(int a);
    int sum_all(int a);

    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    int size() const { return static_cast<int>(nodes_.size()); }

    static constexpr double kLayerNormEps = 1e-5;

private:
    int push(Node n);
    const Shape& shape_of(int id) const;

    std::vector<Node> nodes_;
};

// Forward values for a set of requested roots (and their ancestors).
class Evaluation {
public:
    Evaluation(std::vector<Tensor> values, std::vector<char> computed)
        : values_(std::move(values)), computed_(std::move(computed)) {}

    const Tensor& value(int id) const;

private:
    std::vector<Tensor> values_;
    std::vector<char> computed_;
};

Evaluation evaluate_nodes(const Graph& g, std::span<const int> roots, const Bindings& b);

// Forward value of a single node.
Tensor evaluate(const Graph& g, int root, const Bindings& b);

struct BackwardResult {
    double value = 0.0;
    std::map<std::string, Tensor> grads;
};

// Reverse-mode gradient of a scalar root with respect to the named
// parameters. Accumulation follows node-id order, so results are
// bit-deterministic.
BackwardResult value_and_gradient(const Graph& g, int root, const Bindings& b,
                                  const std::set<std::string>& wrt);

std::map<std::string, Tensor> gradient(const Graph& g, int root, const Bindings& b,
                                       const std::set<std::string>& wrt);

// Central-difference check of the analytic gradient. Returns the max
// relative error over every coordinate, with denominator max(1, |analytic|).
double finite_difference_check(const Graph& g, int root, const Bindings& b,
                               const std::set<std::string>& wrt, double eps);

}  // namespace ft
