// SPDX-License-Identifier: Apache-2.0
#include "ft/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ft/kernels.hpp"

namespace ft {

const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::Input: return "input";
        case OpKind::Param: return "parameter";
        case OpKind::MatMul: return "matmul";
        case OpKind::Add: return "add";
        case OpKind::Relu: return "relu";
        case OpKind::LayerNorm: return "layernorm";
        case OpKind::Softmax: return "softmax";
        case OpKind::Mean: return "mean";
        case OpKind::Scale: return "scale";
        case OpKind::Concat: return "concat";
        case OpKind::CrossEntropy: return "cross-entropy";
        case OpKind::SquaredError: return "squared-error";
        case OpKind::L1Norm: return "l1-norm";
        case OpKind::Sum: return "sum";
    }
    return "?";
}

namespace {

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(op + ": incompatible shapes " + shape_str(a) + " and " +
                                shape_str(b));
}

struct MatMulDims {
    std::size_t batch, m, k, n;
    bool batched_b;  // b carries its own batch axis
};

MatMulDims matmul_dims(const Shape& a, const Shape& b, bool trans_b) {
    MatMulDims d{};
    if (a.size() == 2 && b.size() == 2) {
        d.batch = 1;
        d.m = a[0];
        d.k = a[1];
        d.batched_b = false;
    } else if (a.size() == 3 && (b.size() == 3 || b.size() == 2)) {
        d.batch = a[0];
        d.m = a[1];
        d.k = a[2];
        d.batched_b = b.size() == 3;
        if (d.batched_b && b[0] != d.batch) shape_error("matmul", a, b);
    } else {
        shape_error("matmul", a, b);
    }
    const std::size_t b_rows = d.batched_b ? b[1] : b[b.size() - 2];
    const std::size_t b_cols = d.batched_b ? b[2] : b[b.size() - 1];
    if (trans_b) {
        if (b_cols != d.k) shape_error("matmul", a, b);
        d.n = b_rows;
    } else {
        if (b_rows != d.k) shape_error("matmul", a, b);
        d.n = b_cols;
    }
    return d;
}

}  // namespace

int Graph::push(Node n) {
    for (int arg : n.args) {
        if (arg < 0 || arg >= size()) {
            throw std::invalid_argument("graph: child id out of range");
        }
    }
    nodes_.push_back(std::move(n));
    return size() - 1;
}

const Shape& Graph::shape_of(int id) const { return node(id).shape; }

int Graph::input(std::string name, Shape shape) {
    return push({OpKind::Input, {}, std::move(name), std::move(shape)});
}

int Graph::param(std::string name, Shape shape) {
    return push({OpKind::Param, {}, std::move(name), std::move(shape)});
}

int Graph::matmul(int a, int b, bool trans_b) {
    const MatMulDims d = matmul_dims(shape_of(a), shape_of(b), trans_b);
    Shape out = shape_of(a).size() == 3 ? Shape{d.batch, d.m, d.n} : Shape{d.m, d.n};
    Node n{OpKind::MatMul, {a, b}, "", std::move(out)};
    n.trans_b = trans_b;
    return push(std::move(n));
}

int Graph::add(int a, int b) {
    const Shape& sa = shape_of(a);
    const Shape& sb = shape_of(b);
    if (sa != sb) {
        // Only broadcast allowed: rank-1 bias over the last axis.
        if (!(sb.size() == 1 && sa.size() >= 2 && sa.back() == sb[0])) {
            shape_error("add", sa, sb);
        }
    }
    return push({OpKind::Add, {a, b}, "", sa});
}

int Graph::relu(int a) { return push({OpKind::Relu, {a}, "", shape_of(a)}); }

int Graph::layernorm(int a) {
    if (shape_of(a).empty()) throw std::invalid_argument("layernorm: scalar operand");
    return push({OpKind::LayerNorm, {a}, "", shape_of(a)});
}

int Graph::softmax(int a) {
    if (shape_of(a).empty()) throw std::invalid_argument("softmax: scalar operand");
    return push({OpKind::Softmax, {a}, "", shape_of(a)});
}

int Graph::mean_all(int a) {
    Node n{OpKind::Mean, {a}, "", {}};
    n.axis = -1;
    return push(std::move(n));
}

int Graph::mean_axis(int a, int axis) {
    const Shape& s = shape_of(a);
    if (axis < 0 || static_cast<std::size_t>(axis) >= s.size()) {
        throw std::invalid_argument("mean: axis out of range for " + shape_str(s));
    }
    Shape out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i != static_cast<std::size_t>(axis)) out.push_back(s[i]);
    }
    Node n{OpKind::Mean, {a}, "", std::move(out)};
    n.axis = axis;
    return push(std::move(n));
}

int Graph::scale(int a, double factor) {
    Node n{OpKind::Scale, {a}, "", shape_of(a)};
    n.factor = factor;
    return push(std::move(n));
}

int Graph::concat0(int a, int b) {
    const Shape& sa = shape_of(a);
    const Shape& sb = shape_of(b);
    if (sa.empty() || sa.size() != sb.size() ||
        !std::equal(sa.begin() + 1, sa.end(), sb.begin() + 1)) {
        shape_error("concat", sa, sb);
    }
    Shape out = sa;
    out[0] += sb[0];
    return push({OpKind::Concat, {a, b}, "", std::move(out)});
}

int Graph::cross_entropy(int logits, std::string labels_name) {
    if (shape_of(logits).size() != 2) {
        throw std::invalid_argument("cross-entropy: logits must be rank 2, got " +
                                    shape_str(shape_of(logits)));
    }
    return push({OpKind::CrossEntropy, {logits}, std::move(labels_name), {}});
}

int Graph::squared_error(int a, int b) {
    if (shape_of(a) != shape_of(b)) shape_error("squared-error", shape_of(a), shape_of(b));
    return push({OpKind::SquaredError, {a, b}, "", {}});
}

int Graph::l1_norm(int a) { return push({OpKind::L1Norm, {a}, "", {}}); }

int Graph::sum_all(int a) { return push({OpKind::Sum, {a}, "", {}}); }

const Tensor& Evaluation::value(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= values_.size() || !computed_[id]) {
        throw std::logic_error("evaluation: node value not computed");
    }
    return values_[static_cast<std::size_t>(id)];
}

namespace {

std::vector<char> reachable_from(const Graph& g, std::span<const int> roots) {
    std::vector<char> mark(static_cast<std::size_t>(g.size()), 0);
    std::vector<int> stack(roots.begin(), roots.end());
    while (!stack.empty()) {
        int id = stack.back();
        stack.pop_back();
        if (id < 0 || id >= g.size()) throw std::invalid_argument("graph: node id out of range");
        if (mark[static_cast<std::size_t>(id)]) continue;
        mark[static_cast<std::size_t>(id)] = 1;
        for (int arg : g.node(id).args) stack.push_back(arg);
    }
    return mark;
}

const Tensor& bound_tensor(const Bindings& b, const Node& n) {
    auto it = b.tensors.find(n.name);
    if (it == b.tensors.end()) {
        throw std::runtime_error(std::string("unbound ") + op_name(n.kind) + " leaf '" + n.name +
                                 "'");
    }
    if (it->second.shape != n.shape) {
        throw std::invalid_argument("binding '" + n.name + "': expected " + shape_str(n.shape) +
                                    ", got " + shape_str(it->second.shape));
    }
    return it->second;
}

const std::vector<int>& bound_labels(const Bindings& b, const Node& n, std::size_t rows,
                                     std::size_t classes) {
    auto it = b.labels.find(n.name);
    if (it == b.labels.end()) {
        throw std::runtime_error("unbound label vector '" + n.name + "'");
    }
    if (it->second.size() != rows) {
        throw std::invalid_argument("labels '" + n.name + "': expected " + std::to_string(rows) +
                                    " entries, got " + std::to_string(it->second.size()));
    }
    for (int y : it->second) {
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw std::invalid_argument("labels '" + n.name + "': class index out of range");
        }
    }
    return it->second;
}

// Geometry of a mean over one axis: out[o*inner + i] averages
// in[(o*len + j)*inner + i] over j.
struct AxisGeom {
    std::size_t outer, len, inner;
};

AxisGeom axis_geom(const Shape& s, int axis) {
    AxisGeom g{1, s[static_cast<std::size_t>(axis)], 1};
    for (int i = 0; i < axis; ++i) g.outer *= s[static_cast<std::size_t>(i)];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) g.inner *= s[i];
    return g;
}

double logsumexp_row(const double* z, std::size_t c) {
    double mx = z[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(z[j] - mx);
    return mx + std::log(s);
}

Tensor forward_node(const Graph& g, int id, const std::vector<Tensor>& values,
                    const Bindings& b) {
    const Node& n = g.node(id);
    auto arg = [&](int i) -> const Tensor& { return values[static_cast<std::size_t>(n.args[static_cast<std::size_t>(i)])]; };
    switch (n.kind) {
        case OpKind::Input:
        case OpKind::Param:
            return bound_tensor(b, n);
        case OpKind::MatMul: {
            const Tensor& A = arg(0);
            const Tensor& B = arg(1);
            const MatMulDims d = matmul_dims(A.shape, B.shape, n.trans_b);
            Tensor out(n.shape);
            if (A.rank() == 2) {
                kernels::matmul(A.data.data(), B.data.data(), out.data.data(), d.m, d.k, d.n,
                                false, n.trans_b);
            } else if (d.batched_b) {
                kernels::batched_matmul(A.data.data(), B.data.data(), out.data.data(), d.batch,
                                        d.m, d.k, d.n, false, n.trans_b);
            } else {
                // 3-D x 2-D: flatten the batch into rows.
                kernels::matmul(A.data.data(), B.data.data(), out.data.data(), d.batch * d.m,
                                d.k, d.n, false, n.trans_b);
            }
            return out;
        }
        case OpKind::Add: {
            const Tensor& A = arg(0);
            const Tensor& B = arg(1);
            Tensor out(n.shape);
            if (A.shape == B.shape) {
                kernels::add(A.data.data(), B.data.data(), out.data.data(), A.numel());
            } else {
                const std::size_t cols = B.numel();
                kernels::add_row_bias(A.data.data(), B.data.data(), out.data.data(),
                                      A.numel() / cols, cols);
            }
            return out;
        }
        case OpKind::Relu: {
            const Tensor& X = arg(0);
            Tensor out(n.shape);
            kernels::relu(X.data.data(), out.data.data(), X.numel());
            return out;
        }
        case OpKind::LayerNorm: {
            const Tensor& X = arg(0);
            Tensor out(n.shape);
            const std::size_t cols = X.shape.back();
            kernels::row_layernorm(X.data.data(), out.data.data(), X.numel() / cols, cols,
                                   Graph::kLayerNormEps);
            return out;
        }
        case OpKind::Softmax: {
            const Tensor& X = arg(0);
            Tensor out(n.shape);
            const std::size_t cols = X.shape.back();
            kernels::row_softmax(X.data.data(), out.data.data(), X.numel() / cols, cols);
            return out;
        }
        case OpKind::Mean: {
            const Tensor& X = arg(0);
            if (n.axis < 0) {
                double s = 0.0;
                for (double v : X.data) s += v;
                return Tensor::scalar(s / static_cast<double>(X.numel()));
            }
            const AxisGeom geom = axis_geom(X.shape, n.axis);
            Tensor out(n.shape);
            for (std::size_t o = 0; o < geom.outer; ++o) {
                for (std::size_t i = 0; i < geom.inner; ++i) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < geom.len; ++j) {
                        s += X.data[(o * geom.len + j) * geom.inner + i];
                    }
                    out.data[o * geom.inner + i] = s / static_cast<double>(geom.len);
                }
            }
            return out;
        }
        case OpKind::Scale: {
            const Tensor& X = arg(0);
            Tensor out(n.shape);
            for (std::size_t i = 0; i < X.numel(); ++i) out.data[i] = n.factor * X.data[i];
            return out;
        }
        case OpKind::Concat: {
            const Tensor& A = arg(0);
            const Tensor& B = arg(1);
            Tensor out(n.shape);
            std::copy(A.data.begin(), A.data.end(), out.data.begin());
            std::copy(B.data.begin(), B.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(A.numel()));
            return out;
        }
        case OpKind::CrossEntropy: {
            const Tensor& Z = arg(0);
            const std::size_t rows = Z.shape[0];
            const std::size_t classes = Z.shape[1];
            const std::vector<int>& y = bound_labels(b, n, rows, classes);
            double loss = 0.0;
            for (std::size_t r = 0; r < rows; ++r) {
                const double* z = Z.data.data() + r * classes;
                loss += logsumexp_row(z, classes) - z[static_cast<std::size_t>(y[r])];
            }
            return Tensor::scalar(loss / static_cast<double>(rows));
        }
        case OpKind::SquaredError: {
            const Tensor& A = arg(0);
            const Tensor& B = arg(1);
            double s = 0.0;
            for (std::size_t i = 0; i < A.numel(); ++i) {
                const double d = A.data[i] - B.data[i];
                s += d * d;
            }
            return Tensor::scalar(s);
        }
        case OpKind::L1Norm: {
            const Tensor& X = arg(0);
            double s = 0.0;
            for (double v : X.data) s += std::fabs(v);
            return Tensor::scalar(s);
        }
        case OpKind::Sum: {
            const Tensor& X = arg(0);
            double s = 0.0;
            for (double v : X.data) s += v;
            return Tensor::scalar(s);
        }
    }
    throw std::logic_error("forward: unknown op");
}

std::vector<Tensor> forward_all(const Graph& g, const std::vector<char>& needed,
                                const Bindings& b) {
    std::vector<Tensor> values(static_cast<std::size_t>(g.size()));
    for (int id = 0; id < g.size(); ++id) {
        if (!needed[static_cast<std::size_t>(id)]) continue;
        Tensor v = forward_node(g, id, values, b);
        if (!v.all_finite()) {
            throw std::runtime_error(std::string("non-finite result in ") +
                                     op_name(g.node(id).kind) + " node " + std::to_string(id));
        }
        values[static_cast<std::size_t>(id)] = std::move(v);
    }
    return values;
}

}  // namespace

Evaluation evaluate_nodes(const Graph& g, std::span<const int> roots, const Bindings& b) {
    std::vector<char> needed = reachable_from(g, roots);
    std::vector<Tensor> values = forward_all(g, needed, b);
    return Evaluation(std::move(values), std::move(needed));
}

Tensor evaluate(const Graph& g, int root, const Bindings& b) {
    const int roots[] = {root};
    return evaluate_nodes(g, roots, b).value(root);
}

namespace {

// Accumulates dL/d(child) contributions. go is the gradient at the parent.
void backward_node(const Graph& g, int id, const std::vector<Tensor>& values,
                   const Tensor& go, const Bindings& b, std::vector<Tensor>& grads,
                   const std::vector<char>& wants_grad) {
    const Node& n = g.node(id);
    auto val = [&](int i) -> const Tensor& {
        return values[static_cast<std::size_t>(n.args[static_cast<std::size_t>(i)])];
    };
    auto sink = [&](int i) -> Tensor* {
        const int child = n.args[static_cast<std::size_t>(i)];
        if (!wants_grad[static_cast<std::size_t>(child)]) return nullptr;
        Tensor& t = grads[static_cast<std::size_t>(child)];
        if (t.numel() == 0 && !g.node(child).shape.empty()) t = Tensor(g.node(child).shape);
        if (t.numel() == 0 && g.node(child).shape.empty()) t = Tensor::scalar(0.0);
        return &t;
    };

    switch (n.kind) {
        case OpKind::Input:
        case OpKind::Param:
            return;
        case OpKind::MatMul: {
            const Tensor& A = val(0);
            const Tensor& B = val(1);
            const MatMulDims d = matmul_dims(A.shape, B.shape, n.trans_b);
            Tensor* da = sink(0);
            Tensor* db = sink(1);
            auto accumulate = [](Tensor* dst, const std::vector<double>& src) {
                for (std::size_t i = 0; i < src.size(); ++i) dst->data[i] += src[i];
            };
            if (A.rank() == 2 || !d.batched_b) {
                // 2-D, and 3-D x 2-D handled as one flattened 2-D product.
                const std::size_t rows = d.batch * d.m;
                if (da) {
                    std::vector<double> tmp(rows * d.k);
                    if (n.trans_b) {
                        kernels::matmul(go.data.data(), B.data.data(), tmp.data(), rows, d.n,
                                        d.k, false, false);
                    } else {
                        kernels::matmul(go.data.data(), B.data.data(), tmp.data(), rows, d.n,
                                        d.k, false, true);
                    }
                    accumulate(da, tmp);
                }
                if (db) {
                    std::vector<double> tmp(B.numel());
                    if (n.trans_b) {
                        kernels::matmul(go.data.data(), A.data.data(), tmp.data(), d.n, rows,
                                        d.k, true, false);
                    } else {
                        kernels::matmul(A.data.data(), go.data.data(), tmp.data(), d.k, rows,
                                        d.n, true, false);
                    }
                    accumulate(db, tmp);
                }
            } else {
                if (da) {
                    std::vector<double> tmp(A.numel());
                    if (n.trans_b) {
                        kernels::batched_matmul(go.data.data(), B.data.data(), tmp.data(),
                                                d.batch, d.m, d.n, d.k, false, false);
                    } else {
                        kernels::batched_matmul(go.data.data(), B.data.data(), tmp.data(),
                                                d.batch, d.m, d.n, d.k, false, true);
                    }
                    accumulate(da, tmp);
                }
                if (db) {
                    std::vector<double> tmp(B.numel());
                    if (n.trans_b) {
                        kernels::batched_matmul(go.data.data(), A.data.data(), tmp.data(),
                                                d.batch, d.n, d.m, d.k, true, false);
                    } else {
                        kernels::batched_matmul(A.data.data(), go.data.data(), tmp.data(),
                                                d.batch, d.k, d.m, d.n, true, false);
                    }
                    accumulate(db, tmp);
                }
            }
            return;
        }
        case OpKind::Add: {
            const Tensor& A = val(0);
            const Tensor& B = val(1);
            if (Tensor* da = sink(0)) {
                for (std::size_t i = 0; i < A.numel(); ++i) da->data[i] += go.data[i];
            }
            if (Tensor* db = sink(1)) {
                if (A.shape == B.shape) {
                    for (std::size_t i = 0; i < B.numel(); ++i) db->data[i] += go.data[i];
                } else {
                    const std::size_t cols = B.numel();
                    const std::size_t rows = A.numel() / cols;
                    for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t j = 0; j < cols; ++j) {
                            db->data[j] += go.data[r * cols + j];
                        }
                    }
                }
            }
            return;
        }
        case OpKind::Relu: {
            const Tensor& X = val(0);
            if (Tensor* dx = sink(0)) {
                // Subgradient at exactly 0 is 0.
                for (std::size_t i = 0; i < X.numel(); ++i) {
                    if (X.data[i] > 0.0) dx->data[i] += go.data[i];
                }
            }
            return;
        }
        case OpKind::LayerNorm: {
            const Tensor& X = val(0);
            const Tensor& Y = values[static_cast<std::size_t>(id)];
            if (Tensor* dx = sink(0)) {
                const std::size_t cols = X.shape.back();
                const std::size_t rows = X.numel() / cols;
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* x = X.data.data() + r * cols;
                    const double* y = Y.data.data() + r * cols;
                    const double* dy = go.data.data() + r * cols;
                    double mean = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) mean += x[j];
                    mean /= static_cast<double>(cols);
                    double var = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) {
                        const double dcent = x[j] - mean;
                        var += dcent * dcent;
                    }
                    var /= static_cast<double>(cols);
                    const double inv = 1.0 / std::sqrt(var + Graph::kLayerNormEps);
                    double mean_dy = 0.0, mean_dyy = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) {
                        mean_dy += dy[j];
                        mean_dyy += dy[j] * y[j];
                    }
                    mean_dy /= static_cast<double>(cols);
                    mean_dyy /= static_cast<double>(cols);
                    double* out = dx->data.data() + r * cols;
                    for (std::size_t j = 0; j < cols; ++j) {
                        out[j] += inv * (dy[j] - mean_dy - y[j] * mean_dyy);
                    }
                }
            }
            return;
        }
        case OpKind::Softmax: {
            const Tensor& Y = values[static_cast<std::size_t>(id)];
            if (Tensor* dx = sink(0)) {
                const std::size_t cols = Y.shape.back();
                const std::size_t rows = Y.numel() / cols;
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* y = Y.data.data() + r * cols;
                    const double* dy = go.data.data() + r * cols;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) dot += dy[j] * y[j];
                    double* out = dx->data.data() + r * cols;
                    for (std::size_t j = 0; j < cols; ++j) out[j] += y[j] * (dy[j] - dot);
                }
            }
            return;
        }
        case OpKind::Mean: {
            const Tensor& X = val(0);
            if (Tensor* dx = sink(0)) {
                if (n.axis < 0) {
                    const double gshare = go.data[0] / static_cast<double>(X.numel());
                    for (std::size_t i = 0; i < X.numel(); ++i) dx->data[i] += gshare;
                } else {
                    const AxisGeom geom = axis_geom(X.shape, n.axis);
                    const double invlen = 1.0 / static_cast<double>(geom.len);
                    for (std::size_t o = 0; o < geom.outer; ++o) {
                        for (std::size_t j = 0; j < geom.len; ++j) {
                            for (std::size_t i = 0; i < geom.inner; ++i) {
                                dx->data[(o * geom.len + j) * geom.inner + i] +=
                                    go.data[o * geom.inner + i] * invlen;
                            }
                        }
                    }
                }
            }
            return;
        }
        case OpKind::Scale: {
            if (Tensor* dx = sink(0)) {
                for (std::size_t i = 0; i < dx->numel(); ++i) {
                    dx->data[i] += n.factor * go.data[i];
                }
            }
            return;
        }
        case OpKind::Concat: {
            const Tensor& A = val(0);
            if (Tensor* da = sink(0)) {
                for (std::size_t i = 0; i < A.numel(); ++i) da->data[i] += go.data[i];
            }
            if (Tensor* db = sink(1)) {
                const std::size_t off = A.numel();
                for (std::size_t i = 0; i < db->numel(); ++i) db->data[i] += go.data[off + i];
            }
            return;
        }
        case OpKind::CrossEntropy: {
            const Tensor& Z = val(0);
            if (Tensor* dz = sink(0)) {
                const std::size_t rows = Z.shape[0];
                const std::size_t classes = Z.shape[1];
                const std::vector<int>& y = bound_labels(b, n, rows, classes);
                const double gshare = go.data[0] / static_cast<double>(rows);
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* z = Z.data.data() + r * classes;
                    const double lse = logsumexp_row(z, classes);
                    double* out = dz->data.data() + r * classes;
                    for (std::size_t j = 0; j < classes; ++j) {
                        double p = std::exp(z[j] - lse);
                        out[j] += gshare * (p - (static_cast<std::size_t>(y[r]) == j ? 1.0 : 0.0));
                    }
                }
            }
            return;
        }
        case OpKind::SquaredError: {
            const Tensor& A = val(0);
            const Tensor& B = val(1);
            Tensor* da = sink(0);
            Tensor* db = sink(1);
            const double g2 = 2.0 * go.data[0];
            for (std::size_t i = 0; i < A.numel(); ++i) {
                const double diff = A.data[i] - B.data[i];
                if (da) da->data[i] += g2 * diff;
                if (db) db->data[i] -= g2 * diff;
            }
            return;
        }
        case OpKind::L1Norm: {
            const Tensor& X = val(0);
            if (Tensor* dx = sink(0)) {
                // sign(0) = 0.
                for (std::size_t i = 0; i < X.numel(); ++i) {
                    if (X.data[i] > 0.0) dx->data[i] += go.data[0];
                    else if (X.data[i] < 0.0) dx->data[i] -= go.data[0];
                }
            }
            return;
        }
        case OpKind::Sum: {
            if (Tensor* dx = sink(0)) {
                for (std::size_t i = 0; i < dx->numel(); ++i) dx->data[i] += go.data[0];
            }
            return;
        }
    }
}

}  // namespace

BackwardResult value_and_gradient(const Graph& g, int root, const Bindings& b,
                                  const std::set<std::string>& wrt) {
    const int roots[] = {root};
    const std::vector<char> needed = reachable_from(g, roots);
    const std::vector<Tensor> values = forward_all(g, needed, b);
    const Tensor& out = values[static_cast<std::size_t>(root)];
    if (out.numel() != 1) {
        throw std::invalid_argument("gradient: root must be scalar, got " +
                                    shape_str(out.shape));
    }

    // A node wants a gradient iff some requested parameter lies below it.
    std::vector<char> wants(static_cast<std::size_t>(g.size()), 0);
    for (int id = 0; id < g.size(); ++id) {
        const Node& n = g.node(id);
        if (n.kind == OpKind::Param && wrt.count(n.name)) {
            wants[static_cast<std::size_t>(id)] = 1;
            continue;
        }
        for (int arg : n.args) {
            if (wants[static_cast<std::size_t>(arg)]) {
                wants[static_cast<std::size_t>(id)] = 1;
                break;
            }
        }
    }
    for (const std::string& name : wrt) {
        bool present = false;
        for (int id = 0; id < g.size(); ++id) {
            if (g.node(id).kind == OpKind::Param && g.node(id).name == name) {
                present = true;
                break;
            }
        }
        if (!present) throw std::invalid_argument("gradient: unknown parameter '" + name + "'");
    }

    std::vector<Tensor> grads(static_cast<std::size_t>(g.size()));
    if (wants[static_cast<std::size_t>(root)] && needed[static_cast<std::size_t>(root)]) {
        grads[static_cast<std::size_t>(root)] = Tensor::scalar(1.0);
        for (int id = root; id >= 0; --id) {
            if (!needed[static_cast<std::size_t>(id)] || !wants[static_cast<std::size_t>(id)]) {
                continue;
            }
            const Tensor& go = grads[static_cast<std::size_t>(id)];
            if (go.numel() == 0) continue;  // no gradient flowed here
            backward_node(g, id, values, go, b, grads, wants);
        }
    }

    BackwardResult result;
    result.value = out.data[0];
    for (const std::string& name : wrt) {
        // Several Param nodes may share one name (one tensor bound to all);
        // their contributions add.
        Tensor acc;
        for (int id = 0; id < g.size(); ++id) {
            const Node& n = g.node(id);
            if (n.kind != OpKind::Param || n.name != name) continue;
            if (acc.numel() == 0) acc = Tensor(n.shape);
            const Tensor& gpart = grads[static_cast<std::size_t>(id)];
            if (gpart.numel() == 0) continue;
            for (std::size_t i = 0; i < acc.numel(); ++i) acc.data[i] += gpart.data[i];
        }
        result.grads.emplace(name, std::move(acc));
    }
    return result;
}

std::map<std::string, Tensor> gradient(const Graph& g, int root, const Bindings& b,
                                       const std::set<std::string>& wrt) {
    return value_and_gradient(g, root, b, wrt).grads;
}

double finite_difference_check(const Graph& g, int root, const Bindings& b,
                               const std::set<std::string>& wrt, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("finite_difference_check: eps must be positive");
    const BackwardResult analytic = value_and_gradient(g, root, b, wrt);

    Bindings probe = b;
    double max_rel = 0.0;
    for (const auto& [name, grad] : analytic.grads) {
        Tensor& t = probe.tensors.at(name);
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double saved = t.data[i];
            t.data[i] = saved + eps;
            const double fplus = evaluate(g, root, probe).data[0];
            t.data[i] = saved - eps;
            const double fminus = evaluate(g, root, probe).data[0];
            t.data[i] = saved;
            const double fd = (fplus - fminus) / (2.0 * eps);
            const double an = grad.data[i];
            const double rel = std::fabs(fd - an) / std::max(1.0, std::fabs(an));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace ft
