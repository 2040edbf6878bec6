#include "sadcoeff/nn.hpp"

#include "sadcoeff/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <type_traits>
#include <unordered_set>

namespace sadcoeff::nn {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// `msg` is a string or a callable producing one; callables keep the happy
// path free of string formatting.
template <class Msg>
void require(bool ok, Msg&& msg) {
    if (ok) return;
    if constexpr (std::is_invocable_v<Msg>) {
        throw InvalidArgument(msg());
    } else {
        throw InvalidArgument(std::string(msg));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw InvalidArgument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                              shape_string(b.shape()));
    }
}

void require_rank(const Tensor& a, std::size_t r, const char* op) {
    if (a.rank() != r) {
        throw InvalidArgument(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                              shape_string(a.shape()));
    }
}

// Elementwise unary op with derivative given as a function of (input, output).
template <class F, class D>
Tensor unary(const Tensor& a, F f, D dfdx) {
    std::vector<double> out(a.size());
    const auto& x = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
    Node* pa = &a.node();
    return make_op(a.shape(), std::move(out), {a}, [pa, dfdx](Node& self) {
        if (!pa->requires_grad) return;
        auto& g = pa->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(pa->value[i], self.value[i]);
    });
}

}  // namespace

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

std::vector<double>& Node::grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
    if (numel(shape) != values.size()) {
        throw InvalidArgument("Tensor: " + std::to_string(values.size()) + " values for shape " + shape_string(shape));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape) {
    std::vector<double> v(numel(shape), 0.0);
    return constant(std::move(shape), std::move(v));
}

Tensor Tensor::scalar(double v) { return constant({1}, {v}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
    Tensor t = constant(std::move(shape), std::move(values));
    t.node().requires_grad = true;
    t.node().grad_buffer();
    return t;
}

void Tensor::zero_grad() { std::fill(node_->grad_buffer().begin(), node_->grad_buffer().end(), 0.0); }

double Tensor::item() const {
    if (size() != 1) throw InvalidArgument("Tensor::item on tensor of shape " + shape_string(shape()));
    return node_->value[0];
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
               std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    if (g_grad_enabled) {
        const bool needs = std::any_of(parents.begin(), parents.end(),
                                       [](const Tensor& p) { return p.defined() && p.requires_grad(); });
        if (needs) {
            n->requires_grad = true;
            for (auto& p : parents) {
                if (p.defined()) n->parents.push_back(p.node_ptr());
            }
            n->backward = std::move(backward);
        }
    }
    return Tensor(std::move(n));
}

void backward(const Tensor& loss) {
    if (loss.size() != 1) throw InvalidArgument("backward: loss must be a scalar");
    if (!loss.requires_grad()) return;
    // Iterative post-order DFS for the topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{&loss.node(), 0}};
    visited.insert(&loss.node());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss.node().grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

// ---- elementwise ------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
    Node* pa = &a.node();
    Node* pb = &b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [pa, pb](Node& self) {
        for (Node* p : {pa, pb}) {
            if (!p->requires_grad) continue;
            auto& g = p->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
    Node* pa = &a.node();
    Node* pb = &b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [pa, pb](Node& self) {
        if (pa->requires_grad) {
            auto& g = pa->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            auto& g = pb->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
    Node* pa = &a.node();
    Node* pb = &b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [pa, pb](Node& self) {
        if (pa->requires_grad) {
            auto& g = pa->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            auto& g = pb->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
    return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
    return unary(
        a, [slope](double x) { return x > 0.0 ? x : slope * x; },
        [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor tanh(const Tensor& a) {
    return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor square(const Tensor& a) {
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor abs(const Tensor& a) {
    return unary(
        a, [](double x) { return std::abs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    return unary(
        a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    Node* pa = &a.node();
    return make_op({1}, {s}, {a}, [pa](Node& self) {
        auto& g = pa->grad_buffer();
        for (double& v : g) v += self.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw InvalidArgument("mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor weighted_sum(const std::vector<std::pair<double, Tensor>>& terms) {
    double s = 0.0;
    std::vector<Tensor> parents;
    std::vector<std::pair<double, Node*>> nodes;
    for (const auto& [w, t] : terms) {
        if (t.size() != 1) throw InvalidArgument("weighted_sum: terms must be scalars");
        s += w * t.item();
        parents.push_back(t);
        nodes.emplace_back(w, &t.node());
    }
    return make_op({1}, {s}, parents, [nodes](Node& self) {
        for (const auto& [w, p] : nodes) {
            if (p->requires_grad) p->grad_buffer()[0] += w * self.grad[0];
        }
    });
}

// ---- shape ----------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size()) {
        throw InvalidArgument("reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
    }
    Node* pa = &a.node();
    return make_op(std::move(shape), a.values(), {a}, [pa](Node& self) {
        auto& g = pa->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor transpose_last2(const Tensor& a) {
    require_rank(a, 3, "transpose_last2");
    const int n = a.dim(0), r = a.dim(1), c = a.dim(2);
    std::vector<double> out(a.size());
    for (int k = 0; k < n; ++k) {
        const std::size_t base = static_cast<std::size_t>(k) * r * c;
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) out[base + static_cast<std::size_t>(j) * r + i] = a.at(base + static_cast<std::size_t>(i) * c + j);
    }
    Node* pa = &a.node();
    return make_op({n, c, r}, std::move(out), {a}, [pa, n, r, c](Node& self) {
        auto& g = pa->grad_buffer();
        for (int k = 0; k < n; ++k) {
            const std::size_t base = static_cast<std::size_t>(k) * r * c;
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) g[base + static_cast<std::size_t>(i) * c + j] += self.grad[base + static_cast<std::size_t>(j) * r + i];
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    const int rows = parts[0].dim(0);
    int cols = 0;
    for (const auto& p : parts) {
        require_rank(p, 2, "concat_cols");
        require(p.dim(0) == rows, "concat_cols: row count mismatch");
        cols += p.dim(1);
    }
    std::vector<double> out(static_cast<std::size_t>(rows) * cols);
    std::vector<std::pair<Node*, int>> nodes;
    int offset = 0;
    for (const auto& p : parts) {
        const int pc = p.dim(1);
        for (int r = 0; r < rows; ++r)
            std::copy_n(p.values().begin() + static_cast<std::ptrdiff_t>(r) * pc, pc,
                        out.begin() + static_cast<std::ptrdiff_t>(r) * cols + offset);
        nodes.emplace_back(&p.node(), offset);
        offset += pc;
    }
    return make_op({rows, cols}, std::move(out), parts, [nodes, rows, cols](Node& self) {
        for (const auto& [p, off] : nodes) {
            if (!p->requires_grad) continue;
            const int pc = p->shape[1];
            auto& g = p->grad_buffer();
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < pc; ++c) g[static_cast<std::size_t>(r) * pc + c] += self.grad[static_cast<std::size_t>(r) * cols + off + c];
        }
    });
}

Tensor select_cols(const Tensor& a, const std::vector<int>& cols) {
    require_rank(a, 2, "select_cols");
    const int rows = a.dim(0), in_cols = a.dim(1);
    const int out_cols = static_cast<int>(cols.size());
    for (int c : cols) require(c >= 0 && c < in_cols, "select_cols: index out of range");
    std::vector<double> out(static_cast<std::size_t>(rows) * out_cols);
    for (int r = 0; r < rows; ++r)
        for (int j = 0; j < out_cols; ++j) out[static_cast<std::size_t>(r) * out_cols + j] = a.at(static_cast<std::size_t>(r) * in_cols + cols[j]);
    Node* pa = &a.node();
    return make_op({rows, out_cols}, std::move(out), {a}, [pa, cols, rows, in_cols, out_cols](Node& self) {
        auto& g = pa->grad_buffer();
        for (int r = 0; r < rows; ++r)
            for (int j = 0; j < out_cols; ++j) g[static_cast<std::size_t>(r) * in_cols + cols[j]] += self.grad[static_cast<std::size_t>(r) * out_cols + j];
    });
}

Tensor slice_cols(const Tensor& a, int begin, int count) {
    std::vector<int> cols(count);
    std::iota(cols.begin(), cols.end(), begin);
    return select_cols(a, cols);
}

Tensor slice_rows(const Tensor& a, int begin, int count) {
    require(a.rank() >= 1 && begin >= 0 && begin + count <= a.dim(0), "slice_rows: out of range");
    const std::size_t row = a.size() / static_cast<std::size_t>(a.dim(0));
    Shape shape = a.shape();
    shape[0] = count;
    std::vector<double> out(a.values().begin() + static_cast<std::ptrdiff_t>(begin * row),
                            a.values().begin() + static_cast<std::ptrdiff_t>((begin + count) * row));
    Node* pa = &a.node();
    return make_op(std::move(shape), std::move(out), {a}, [pa, begin, row](Node& self) {
        auto& g = pa->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * row + i] += self.grad[i];
    });
}

Tensor repeat_rows(const Tensor& a, int times) {
    require_rank(a, 2, "repeat_rows");
    const int rows = a.dim(0), cols = a.dim(1);
    std::vector<double> out(static_cast<std::size_t>(rows) * times * cols);
    for (int r = 0; r < rows; ++r)
        for (int k = 0; k < times; ++k)
            std::copy_n(a.values().begin() + static_cast<std::ptrdiff_t>(r) * cols, cols,
                        out.begin() + (static_cast<std::ptrdiff_t>(r) * times + k) * cols);
    Node* pa = &a.node();
    return make_op({rows * times, cols}, std::move(out), {a}, [pa, rows, cols, times](Node& self) {
        auto& g = pa->grad_buffer();
        for (int r = 0; r < rows; ++r)
            for (int k = 0; k < times; ++k)
                for (int c = 0; c < cols; ++c)
                    g[static_cast<std::size_t>(r) * cols + c] += self.grad[(static_cast<std::size_t>(r) * times + k) * cols + c];
    });
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
    require_rank(a, 2, "add_rowvec");
    const int rows = a.dim(0), cols = a.dim(1);
    require(static_cast<int>(v.size()) == cols, "add_rowvec: width mismatch");
    std::vector<double> out(a.values());
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) out[static_cast<std::size_t>(r) * cols + c] += v.at(c);
    Node* pa = &a.node();
    Node* pv = &v.node();
    return make_op(a.shape(), std::move(out), {a, v}, [pa, pv, rows, cols](Node& self) {
        if (pa->requires_grad) {
            auto& g = pa->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pv->requires_grad) {
            auto& g = pv->grad_buffer();
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) g[c] += self.grad[static_cast<std::size_t>(r) * cols + c];
        }
    });
}

// ---- linear algebra -----------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    require(b.dim(0) == k, [&] {
        return "matmul: inner dimension mismatch " + shape_string(a.shape()) + " x " + shape_string(b.shape());
    });
    std::vector<double> out(static_cast<std::size_t>(m) * n);
    MapMat(out.data(), m, n).noalias() = ConstMapMat(a.data().data(), m, k) * ConstMapMat(b.data().data(), k, n);
    Node* pa = &a.node();
    Node* pb = &b.node();
    return make_op({m, n}, std::move(out), {a, b}, [pa, pb, m, k, n](Node& self) {
        ConstMapMat g(self.grad.data(), m, n);
        if (pa->requires_grad) {
            MapMat(pa->grad_buffer().data(), m, k).noalias() += g * ConstMapMat(pb->value.data(), k, n).transpose();
        }
        if (pb->requires_grad) {
            MapMat(pb->grad_buffer().data(), k, n).noalias() += ConstMapMat(pa->value.data(), m, k).transpose() * g;
        }
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul_nt");
    require_rank(b, 2, "matmul_nt");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    require(b.dim(1) == k, [&] {
        return "matmul_nt: inner dimension mismatch " + shape_string(a.shape()) + " x " + shape_string(b.shape()) + "^T";
    });
    std::vector<double> out(static_cast<std::size_t>(m) * n);
    MapMat(out.data(), m, n).noalias() =
        ConstMapMat(a.data().data(), m, k) * ConstMapMat(b.data().data(), n, k).transpose();
    Node* pa = &a.node();
    Node* pb = &b.node();
    return make_op({m, n}, std::move(out), {a, b}, [pa, pb, m, k, n](Node& self) {
        ConstMapMat g(self.grad.data(), m, n);
        if (pa->requires_grad) {
            MapMat(pa->grad_buffer().data(), m, k).noalias() += g * ConstMapMat(pb->value.data(), n, k);
        }
        if (pb->requires_grad) {
            MapMat(pb->grad_buffer().data(), n, k).noalias() += g.transpose() * ConstMapMat(pa->value.data(), m, k);
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor y = matmul_nt(x, w);
    return b.defined() ? add_rowvec(y, b) : y;
}

namespace {

struct ConvGeom {
    int n, c, h, w, o, kh, kw, ho, wo;
    Conv2dSpec s;
    int ckk() const { return c * kh * kw; }
    int cols() const { return n * ho * wo; }
};

// cols[(ci*kh + i)*kw + j, (b*ho + y)*wo + x] = x[b, ci, y*sh - ph + i, x*sw - pw + j]
void im2col(const ConvGeom& g, const double* x, double* cols) {
    const int ncols = g.cols();
    for (int ci = 0; ci < g.c; ++ci)
        for (int i = 0; i < g.kh; ++i)
            for (int j = 0; j < g.kw; ++j) {
                double* row = cols + static_cast<std::size_t>((ci * g.kh + i) * g.kw + j) * ncols;
                for (int b = 0; b < g.n; ++b) {
                    const double* xp = x + (static_cast<std::size_t>(b) * g.c + ci) * g.h * g.w;
                    for (int y = 0; y < g.ho; ++y) {
                        const int iy = y * g.s.stride_h - g.s.pad_h + i;
                        double* dst = row + (static_cast<std::size_t>(b) * g.ho + y) * g.wo;
                        if (iy < 0 || iy >= g.h) {
                            std::fill_n(dst, g.wo, 0.0);
                            continue;
                        }
                        for (int xo = 0; xo < g.wo; ++xo) {
                            const int ix = xo * g.s.stride_w - g.s.pad_w + j;
                            dst[xo] = (ix < 0 || ix >= g.w) ? 0.0 : xp[static_cast<std::size_t>(iy) * g.w + ix];
                        }
                    }
                }
            }
}

void col2im(const ConvGeom& g, const double* cols, double* dx) {
    const int ncols = g.cols();
    for (int ci = 0; ci < g.c; ++ci)
        for (int i = 0; i < g.kh; ++i)
            for (int j = 0; j < g.kw; ++j) {
                const double* row = cols + static_cast<std::size_t>((ci * g.kh + i) * g.kw + j) * ncols;
                for (int b = 0; b < g.n; ++b) {
                    double* xp = dx + (static_cast<std::size_t>(b) * g.c + ci) * g.h * g.w;
                    for (int y = 0; y < g.ho; ++y) {
                        const int iy = y * g.s.stride_h - g.s.pad_h + i;
                        if (iy < 0 || iy >= g.h) continue;
                        const double* src = row + (static_cast<std::size_t>(b) * g.ho + y) * g.wo;
                        for (int xo = 0; xo < g.wo; ++xo) {
                            const int ix = xo * g.s.stride_w - g.s.pad_w + j;
                            if (ix >= 0 && ix < g.w) xp[static_cast<std::size_t>(iy) * g.w + ix] += src[xo];
                        }
                    }
                }
            }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, const Conv2dSpec& spec) {
    require_rank(x, 4, "conv2d input");
    require_rank(w, 4, "conv2d weight");
    ConvGeom g{};
    g.n = x.dim(0);
    g.c = x.dim(1);
    g.h = x.dim(2);
    g.w = x.dim(3);
    g.o = w.dim(0);
    g.kh = w.dim(2);
    g.kw = w.dim(3);
    g.s = spec;
    require(w.dim(1) == g.c,
            [&] { return "conv2d: channel mismatch " + shape_string(x.shape()) + " vs " + shape_string(w.shape()); });
    g.ho = (g.h + 2 * spec.pad_h - g.kh) / spec.stride_h + 1;
    g.wo = (g.w + 2 * spec.pad_w - g.kw) / spec.stride_w + 1;
    require(g.ho > 0 && g.wo > 0, "conv2d: kernel larger than padded input");
    if (b.defined()) require(static_cast<int>(b.size()) == g.o, "conv2d: bias size mismatch");

    std::vector<double> cols(static_cast<std::size_t>(g.ckk()) * g.cols());
    im2col(g, x.data().data(), cols.data());
    RowMat out_mat = ConstMapMat(w.data().data(), g.o, g.ckk()) * ConstMapMat(cols.data(), g.ckk(), g.cols());
    cols.clear();
    cols.shrink_to_fit();
    const int hw = g.ho * g.wo;
    std::vector<double> out(static_cast<std::size_t>(g.n) * g.o * hw);
    for (int bi = 0; bi < g.n; ++bi)
        for (int oc = 0; oc < g.o; ++oc) {
            const double bias = b.defined() ? b.at(oc) : 0.0;
            const double* src = out_mat.data() + static_cast<std::size_t>(oc) * g.cols() + static_cast<std::size_t>(bi) * hw;
            double* dst = out.data() + (static_cast<std::size_t>(bi) * g.o + oc) * hw;
            for (int p = 0; p < hw; ++p) dst[p] = src[p] + bias;
        }
    Node* px = &x.node();
    Node* pw = &w.node();
    Node* pb = b.defined() ? &b.node() : nullptr;
    std::vector<Tensor> parents{x, w};
    if (b.defined()) parents.push_back(b);
    return make_op({g.n, g.o, g.ho, g.wo}, std::move(out), parents, [px, pw, pb, g](Node& self) {
        const int hw = g.ho * g.wo;
        RowMat gm(g.o, g.cols());
        for (int bi = 0; bi < g.n; ++bi)
            for (int oc = 0; oc < g.o; ++oc) {
                const double* src = self.grad.data() + (static_cast<std::size_t>(bi) * g.o + oc) * hw;
                std::copy_n(src, hw, gm.data() + static_cast<std::size_t>(oc) * g.cols() + static_cast<std::size_t>(bi) * hw);
            }
        if (pb && pb->requires_grad) {
            auto& gb = pb->grad_buffer();
            for (int oc = 0; oc < g.o; ++oc) gb[oc] += gm.row(oc).sum();
        }
        if (pw->requires_grad) {
            std::vector<double> cols(static_cast<std::size_t>(g.ckk()) * g.cols());
            im2col(g, px->value.data(), cols.data());
            MapMat(pw->grad_buffer().data(), g.o, g.ckk()).noalias() +=
                gm * ConstMapMat(cols.data(), g.ckk(), g.cols()).transpose();
        }
        if (px->requires_grad) {
            RowMat dcols = ConstMapMat(pw->value.data(), g.o, g.ckk()).transpose() * gm;
            col2im(g, dcols.data(), px->grad_buffer().data());
        }
    });
}

Tensor global_avg_pool(const Tensor& x) {
    require_rank(x, 4, "global_avg_pool");
    const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<double> out(static_cast<std::size_t>(n) * c);
    for (std::size_t i = 0; i < out.size(); ++i) {
        double s = 0.0;
        for (int p = 0; p < hw; ++p) s += x.at(i * hw + p);
        out[i] = s / hw;
    }
    Node* px = &x.node();
    return make_op({n, c}, std::move(out), {x}, [px, hw](Node& self) {
        auto& g = px->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            for (int p = 0; p < hw; ++p) g[i * hw + p] += self.grad[i] / hw;
    });
}

Tensor soft_cross_entropy(const Tensor& pred_logits, const Tensor& target_logits) {
    require_rank(pred_logits, 2, "soft_cross_entropy");
    require_same_shape(pred_logits, target_logits, "soft_cross_entropy");
    const int n = pred_logits.dim(0), k = pred_logits.dim(1);
    std::vector<double> p(pred_logits.size()), logq(pred_logits.size()), row_loss(n);
    double total = 0.0;
    for (int r = 0; r < n; ++r) {
        const double* t = target_logits.data().data() + static_cast<std::size_t>(r) * k;
        const double* q = pred_logits.data().data() + static_cast<std::size_t>(r) * k;
        const double tmax = *std::max_element(t, t + k);
        const double qmax = *std::max_element(q, q + k);
        double tz = 0.0, qz = 0.0;
        for (int j = 0; j < k; ++j) {
            tz += std::exp(t[j] - tmax);
            qz += std::exp(q[j] - qmax);
        }
        const double qlse = qmax + std::log(qz);
        double l = 0.0;
        for (int j = 0; j < k; ++j) {
            const std::size_t idx = static_cast<std::size_t>(r) * k + j;
            p[idx] = std::exp(t[j] - tmax) / tz;
            logq[idx] = q[j] - qlse;
            l -= p[idx] * logq[idx];
        }
        row_loss[r] = l;
        total += l;
    }
    Node* pp = &pred_logits.node();
    Node* pt = &target_logits.node();
    return make_op({1}, {total / n}, {pred_logits, target_logits},
                   [pp, pt, p = std::move(p), logq = std::move(logq), row_loss = std::move(row_loss), n, k](Node& self) {
                       const double s = self.grad[0] / n;
                       if (pp->requires_grad) {
                           auto& g = pp->grad_buffer();
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * (std::exp(logq[i]) - p[i]);
                       }
                       if (pt->requires_grad) {
                           auto& g = pt->grad_buffer();
                           for (int r = 0; r < n; ++r)
                               for (int j = 0; j < k; ++j) {
                                   const std::size_t i = static_cast<std::size_t>(r) * k + j;
                                   g[i] += s * p[i] * (-logq[i] - row_loss[r]);
                               }
                       }
                   });
}

// ---- parameters ----------------------------------------------------------------------------

Tensor& ParamSet::add(std::string name, Shape shape, std::vector<double> values) {
    for (const auto& p : params_) {
        if (p.name == name) throw InvalidArgument("ParamSet: duplicate parameter " + name);
    }
    round_to_f32(values);
    params_.push_back({std::move(name), Tensor::parameter(std::move(shape), std::move(values))});
    return params_.back().tensor;
}

Tensor& ParamSet::add_uniform(std::string name, Shape shape, double bound, Rng& rng) {
    std::vector<double> v(numel(shape));
    for (double& x : v) x = rng.uniform(-bound, bound);
    return add(std::move(name), std::move(shape), std::move(v));
}

Tensor& ParamSet::add_zeros(std::string name, Shape shape) {
    std::vector<double> v(numel(shape), 0.0);
    return add(std::move(name), std::move(shape), std::move(v));
}

const Tensor& ParamSet::get(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name == name) return p.tensor;
    }
    throw InvalidArgument("ParamSet: no parameter named " + name);
}

Tensor& ParamSet::get(const std::string& name) {
    return const_cast<Tensor&>(static_cast<const ParamSet&>(*this).get(name));
}

std::size_t ParamSet::total_size() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
}

void ParamSet::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

std::vector<double> ParamSet::flatten() const {
    std::vector<double> out;
    out.reserve(total_size());
    for (const auto& p : params_) out.insert(out.end(), p.tensor.values().begin(), p.tensor.values().end());
    return out;
}

void ParamSet::load_flat(std::span<const double> flat) {
    if (flat.size() != total_size()) {
        throw InvalidArgument("ParamSet::load_flat: expected " + std::to_string(total_size()) + " values, got " +
                              std::to_string(flat.size()));
    }
    std::size_t off = 0;
    for (auto& p : params_) {
        auto dst = p.tensor.mutable_data();
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), dst.size(), dst.begin());
        off += dst.size();
    }
}

std::vector<double> ParamSet::flatten_grad() const {
    std::vector<double> out;
    out.reserve(total_size());
    for (const auto& p : params_) {
        auto g = p.tensor.grad();
        if (g.empty()) {
            out.insert(out.end(), p.tensor.size(), 0.0);
        } else {
            out.insert(out.end(), g.begin(), g.end());
        }
    }
    return out;
}

std::string ParamSet::manifest() const {
    std::ostringstream os;
    for (const auto& p : params_) {
        os << p.name << ' ';
        for (std::size_t i = 0; i < p.tensor.shape().size(); ++i) os << (i ? "x" : "") << p.tensor.shape()[i];
        os << '\n';
    }
    return os.str();
}

void ParamSet::check_manifest(const std::string& text) const {
    if (text != manifest()) {
        throw FormatError("parameter manifest does not match the configured architecture");
    }
}

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void round_to_f32(std::span<double> values) {
    for (double& v : values) v = to_f32(v);
}

Adam::Adam(const ParamSet& params, AdamConfig config)
    : config_(config), m_(params.total_size(), 0.0), v_(params.total_size(), 0.0) {}

void Adam::step(ParamSet& params) {
    if (m_.size() != params.total_size()) throw InvalidArgument("Adam: parameter set changed size");
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    std::size_t off = 0;
    for (auto& p : params.params()) {
        auto w = p.tensor.mutable_data();
        auto g = p.tensor.grad();
        for (std::size_t i = 0; i < w.size(); ++i, ++off) {
            const double gi = g.empty() ? 0.0 : g[i];
            m_[off] = to_f32(config_.beta1 * m_[off] + (1.0 - config_.beta1) * gi);
            v_[off] = to_f32(config_.beta2 * v_[off] + (1.0 - config_.beta2) * gi * gi);
            const double mhat = m_[off] / bc1;
            const double vhat = v_[off] / bc2;
            w[i] = to_f32(w[i] - config_.lr * mhat / (std::sqrt(vhat) + config_.eps));
        }
    }
}

void Adam::restore(long steps, std::vector<double> m, std::vector<double> v) {
    if (m.size() != m_.size() || v.size() != v_.size()) throw InvalidArgument("Adam::restore: state size mismatch");
    t_ = steps;
    m_ = std::move(m);
    v_ = std::move(v);
}

// ---- gradient check --------------------------------------------------------------------------

std::vector<GradGroupReport> gradient_check(ParamSet& params, const std::function<Tensor()>& loss_fn,
                                            const GradCheckOptions& options) {
    params.zero_grad();
    Tensor loss = loss_fn();
    backward(loss);
    std::vector<GradGroupReport> reports;
    Rng rng(options.sample_seed);
    for (auto& p : params.params()) {
        GradGroupReport rep;
        rep.name = p.name;
        std::vector<double> analytic(p.tensor.grad().begin(), p.tensor.grad().end());
        if (p.name == options.corrupt_group) {
            for (double& a : analytic) a *= options.corrupt_factor;
        }
        std::vector<std::size_t> idx(p.tensor.size());
        std::iota(idx.begin(), idx.end(), 0);
        if (options.max_entries_per_group > 0 && idx.size() > options.max_entries_per_group) {
            for (std::size_t i = 0; i < options.max_entries_per_group; ++i) {
                std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
            }
            idx.resize(options.max_entries_per_group);
        }
        double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
        auto w = p.tensor.mutable_data();
        auto central = [&](std::size_t i, double h) {
            NoGradGuard guard;
            const double orig = w[i];
            w[i] = orig + h;
            const double plus = loss_fn().item();
            w[i] = orig - h;
            const double minus = loss_fn().item();
            w[i] = orig;
            return (plus - minus) / (2.0 * h);
        };
        std::size_t used = 0;
        for (std::size_t i : idx) {
            const double numeric = central(i, options.h);
            if (options.kink_screen) {
                const double half = central(i, options.h / 2.0);
                const double scale = std::max({std::abs(numeric), std::abs(half), 1e-8});
                if (std::abs(numeric - half) > options.kink_tolerance * scale) {
                    ++rep.kinks;
                    continue;
                }
            }
            const double d = analytic[i] - numeric;
            rep.max_abs_error = std::max(rep.max_abs_error, std::abs(d));
            diff2 += d * d;
            a2 += analytic[i] * analytic[i];
            n2 += numeric * numeric;
            ++used;
        }
        rep.checked = used;
        const double denom = std::sqrt(std::max(a2, n2));
        rep.rel_error = denom > 1e-12 ? std::sqrt(diff2) / denom : std::sqrt(diff2);
        reports.push_back(rep);
    }
    params.zero_grad();
    return reports;
}

Linear make_linear(ParamSet& params, const std::string& name, int in, int out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Linear l;
    l.w = params.add_uniform(name + ".weight", {out, in}, bound, rng);
    l.b = params.add_uniform(name + ".bias", {out}, bound, rng);
    return l;
}

Conv2d make_conv2d(ParamSet& params, const std::string& name, int in_ch, int out_ch, int kh, int kw,
                   Conv2dSpec spec, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * kh * kw));
    Conv2d c;
    c.w = params.add_uniform(name + ".weight", {out_ch, in_ch, kh, kw}, bound, rng);
    c.b = params.add_uniform(name + ".bias", {out_ch}, bound, rng);
    c.spec = spec;
    return c;
}

}  // namespace sadcoeff::nn
