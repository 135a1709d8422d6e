#include "seqmask/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "seqmask/errors.hpp"

namespace seqmask {

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// ---- Tensor ------------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("tensor shape " + shape_string(shape) + " needs " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(values.size()));
    }
    node_ = std::make_shared<detail::Node>();
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
    const auto n = values.size();
    return Tensor({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad) {
    return Tensor({rows, cols}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
    if (!node_) throw StateError("use of an undefined tensor");
    return node_->shape;
}

std::size_t Tensor::numel() const { return values().size(); }

std::size_t Tensor::rows() const {
    const auto& s = shape();
    if (s.size() == 2) return s[0];
    if (s.size() <= 1) return 1;
    throw DimensionError("rows() on tensor of shape " + shape_string(s));
}

std::size_t Tensor::cols() const {
    const auto& s = shape();
    if (s.size() == 2) return s[1];
    if (s.size() == 1) return s[0];
    if (s.empty()) return 1;
    throw DimensionError("cols() on tensor of shape " + shape_string(s));
}

std::span<const double> Tensor::values() const {
    if (!node_) throw StateError("use of an undefined tensor");
    return node_->value;
}

std::span<double> Tensor::mutable_values() {
    if (!node_) throw StateError("use of an undefined tensor");
    return node_->value;
}

double Tensor::item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
    if (!node_) throw StateError("use of an undefined tensor");
    node_->requires_grad = on;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (!node_) return {};
    return node_->grad;
}

std::vector<double> Tensor::grad_or_zero() const {
    if (has_grad()) return node_->grad;
    return std::vector<double>(numel(), 0.0);
}

void Tensor::zero_grad() {
    if (!node_) return;
    node_->grad.assign(node_->value.size(), 0.0);
}

void Tensor::backward() const {
    if (numel() != 1) throw DimensionError("backward() without a seed needs a scalar, got " + shape_string(shape()));
    const double one = 1.0;
    backward(std::span<const double>(&one, 1));
}

void Tensor::backward(std::span<const double> seed) const {
    if (seed.size() != numel()) throw DimensionError("backward seed size does not match tensor");
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order of the reachable graph.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            detail::Node* p = n->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    // Interior gradients restart from zero so repeated backward passes over the
    // same graph accumulate only into leaves.
    for (auto* n : order) {
        if (n->backward) n->grad.assign(n->value.size(), 0.0);
    }
    double* g = node_->grad_buffer();
    for (std::size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward) (*it)->backward(**it);
    }
}

Tensor Tensor::detach() const {
    auto n = std::make_shared<detail::Node>();
    n->shape = shape();
    n->value = node_->value;
    return Tensor(std::move(n));
}

Tensor Tensor::clone(bool requires_grad) const {
    Tensor t = detach();
    t.set_requires_grad(requires_grad);
    return t;
}

namespace detail {

Tensor record(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
              std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    const bool any = std::any_of(parents.begin(), parents.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backward = std::move(backward);
    }
    return Tensor(std::move(n));
}

}  // namespace detail

namespace {

using detail::Node;
using detail::NodePtr;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
}

void require_matrix(const Tensor& a, const char* op) {
    if (a.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
}

void require_vector(const Tensor& a, std::size_t n, const char* op) {
    if (a.rank() != 1 || a.numel() != n) {
        throw DimensionError(std::string(op) + ": expected a vector of length " + std::to_string(n) + ", got " +
                             shape_string(a.shape()));
    }
}

// Elementwise map whose derivative is expressed through input x and output y.
template <typename F, typename DF>
Tensor unary(const Tensor& a, F f, DF df) {
    std::vector<double> out(a.numel());
    const auto in = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
    NodePtr pa = a.node();
    return detail::record(a.shape(), std::move(out), {a}, [pa, df](Node& self) {
        double* ga = pa->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * df(pa->value[i], self.value[i]);
    });
}

}  // namespace

// ---- elementwise --------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    NodePtr pa = a.node(), pb = b.node();
    return detail::record(a.shape(), std::move(out), {a, b}, [pa, pb](Node& self) {
        for (const NodePtr& p : {pa, pb}) {
            if (!p->requires_grad) continue;
            double* g = p->grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    NodePtr pa = a.node(), pb = b.node();
    return detail::record(a.shape(), std::move(out), {a, b}, [pa, pb](Node& self) {
        if (pa->requires_grad) {
            double* g = pa->grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            double* g = pb->grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    NodePtr pa = a.node(), pb = b.node();
    return detail::record(a.shape(), std::move(out), {a, b}, [pa, pb](Node& self) {
        if (pa->requires_grad) {
            double* g = pa->grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            double* g = pb->grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pa->value[i];
        }
    });
}

Tensor scale(const Tensor& a, double c) {
    return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
    return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
    return unary(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    for (double v : a.values()) {
        if (!(v > 0.0)) throw InputError("log of a non-positive value");
    }
    return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

// ---- broadcasting ---------------------------------------------------------------

Tensor add_row(const Tensor& a, const Tensor& v) {
    require_matrix(a, "add_row");
    const std::size_t m = a.rows(), n = a.cols();
    require_vector(v, n, "add_row");
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] + v[j];
    NodePtr pa = a.node(), pv = v.node();
    return detail::record(a.shape(), std::move(out), {a, v}, [pa, pv, m, n](Node& self) {
        if (pa->requires_grad) {
            double* g = pa->grad_buffer();
            for (std::size_t i = 0; i < m * n; ++i) g[i] += self.grad[i];
        }
        if (pv->requires_grad) {
            double* g = pv->grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
        }
    });
}

Tensor mul_row(const Tensor& a, const Tensor& v) {
    require_matrix(a, "mul_row");
    const std::size_t m = a.rows(), n = a.cols();
    require_vector(v, n, "mul_row");
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] * v[j];
    NodePtr pa = a.node(), pv = v.node();
    return detail::record(a.shape(), std::move(out), {a, v}, [pa, pv, m, n](Node& self) {
        if (pa->requires_grad) {
            double* g = pa->grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i * n + j] * pv->value[j];
        }
        if (pv->requires_grad) {
            double* g = pv->grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j] * pa->value[i * n + j];
        }
    });
}

Tensor mul_col(const Tensor& a, const Tensor& v) {
    require_matrix(a, "mul_col");
    const std::size_t m = a.rows(), n = a.cols();
    require_vector(v, m, "mul_col");
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] * v[i];
    NodePtr pa = a.node(), pv = v.node();
    return detail::record(a.shape(), std::move(out), {a, v}, [pa, pv, m, n](Node& self) {
        if (pa->requires_grad) {
            double* g = pa->grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i * n + j] * pv->value[i];
        }
        if (pv->requires_grad) {
            double* g = pv->grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) g[i] += self.grad[i * n + j] * pa->value[i * n + j];
        }
    });
}

// ---- linear algebra -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    const double* A = a.values().data();
    const double* B = b.values().data();
    for (std::size_t i = 0; i < m; ++i) {
        double* row = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = B + p * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
        }
    }
    NodePtr pa = a.node(), pb = b.node();
    return detail::record({m, n}, std::move(out), {a, b}, [pa, pb, m, k, n](Node& self) {
        const double* G = self.grad.data();
        if (pa->requires_grad) {
            // dA = G * B^T
            double* gA = pa->grad_buffer();
            const double* B = pb->value.data();
            std::vector<double> bt(n * k);
            for (std::size_t p = 0; p < k; ++p)
                for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = B[p * n + j];
            for (std::size_t i = 0; i < m; ++i) {
                double* grow = gA + i * k;
                for (std::size_t j = 0; j < n; ++j) {
                    const double g = G[i * n + j];
                    if (g == 0.0) continue;
                    const double* btrow = bt.data() + j * k;
                    for (std::size_t p = 0; p < k; ++p) grow[p] += g * btrow[p];
                }
            }
        }
        if (pb->requires_grad) {
            // dB = A^T * G
            double* gB = pb->grad_buffer();
            const double* A = pa->value.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = A[i * k + p];
                    if (aip == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j) gB[p * n + j] += aip * G[i * n + j];
                }
        }
    });
}

Tensor concat(const Tensor& a, const Tensor& b) {
    if (a.rank() == 1 && b.rank() == 1) {
        const std::size_t na = a.numel(), nb = b.numel();
        std::vector<double> out(a.values().begin(), a.values().end());
        out.insert(out.end(), b.values().begin(), b.values().end());
        NodePtr pa = a.node(), pb = b.node();
        return detail::record({na + nb}, std::move(out), {a, b}, [pa, pb, na, nb](Node& self) {
            if (pa->requires_grad) {
                double* g = pa->grad_buffer();
                for (std::size_t i = 0; i < na; ++i) g[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                double* g = pb->grad_buffer();
                for (std::size_t i = 0; i < nb; ++i) g[i] += self.grad[na + i];
            }
        });
    }
    require_matrix(a, "concat");
    require_matrix(b, "concat");
    if (a.rows() != b.rows()) {
        throw DimensionError("concat: row counts differ, " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
    const std::size_t m = a.rows(), na = a.cols(), nb = b.cols(), n = na + nb;
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(a.values().data() + i * na, na, out.data() + i * n);
        std::copy_n(b.values().data() + i * nb, nb, out.data() + i * n + na);
    }
    NodePtr pa = a.node(), pb = b.node();
    return detail::record({m, n}, std::move(out), {a, b}, [pa, pb, m, na, nb, n](Node& self) {
        if (pa->requires_grad) {
            double* g = pa->grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < na; ++j) g[i * na + j] += self.grad[i * n + j];
        }
        if (pb->requires_grad) {
            double* g = pb->grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < nb; ++j) g[i * nb + j] += self.grad[i * n + na + j];
        }
    });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
    require_matrix(a, "slice_cols");
    const std::size_t m = a.rows(), n = a.cols();
    if (begin > end || end > n) throw DimensionError("slice_cols: range out of bounds");
    const std::size_t w = end - begin;
    std::vector<double> out(m * w);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a[i * n + begin + j];
    NodePtr pa = a.node();
    return detail::record({m, w}, std::move(out), {a}, [pa, m, n, w, begin](Node& self) {
        double* g = pa->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += self.grad[i * w + j];
    });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
    require_matrix(a, "slice_rows");
    const std::size_t m = a.rows(), n = a.cols();
    if (begin > end || end > m) throw DimensionError("slice_rows: range out of bounds");
    std::vector<double> out(a.values().begin() + begin * n, a.values().begin() + end * n);
    NodePtr pa = a.node();
    return detail::record({end - begin, n}, std::move(out), {a}, [pa, begin, n](Node& self) {
        double* g = pa->grad_buffer() + begin * n;
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
    require_matrix(a, "gather_rows");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(rows.size() * n);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= m) throw DimensionError("gather_rows: row index out of range");
        std::copy_n(a.values().data() + rows[i] * n, n, out.data() + i * n);
    }
    NodePtr pa = a.node();
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return detail::record({rows.size(), n}, std::move(out), {a}, [pa, idx = std::move(idx), n](Node& self) {
        double* g = pa->grad_buffer();
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < n; ++j) g[idx[i] * n + j] += self.grad[i * n + j];
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw DimensionError("reshape: " + shape_string(a.shape()) + " to " + shape_string(shape));
    }
    std::vector<double> out(a.values().begin(), a.values().end());
    NodePtr pa = a.node();
    return detail::record(std::move(shape), std::move(out), {a}, [pa](Node& self) {
        double* g = pa->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

// ---- reductions -----------------------------------------------------------------

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    NodePtr pa = a.node();
    return detail::record({}, {s}, {a}, [pa](Node& self) {
        double* g = pa->grad_buffer();
        for (std::size_t i = 0; i < pa->value.size(); ++i) g[i] += self.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw InputError("mean of an empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mean_rows(const Tensor& a) {
    require_matrix(a, "mean_rows");
    const std::size_t m = a.rows(), n = a.cols();
    if (m == 0) throw InputError("mean_rows of an empty matrix");
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j] += a[i * n + j];
    for (double& v : out) v /= static_cast<double>(m);
    NodePtr pa = a.node();
    return detail::record({n}, std::move(out), {a}, [pa, m, n](Node& self) {
        double* g = pa->grad_buffer();
        const double inv = 1.0 / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j] * inv;
    });
}

Tensor row_norms(const Tensor& a) {
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += a[i * n + j] * a[i * n + j];
        out[i] = std::sqrt(s);
    }
    NodePtr pa = a.node();
    return detail::record({m}, std::move(out), {a}, [pa, m, n](Node& self) {
        double* g = pa->grad_buffer();
        for (std::size_t i = 0; i < m; ++i) {
            const double norm = self.value[i];
            if (norm == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i] * pa->value[i * n + j] / norm;
        }
    });
}

// ---- probability ----------------------------------------------------------------

namespace {

void softmax_inplace(const double* in, double* out, std::size_t n) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, in[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        out[j] = std::exp(in[j] - mx);
        z += out[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[j] /= z;
}

}  // namespace

Tensor softmax(const Tensor& a) {
    if (a.rank() != 1 && a.rank() != 2) throw DimensionError("softmax: expected rank 1 or 2");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) softmax_inplace(a.values().data() + i * n, out.data() + i * n, n);
    NodePtr pa = a.node();
    return detail::record(a.shape(), std::move(out), {a}, [pa, m, n](Node& self) {
        double* g = pa->grad_buffer();
        for (std::size_t i = 0; i < m; ++i) {
            const double* y = self.value.data() + i * n;
            const double* gy = self.grad.data() + i * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
            for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[j] * (gy[j] - dot);
        }
    });
}

Tensor log_softmax(const Tensor& a) {
    if (a.rank() != 1 && a.rank() != 2) throw DimensionError("log_softmax: expected rank 1 or 2");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* x = a.values().data() + i * n;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[j] - lse;
    }
    NodePtr pa = a.node();
    return detail::record(a.shape(), std::move(out), {a}, [pa, m, n](Node& self) {
        double* g = pa->grad_buffer();
        for (std::size_t i = 0; i < m; ++i) {
            double total = 0.0;
            for (std::size_t j = 0; j < n; ++j) total += self.grad[i * n + j];
            for (std::size_t j = 0; j < n; ++j)
                g[i * n + j] += self.grad[i * n + j] - std::exp(self.value[i * n + j]) * total;
        }
    });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    require_matrix(logits, "cross_entropy");
    const std::size_t m = logits.rows(), k = logits.cols();
    if (labels.size() != m) throw DimensionError("cross_entropy: label count does not match logits rows");
    std::vector<double> probs(m * k);
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
            throw InputError("cross_entropy: label " + std::to_string(labels[i]) + " outside [0," +
                             std::to_string(k) + ")");
        }
        const double* x = logits.values().data() + i * k;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(x[j] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(x[j] - lse);
        loss += lse - x[labels[i]];
    }
    loss /= static_cast<double>(m);
    NodePtr pl = logits.node();
    std::vector<int> y(labels.begin(), labels.end());
    return detail::record({}, {loss}, {logits}, [pl, probs = std::move(probs), y = std::move(y), m, k](Node& self) {
        double* g = pl->grad_buffer();
        const double s = self.grad[0] / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < k; ++j)
                g[i * k + j] += s * (probs[i * k + j] - (static_cast<int>(j) == y[i] ? 1.0 : 0.0));
    });
}

// ---- blocked sequence ops ---------------------------------------------------------

namespace {

void check_blocks(const Tensor& x, std::size_t seq_len, const char* op) {
    require_matrix(x, op);
    if (seq_len == 0 || x.rows() % seq_len != 0) {
        throw DimensionError(std::string(op) + ": " + std::to_string(x.rows()) +
                             " rows are not a whole number of sequences of length " + std::to_string(seq_len));
    }
}

void check_heads(std::size_t d, std::size_t heads) {
    if (heads == 0 || d % heads != 0) {
        throw ConfigError("attention width " + std::to_string(d) + " is not divisible by " + std::to_string(heads) +
                          " heads");
    }
}

}  // namespace

std::vector<double> attention_weights(const Tensor& q, const Tensor& k, std::size_t seq_len, std::size_t heads) {
    check_blocks(q, seq_len, "attention");
    require_same_shape(q, k, "attention");
    const std::size_t d = q.cols();
    check_heads(d, heads);
    const std::size_t blocks = q.rows() / seq_len, dh = d / heads, L = seq_len;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> w(blocks * heads * L * L);
    std::vector<double> scores(L);
    const double* Q = q.values().data();
    const double* K = k.values().data();
    for (std::size_t b = 0; b < blocks; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < L; ++i) {
                const double* qi = Q + (b * L + i) * d + h * dh;
                for (std::size_t j = 0; j < L; ++j) {
                    const double* kj = K + (b * L + j) * d + h * dh;
                    double s = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
                    scores[j] = s * inv_sqrt;
                }
                softmax_inplace(scores.data(), w.data() + ((b * heads + h) * L + i) * L, L);
            }
    return w;
}

Tensor block_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t seq_len, std::size_t heads) {
    require_same_shape(q, v, "attention");
    auto w = attention_weights(q, k, seq_len, heads);
    const std::size_t d = q.cols(), blocks = q.rows() / seq_len, dh = d / heads, L = seq_len;
    std::vector<double> out(q.numel(), 0.0);
    const double* V = v.values().data();
    for (std::size_t b = 0; b < blocks; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < L; ++i) {
                const double* wi = w.data() + ((b * heads + h) * L + i) * L;
                double* oi = out.data() + (b * L + i) * d + h * dh;
                for (std::size_t j = 0; j < L; ++j) {
                    const double* vj = V + (b * L + j) * d + h * dh;
                    for (std::size_t c = 0; c < dh; ++c) oi[c] += wi[j] * vj[c];
                }
            }
    NodePtr pq = q.node(), pk = k.node(), pv = v.node();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    return detail::record(
        q.shape(), std::move(out), {q, k, v},
        [pq, pk, pv, w = std::move(w), blocks, heads, L, d, dh, inv_sqrt](Node& self) {
            const double* G = self.grad.data();
            const double* Q = pq->value.data();
            const double* K = pk->value.data();
            const double* V = pv->value.data();
            double* gQ = pq->requires_grad ? pq->grad_buffer() : nullptr;
            double* gK = pk->requires_grad ? pk->grad_buffer() : nullptr;
            double* gV = pv->requires_grad ? pv->grad_buffer() : nullptr;
            std::vector<double> dw(L), ds(L);
            for (std::size_t b = 0; b < blocks; ++b)
                for (std::size_t h = 0; h < heads; ++h)
                    for (std::size_t i = 0; i < L; ++i) {
                        const double* wi = w.data() + ((b * heads + h) * L + i) * L;
                        const double* gi = G + (b * L + i) * d + h * dh;
                        double dot = 0.0;
                        for (std::size_t j = 0; j < L; ++j) {
                            const double* vj = V + (b * L + j) * d + h * dh;
                            double s = 0.0;
                            for (std::size_t c = 0; c < dh; ++c) s += gi[c] * vj[c];
                            dw[j] = s;
                            dot += s * wi[j];
                            if (gV) {
                                double* gvj = gV + (b * L + j) * d + h * dh;
                                for (std::size_t c = 0; c < dh; ++c) gvj[c] += wi[j] * gi[c];
                            }
                        }
                        for (std::size_t j = 0; j < L; ++j) ds[j] = wi[j] * (dw[j] - dot) * inv_sqrt;
                        const double* qi = Q + (b * L + i) * d + h * dh;
                        for (std::size_t j = 0; j < L; ++j) {
                            const double* kj = K + (b * L + j) * d + h * dh;
                            if (gQ) {
                                double* gqi = gQ + (b * L + i) * d + h * dh;
                                for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds[j] * kj[c];
                            }
                            if (gK) {
                                double* gkj = gK + (b * L + j) * d + h * dh;
                                for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds[j] * qi[c];
                            }
                        }
                    }
        });
}

Tensor cosine_rows(const Tensor& x, const Tensor& m) {
    require_matrix(x, "cosine_rows");
    const std::size_t rows = x.rows(), d = x.cols();
    require_vector(m, d, "cosine_rows");
    double mnorm = 0.0;
    for (double v : m.values()) mnorm += v * v;
    mnorm = std::sqrt(mnorm);
    std::vector<double> out(rows, 0.0), xnorm(rows, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
        double dot = 0.0, nn = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            dot += x[i * d + j] * m[j];
            nn += x[i * d + j] * x[i * d + j];
        }
        xnorm[i] = std::sqrt(nn);
        if (xnorm[i] > 0.0 && mnorm > 0.0) out[i] = dot / (xnorm[i] * mnorm);
    }
    NodePtr px = x.node(), pm = m.node();
    return detail::record({rows}, std::move(out), {x, m}, [px, pm, xnorm = std::move(xnorm), mnorm, rows, d](Node& self) {
        if (mnorm == 0.0) return;
        double* gx = px->requires_grad ? px->grad_buffer() : nullptr;
        double* gm = pm->requires_grad ? pm->grad_buffer() : nullptr;
        const double* X = px->value.data();
        const double* M = pm->value.data();
        for (std::size_t i = 0; i < rows; ++i) {
            if (xnorm[i] == 0.0) continue;
            const double c = self.value[i], g = self.grad[i];
            const double denom = xnorm[i] * mnorm;
            for (std::size_t j = 0; j < d; ++j) {
                const double xij = X[i * d + j];
                if (gx) gx[i * d + j] += g * (M[j] / denom - c * xij / (xnorm[i] * xnorm[i]));
                if (gm) gm[j] += g * (xij / denom - c * M[j] / (mnorm * mnorm));
            }
        }
    });
}

Tensor block_softmax(const Tensor& s, std::size_t seq_len) {
    if (s.rank() != 1) throw DimensionError("block_softmax: expected a vector");
    const std::size_t n = s.numel();
    if (seq_len == 0 || n % seq_len != 0) throw DimensionError("block_softmax: length is not a multiple of the block");
    std::vector<double> out(n);
    for (std::size_t b = 0; b < n / seq_len; ++b)
        softmax_inplace(s.values().data() + b * seq_len, out.data() + b * seq_len, seq_len);
    NodePtr ps = s.node();
    return detail::record({n}, std::move(out), {s}, [ps, n, seq_len](Node& self) {
        double* g = ps->grad_buffer();
        for (std::size_t b = 0; b < n / seq_len; ++b) {
            const double* y = self.value.data() + b * seq_len;
            const double* gy = self.grad.data() + b * seq_len;
            double dot = 0.0;
            for (std::size_t j = 0; j < seq_len; ++j) dot += gy[j] * y[j];
            for (std::size_t j = 0; j < seq_len; ++j) g[b * seq_len + j] += y[j] * (gy[j] - dot);
        }
    });
}

Tensor block_weighted_sum(const Tensor& w, const Tensor& x, std::size_t seq_len) {
    check_blocks(x, seq_len, "block_weighted_sum");
    require_vector(w, x.rows(), "block_weighted_sum");
    const std::size_t blocks = x.rows() / seq_len, d = x.cols();
    std::vector<double> out(blocks * d, 0.0);
    for (std::size_t b = 0; b < blocks; ++b)
        for (std::size_t j = 0; j < seq_len; ++j) {
            const std::size_t r = b * seq_len + j;
            for (std::size_t c = 0; c < d; ++c) out[b * d + c] += w[r] * x[r * d + c];
        }
    NodePtr pw = w.node(), px = x.node();
    return detail::record({blocks, d}, std::move(out), {w, x}, [pw, px, blocks, d, seq_len](Node& self) {
        double* gw = pw->requires_grad ? pw->grad_buffer() : nullptr;
        double* gx = px->requires_grad ? px->grad_buffer() : nullptr;
        for (std::size_t b = 0; b < blocks; ++b)
            for (std::size_t j = 0; j < seq_len; ++j) {
                const std::size_t r = b * seq_len + j;
                double acc = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    const double g = self.grad[b * d + c];
                    acc += g * px->value[r * d + c];
                    if (gx) gx[r * d + c] += g * pw->value[r];
                }
                if (gw) gw[r] += acc;
            }
    });
}

Tensor straight_through(std::vector<double> hard, const Tensor& soft) {
    if (hard.size() != soft.numel()) throw DimensionError("straight_through: hard/soft size mismatch");
    NodePtr ps = soft.node();
    return detail::record(soft.shape(), std::move(hard), {soft}, [ps](Node& self) {
        double* g = ps->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

}  // namespace seqmask
