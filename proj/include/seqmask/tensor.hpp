#pragma once

// Reverse-mode automatic differentiation over dense row-major double tensors.
//
// A Tensor is a shared handle to a graph node. Operations that receive at
// least one input requiring a gradient record a backward closure; calling
// backward() on a scalar result walks the recorded graph in reverse
// topological order and accumulates gradients into every reachable node.
// Leaves (parameters) keep their gradient buffers until zero_grad().

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace seqmask {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    double* grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
        return grad.data();
    }
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

class Tensor {
   public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor filled(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor vector(std::vector<double> values, bool requires_grad = false);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                         bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    // Row/column counts for rank-2 tensors; a rank-1 tensor is one row.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> values() const;
    std::span<double> mutable_values();
    double operator[](std::size_t i) const { return values()[i]; }
    double at(std::size_t r, std::size_t c) const { return values()[r * cols() + c]; }
    double item() const;

    bool requires_grad() const;
    void set_requires_grad(bool on);
    bool has_grad() const;
    // Empty span when no gradient has been accumulated.
    std::span<const double> grad() const;
    std::vector<double> grad_or_zero() const;
    void zero_grad();

    // Seeds d(self)/d(self) = 1; self must hold exactly one element.
    void backward() const;
    void backward(std::span<const double> seed) const;

    Tensor detach() const;
    Tensor clone(bool requires_grad = false) const;

    const detail::NodePtr& node() const { return node_; }
    explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

   private:
    detail::NodePtr node_;
};

namespace detail {

// Creates the result node of an operation. The backward closure is attached
// only when some parent requires a gradient.
Tensor record(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
              std::function<void(Node&)> backward);

}  // namespace detail

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
// Natural log; inputs must be positive.
Tensor log(const Tensor& a);

// ---- broadcasting against rows/columns of a matrix -------------------------

// out[i,j] = a[i,j] + v[j]
Tensor add_row(const Tensor& a, const Tensor& v);
// out[i,j] = a[i,j] * v[j]
Tensor mul_row(const Tensor& a, const Tensor& v);
// out[i,j] = a[i,j] * v[i]
Tensor mul_col(const Tensor& a, const Tensor& v);

// ---- linear algebra and layout ---------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// Rank-1 concatenation, or column-wise concatenation of two matrices with equal rows.
Tensor concat(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
Tensor reshape(const Tensor& a, Shape shape);

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Column means of a matrix: [m,n] -> [n].
Tensor mean_rows(const Tensor& a);
// Euclidean norm of each row: [m,n] -> [m]. The subgradient at a zero row is zero.
Tensor row_norms(const Tensor& a);

// ---- probability -----------------------------------------------------------

// Softmax over a rank-1 tensor, or over each row of a matrix.
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);
// Mean negative log-likelihood of integer labels under row-wise softmax.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

// ---- blocked sequence ops --------------------------------------------------
//
// Sequences are stored as stacked rows: a batch of B sequences of length L
// with feature width d is a [B*L, d] matrix.

// Scaled dot-product attention per block and head. q, k, v are [B*L, d] with
// d divisible by heads; head h uses columns [h*d/heads, (h+1)*d/heads).
Tensor block_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t seq_len,
                       std::size_t heads);
// Attention probabilities (values only) laid out [B][head][query][key].
std::vector<double> attention_weights(const Tensor& q, const Tensor& k, std::size_t seq_len,
                                      std::size_t heads);
// Cosine similarity of every row of x with the vector m. Rows or m with zero
// norm yield similarity 0 and no gradient.
Tensor cosine_rows(const Tensor& x, const Tensor& m);
// Softmax within consecutive blocks of a rank-1 tensor.
Tensor block_softmax(const Tensor& s, std::size_t seq_len);
// out[b,:] = sum_j w[b*L+j] * x[b*L+j,:]
Tensor block_weighted_sum(const Tensor& w, const Tensor& x, std::size_t seq_len);

// Forward value is `hard`; the gradient flows to `soft` unchanged.
Tensor straight_through(std::vector<double> hard, const Tensor& soft);

}  // namespace seqmask
