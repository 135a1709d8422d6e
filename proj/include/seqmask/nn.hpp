#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "seqmask/tensor.hpp"

namespace seqmask {

using Rng = std::mt19937_64;

struct NamedParam {
    std::string name;
    Tensor tensor;
};

using ParamList = std::vector<NamedParam>;

void append_params(ParamList& out, const std::string& prefix, const ParamList& params);

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

// y = x W + b with W stored [in, out].
class Linear {
   public:
    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng, bool bias = true);

    Tensor forward(const Tensor& x) const;
    ParamList params() const;

    std::size_t in_features() const { return in_; }
    std::size_t out_features() const { return out_; }
    Tensor& weight() { return weight_; }
    Tensor& bias() { return bias_; }
    const Tensor& weight() const { return weight_; }
    const Tensor& bias() const { return bias_; }

   private:
    std::size_t in_ = 0, out_ = 0;
    Tensor weight_, bias_;
};

// Multi-head scaled dot-product attention with input and output projections.
class MultiHeadAttention {
   public:
    MultiHeadAttention() = default;
    MultiHeadAttention(std::size_t dim, std::size_t heads, Rng& rng);

    // q, k, v: [B*L, dim] stacked sequences of length seq_len.
    Tensor forward(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t seq_len) const;
    // Single sequence of q.rows() tokens.
    Tensor forward(const Tensor& q, const Tensor& k, const Tensor& v) const;
    // Per-head attention probabilities for one batch, [B][head][query][key].
    std::vector<double> weights(const Tensor& q, const Tensor& k, std::size_t seq_len) const;

    ParamList params() const;
    std::size_t heads() const { return heads_; }
    std::size_t dim() const { return dim_; }
    Linear& query() { return query_; }
    Linear& key() { return key_; }
    Linear& value() { return value_; }
    Linear& output() { return output_; }

   private:
    std::size_t dim_ = 0, heads_ = 1;
    Linear query_, key_, value_, output_;
};

// Single-layer gated recurrent unit:
//   z = sigmoid(x Wz + h Uz + bz)
//   r = sigmoid(x Wr + h Ur + br)
//   n = tanh(x Wn + r * (h Un) + bn)
//   h' = (1 - z) * n + z * h
class Gru {
   public:
    Gru() = default;
    Gru(std::size_t input, std::size_t hidden, Rng& rng);

    // x: [B, input], h: [B, hidden].
    Tensor cell(const Tensor& x, const Tensor& h) const;
    // seq: [B*T, input] stacked sequences; returns final hidden states [B, hidden]
    // starting from a zero state.
    Tensor encode(const Tensor& seq, std::size_t steps) const;

    ParamList params() const;
    std::size_t input_size() const { return input_; }
    std::size_t hidden_size() const { return hidden_; }
    // Every weight and bias set to `value` (tests use 0 for the fixed point).
    void fill(double value);

   private:
    std::size_t input_ = 0, hidden_ = 0;
    Linear wz_, wr_, wn_;
    Linear uz_, ur_, un_;
};

// Final hidden state of a single-layer GRU over one T x d sequence.
Tensor gru_encode(const Tensor& seq, const Gru& gru);

class Mlp {
   public:
    Mlp() = default;
    Mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);

    Tensor forward(const Tensor& x) const;
    ParamList params() const;
    Linear& first() { return first_; }
    Linear& second() { return second_; }

   private:
    Linear first_, second_;
};

}  // namespace seqmask
