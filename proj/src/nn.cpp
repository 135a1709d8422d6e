#include "seqmask/nn.hpp"

#include <cmath>

#include "seqmask/errors.hpp"

namespace seqmask {

void append_params(ParamList& out, const std::string& prefix, const ParamList& params) {
    for (const auto& p : params) out.push_back({prefix + "." + p.name, p.tensor});
}

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v), true);
}

// ---- Linear -------------------------------------------------------------------

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool bias)
    : in_(in), out_(out), weight_(glorot_uniform({in, out}, in, out, rng)) {
    if (bias) bias_ = Tensor::zeros({out}, true);
}

Tensor Linear::forward(const Tensor& x) const {
    if (x.rank() != 2 || x.cols() != in_) {
        throw DimensionError("linear layer expects [*, " + std::to_string(in_) + "] input, got " +
                             shape_string(x.shape()));
    }
    Tensor y = matmul(x, weight_);
    return bias_.defined() ? add_row(y, bias_) : y;
}

ParamList Linear::params() const {
    ParamList p{{"weight", weight_}};
    if (bias_.defined()) p.push_back({"bias", bias_});
    return p;
}

// ---- MultiHeadAttention ---------------------------------------------------------

MultiHeadAttention::MultiHeadAttention(std::size_t dim, std::size_t heads, Rng& rng) : dim_(dim), heads_(heads) {
    if (heads == 0 || dim % heads != 0) {
        throw ConfigError("attention width " + std::to_string(dim) + " is not divisible by " +
                          std::to_string(heads) + " heads");
    }
    query_ = Linear(dim, dim, rng);
    key_ = Linear(dim, dim, rng);
    value_ = Linear(dim, dim, rng);
    output_ = Linear(dim, dim, rng);
}

Tensor MultiHeadAttention::forward(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t seq_len) const {
    Tensor attended =
        block_attention(query_.forward(q), key_.forward(k), value_.forward(v), seq_len, heads_);
    return output_.forward(attended);
}

Tensor MultiHeadAttention::forward(const Tensor& q, const Tensor& k, const Tensor& v) const {
    return forward(q, k, v, q.rows());
}

std::vector<double> MultiHeadAttention::weights(const Tensor& q, const Tensor& k, std::size_t seq_len) const {
    return attention_weights(query_.forward(q.detach()), key_.forward(k.detach()), seq_len, heads_);
}

ParamList MultiHeadAttention::params() const {
    ParamList p;
    append_params(p, "query", query_.params());
    append_params(p, "key", key_.params());
    append_params(p, "value", value_.params());
    append_params(p, "output", output_.params());
    return p;
}

// ---- Gru ------------------------------------------------------------------------

Gru::Gru(std::size_t input, std::size_t hidden, Rng& rng)
    : input_(input),
      hidden_(hidden),
      wz_(input, hidden, rng),
      wr_(input, hidden, rng),
      wn_(input, hidden, rng),
      uz_(hidden, hidden, rng, false),
      ur_(hidden, hidden, rng, false),
      un_(hidden, hidden, rng, false) {}

Tensor Gru::cell(const Tensor& x, const Tensor& h) const {
    Tensor z = sigmoid(add(wz_.forward(x), uz_.forward(h)));
    Tensor r = sigmoid(add(wr_.forward(x), ur_.forward(h)));
    Tensor n = tanh(add(wn_.forward(x), mul(r, un_.forward(h))));
    // (1 - z) * n + z * h  ==  n + z * (h - n)
    return add(n, mul(z, sub(h, n)));
}

Tensor Gru::encode(const Tensor& seq, std::size_t steps) const {
    if (steps == 0 || seq.rank() != 2 || seq.rows() == 0) throw InputError("GRU needs a nonempty sequence");
    if (seq.rows() % steps != 0) throw DimensionError("GRU input rows are not a multiple of the step count");
    const std::size_t batch = seq.rows() / steps;
    Tensor h = Tensor::zeros({batch, hidden_});
    std::vector<std::size_t> rows(batch);
    for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t b = 0; b < batch; ++b) rows[b] = b * steps + t;
        h = cell(gather_rows(seq, rows), h);
    }
    return h;
}

ParamList Gru::params() const {
    ParamList p;
    append_params(p, "wz", wz_.params());
    append_params(p, "wr", wr_.params());
    append_params(p, "wn", wn_.params());
    append_params(p, "uz", uz_.params());
    append_params(p, "ur", ur_.params());
    append_params(p, "un", un_.params());
    return p;
}

void Gru::fill(double value) {
    for (auto& p : params()) {
        Tensor t = p.tensor;
        for (double& v : t.mutable_values()) v = value;
    }
}

Tensor gru_encode(const Tensor& seq, const Gru& gru) {
    if (seq.rank() != 2 || seq.rows() == 0) throw InputError("gru_encode: empty sequence");
    return reshape(gru.encode(seq, seq.rows()), {gru.hidden_size()});
}

// ---- Mlp ----------------------------------------------------------------------

Mlp::Mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng)
    : first_(in, hidden, rng), second_(hidden, out, rng) {}

Tensor Mlp::forward(const Tensor& x) const { return second_.forward(relu(first_.forward(x))); }

ParamList Mlp::params() const {
    ParamList p;
    append_params(p, "fc1", first_.params());
    append_params(p, "fc2", second_.params());
    return p;
}

}  // namespace seqmask
