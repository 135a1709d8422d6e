#include "seqmask/keyframe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "seqmask/errors.hpp"

namespace seqmask {

Tensor local_difference(const Tensor& frames, std::size_t stride, std::size_t seq_len) {
    if (stride == 0) throw ConfigError("keyframe stride must be at least 1");
    if (frames.rank() != 2 || seq_len == 0 || frames.rows() % seq_len != 0) {
        throw DimensionError("local_difference: frames " + shape_string(frames.shape()) +
                             " are not whole sequences of length " + std::to_string(seq_len));
    }
    const std::size_t n = frames.rows(), d = frames.cols(), T = seq_len;
    const auto k = static_cast<long>(stride);
    const double w = 1.0 / (2.0 * static_cast<double>(stride));

    // Per-position coefficients over source frames of the same sequence.
    std::vector<std::vector<double>> coeff(T, std::vector<double>(T, 0.0));
    for (long i = 0; i < static_cast<long>(T); ++i) {
        auto clamp = [T](long j) { return static_cast<std::size_t>(std::clamp(j, 0L, static_cast<long>(T) - 1)); };
        for (long j = i - k; j <= i + k; ++j) coeff[i][clamp(j)] += w;
        coeff[i][i] -= 1.0;
    }

    std::vector<double> out(n * d, 0.0);
    const double* X = frames.values().data();
    for (std::size_t b = 0; b < n / T; ++b)
        for (std::size_t i = 0; i < T; ++i)
            for (std::size_t j = 0; j < T; ++j) {
                const double c = coeff[i][j];
                if (c == 0.0) continue;
                const double* src = X + (b * T + j) * d;
                double* dst = out.data() + (b * T + i) * d;
                for (std::size_t c2 = 0; c2 < d; ++c2) dst[c2] += c * src[c2];
            }
    auto pf = frames.node();
    return detail::record(frames.shape(), std::move(out), {frames},
                          [pf, coeff = std::move(coeff), n, d, T](detail::Node& self) {
                              double* g = pf->grad_buffer();
                              for (std::size_t b = 0; b < n / T; ++b)
                                  for (std::size_t i = 0; i < T; ++i)
                                      for (std::size_t j = 0; j < T; ++j) {
                                          const double c = coeff[i][j];
                                          if (c == 0.0) continue;
                                          const double* gi = self.grad.data() + (b * T + i) * d;
                                          double* gj = g + (b * T + j) * d;
                                          for (std::size_t c2 = 0; c2 < d; ++c2) gj[c2] += c * gi[c2];
                                      }
                          });
}

Tensor local_difference(const Tensor& frames, std::size_t stride) {
    return local_difference(frames, stride, frames.rows());
}

Decision sample_decision(const Tensor& pi, std::size_t seq_len, SampleMode mode, double temperature, Rng& rng) {
    if (pi.rank() != 2 || pi.cols() != 2) throw DimensionError("sample_decision: expected [N, 2] probabilities");
    const std::size_t n = pi.rows();
    if (seq_len == 0 || n % seq_len != 0) throw DimensionError("sample_decision: rows are not whole sequences");
    if (!(temperature > 0.0)) throw ConfigError("sampling temperature must be positive");

    Decision out;
    out.keep.assign(n, 0);
    std::vector<double> noise;  // Gumbel draws, [N, 2]
    if (mode == SampleMode::train) {
        std::uniform_real_distribution<double> uniform(std::numeric_limits<double>::min(), 1.0);
        noise.resize(2 * n);
        for (double& g : noise) g = -std::log(-std::log(uniform(rng)));
        for (std::size_t i = 0; i < n; ++i) {
            const double drop = std::log(pi.at(i, 0)) + noise[2 * i];
            const double keep = std::log(pi.at(i, 1)) + noise[2 * i + 1];
            out.keep[i] = keep > drop ? 1 : 0;
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) out.keep[i] = pi.at(i, 1) > pi.at(i, 0) ? 1 : 0;
    }

    for (std::size_t b = 0; b < n / seq_len; ++b) {
        const auto first = out.keep.begin() + static_cast<long>(b * seq_len);
        if (std::any_of(first, first + static_cast<long>(seq_len), [](std::uint8_t v) { return v != 0; })) continue;
        std::size_t best = b * seq_len;
        for (std::size_t i = b * seq_len + 1; i < (b + 1) * seq_len; ++i)
            if (pi.at(i, 1) > pi.at(best, 1)) best = i;
        out.keep[best] = 1;
    }

    std::vector<double> hard(out.keep.begin(), out.keep.end());
    if (mode == SampleMode::train && pi.requires_grad()) {
        Tensor perturbed = add(log(add_scalar(pi, 1e-12)), Tensor::matrix(n, 2, std::move(noise)));
        Tensor soft = slice_cols(softmax(scale(perturbed, 1.0 / temperature)), 1, 2);
        out.gate = straight_through(std::move(hard), reshape(soft, {n}));
    } else {
        out.gate = Tensor::vector(std::move(hard));
    }
    return out;
}

Tensor recon_loss(const Tensor& kept, const Tensor& original, const Gru& gru, std::size_t seq_len) {
    if (kept.shape() != original.shape()) throw DimensionError("recon_loss: kept and original shapes differ");
    if (kept.rank() != 2 || kept.rows() == 0) throw InputError("recon_loss: empty sequence");
    Tensor diff = sub(gru.encode(kept, seq_len), gru.encode(original, seq_len));
    return mean(row_norms(diff));
}

KeyframeHead::KeyframeHead(std::size_t dim, std::size_t stride, std::size_t heads, Rng& rng)
    : dim_(dim), stride_(stride), attention_(dim, heads, rng), mlp_(2 * dim, dim, 2, rng) {
    if (stride == 0) throw ConfigError("keyframe stride must be at least 1");
}

Tensor KeyframeHead::global_difference(const Tensor& frames, std::size_t seq_len) const {
    return attention_.forward(frames, frames, frames, seq_len);
}

Tensor KeyframeHead::frame_keep_probabilities(const Tensor& local, const Tensor& global) const {
    return softmax(mlp_.forward(concat(local, global)));
}

Tensor KeyframeHead::probabilities(const Tensor& frames, std::size_t seq_len) const {
    return frame_keep_probabilities(local_difference(frames, stride_, seq_len), global_difference(frames, seq_len));
}

ParamList KeyframeHead::params() const {
    ParamList p;
    append_params(p, "attention", attention_.params());
    append_params(p, "mlp", mlp_.params());
    return p;
}

}  // namespace seqmask
