#pragma once

// Learnable sparse feature masks.
//
// Each modality owns a magnitude vector r and a threshold vector s. The binary
// pattern p = step(|r| - s) selects features, m = r * p scales them, and the
// masked tokens are x * m. The step is exact in the forward pass; backward
// substitutes a piecewise-linear surrogate derivative so r and s can train.

#include <cstdint>
#include <string>
#include <vector>

#include "seqmask/nn.hpp"

namespace seqmask {

enum class Modality { text, video };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

// 0 for t < 0, 1 for t >= 0.
int unit_step(double t);

// 2 - 4|t| for |t| <= 0.4, 0.4 for 0.4 <= |t| <= 1, 0 beyond.
double surrogate_step_grad(double t);

struct MaskState {
    Modality modality = Modality::text;
    Tensor r;  // magnitudes, [d]
    Tensor s;  // thresholds, [d]

    // r ~ U(-r_range, r_range), s = s_init.
    static MaskState init(std::size_t dim, Modality modality, Rng& rng, double r_range = 0.5, double s_init = 0.05);

    std::size_t dim() const { return r.numel(); }
    std::vector<std::uint8_t> pattern() const;
    std::vector<std::size_t> support() const;
    ParamList params() const;
};

struct MaskedFeatures {
    Tensor x_c;                          // masked tokens, same shape as x
    Tensor m;                            // mask vector r * p, [d]
    std::vector<std::uint8_t> pattern;   // p
    std::vector<std::size_t> support;    // indices with p = 1
    double retained_fraction = 0.0;
};

// m = r * step(|r| - s) with the surrogate backward rule.
Tensor mask_vector(const MaskState& state);

// Masks every token row of x ([tokens, d] or [B*tokens, d]).
MaskedFeatures apply_mask(const Tensor& x, const MaskState& state);

// sum_i exp(-s_i)
Tensor sparse_loss(const MaskState& state);

// Similarity-weighted token fusion: weights are a softmax over tokens of
// cos(m, x_c[j]) and the output is the weighted sum of the token rows.
// x_c holds stacked sequences of `tokens` rows; returns [B, d].
Tensor token_fuse(const Tensor& x_c, const Tensor& m, std::size_t tokens);
// Single sequence; returns [d].
Tensor token_fuse(const Tensor& x_c, const Tensor& m);

double retained_fraction(const MaskState& state);

}  // namespace seqmask
