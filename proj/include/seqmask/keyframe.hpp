#pragma once

// Keyframe-aware frame masking for the video stream: local and global
// temporal-difference embeddings feed a small MLP that predicts per-frame
// drop/keep probabilities; a sampled decision vector zeroes dropped frames and
// a GRU reconstruction penalty keeps the kept sequence semantically close to
// the original.

#include <cstdint>
#include <vector>

#include "seqmask/nn.hpp"

namespace seqmask {

// Windowed difference with replicate padding, as a linear map over frames:
//   out_i = (sum_{j=i-k..i} x_j + sum_{j=i+1..i+k} x_j) / 2k - x_i
// Indices outside [0, T) clamp to the first/last frame. `frames` stacks
// sequences of seq_len rows.
Tensor local_difference(const Tensor& frames, std::size_t stride, std::size_t seq_len);
Tensor local_difference(const Tensor& frames, std::size_t stride);

enum class SampleMode { train, eval };

struct Decision {
    std::vector<std::uint8_t> keep;  // D, one entry per frame row
    Tensor gate;                     // D as a tensor; straight-through in train mode
};

// pi: [N, 2] rows (drop, keep). Train mode draws Gumbel-perturbed hard samples
// with soft gradients at `temperature`; eval mode takes the argmax (ties go to
// the lower index, i.e. drop). Any sequence left without a kept frame keeps
// the frame with the highest keep probability (lowest index on ties).
Decision sample_decision(const Tensor& pi, std::size_t seq_len, SampleMode mode, double temperature, Rng& rng);

// Mean over sequences of || GRU(kept) - GRU(original) ||_2.
Tensor recon_loss(const Tensor& kept, const Tensor& original, const Gru& gru, std::size_t seq_len);

class KeyframeHead {
   public:
    KeyframeHead() = default;
    KeyframeHead(std::size_t dim, std::size_t stride, std::size_t heads, Rng& rng);

    Tensor global_difference(const Tensor& frames, std::size_t seq_len) const;
    // softmax(MLP([M_local, M_global])) per frame; column 0 = drop, 1 = keep.
    Tensor frame_keep_probabilities(const Tensor& local, const Tensor& global) const;
    // Convenience: both difference embeddings followed by the probability head.
    Tensor probabilities(const Tensor& frames, std::size_t seq_len) const;

    std::size_t stride() const { return stride_; }
    std::size_t dim() const { return dim_; }
    ParamList params() const;
    Mlp& mlp() { return mlp_; }
    MultiHeadAttention& attention() { return attention_; }

   private:
    std::size_t dim_ = 0, stride_ = 1;
    MultiHeadAttention attention_;
    Mlp mlp_;
};

}  // namespace seqmask
