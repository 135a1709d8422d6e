#pragma once

// The two-modality masked classifier: per-modality token encoders, learnable
// sparse masks with similarity-weighted token fusion, a solo head for the
// modality trained first, and a joint head over [first; second] fused vectors.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seqmask/dataset.hpp"
#include "seqmask/keyframe.hpp"
#include "seqmask/mask.hpp"
#include "seqmask/nn.hpp"

namespace seqmask {

// T->V, V->T, or both modalities optimized together.
enum class Order { text_first, video_first, joint };

std::string to_string(Order order);
Order order_from_string(const std::string& s);
Modality first_modality(Order order);
Modality second_modality(Order order);

// What the final head sees as evidence. `add_noise` replaces both fused
// vectors with standard Gaussian noise; `domain_specific` fuses only the
// features the masks removed.
enum class Ablation { none, add_noise, domain_specific };

std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& s);

struct ModelConfig {
    std::size_t text_dim = 64;
    std::size_t video_dim = 64;
    std::size_t text_tokens = 4;
    std::size_t video_frames = 6;
    int classes = 3;

    double alpha = 1e-2;
    Order order = Order::text_first;
    std::size_t epochs = 60;  // total budget; sequential orders split it in half
    std::size_t batch_size = 16;
    double lr = 2e-3;
    std::size_t warmup_epochs = 3;
    std::uint64_t seed = 1;

    std::size_t encoder_heads = 4;
    bool keyframe = true;
    std::size_t stride = 1;
    std::size_t keyframe_heads = 4;
    double temperature = 1.0;
    double temperature_decay = 0.97;
    double temperature_floor = 0.1;
    double recon_weight = 1.0;

    double r_init = 0.5;
    double s_init = 0.05;
    bool unfreeze_first = false;
    double val_fraction = 0.1;
    bool select_best = true;
    Ablation ablation = Ablation::none;

    // Throws ConfigError on an invalid combination.
    void validate() const;
    std::size_t dim(Modality m) const { return m == Modality::text ? text_dim : video_dim; }
    std::size_t tokens(Modality m) const { return m == Modality::text ? text_tokens : video_frames; }
    double temperature_at(std::size_t epoch) const;
};

// Coordinate-preserving one-layer encoder:
//   h = x * scale + shift
//   out = h + Attention(h Wq, h Wk, h)
// Attention weights mix tokens; values are not projected, so output column i
// only carries input feature i and mask indices stay aligned with features.
class TokenEncoder {
   public:
    TokenEncoder() = default;
    TokenEncoder(std::size_t dim, std::size_t heads, Rng& rng);

    Tensor forward(const Tensor& x, std::size_t tokens) const;
    ParamList params() const;
    std::size_t dim() const { return dim_; }

   private:
    std::size_t dim_ = 0, heads_ = 1;
    Tensor scale_, shift_;
    Linear query_, key_;
};

struct ModalityPath {
    TokenEncoder encoder;
    MaskState mask;

    ParamList params() const;
};

struct ModelParams {
    ModelConfig config;
    ModalityPath text;
    ModalityPath video;
    Linear head_text;
    Linear head_video;
    KeyframeHead keyframe;
    Gru recon;

    static ModelParams init(const ModelConfig& config);

    const ModalityPath& path(Modality m) const { return m == Modality::text ? text : video; }
    const Linear& head(Modality m) const { return m == Modality::text ? head_text : head_video; }
    Linear& head(Modality m) { return m == Modality::text ? head_text : head_video; }

    // Encoder, mask and head of one modality; the video side also owns the
    // keyframe head and the reconstruction GRU.
    ParamList side(Modality m) const;
    ParamList all() const;

    // Independent copy of every parameter value.
    ModelParams deep_copy() const;
    void copy_values_from(const ModelParams& other);
};

// A minibatch with tokens stacked row-wise: text [B*tau_t, d_t], video [B*tau_v, d_v].
struct Batch {
    Tensor text;
    Tensor video;
    std::vector<int> labels;
    std::vector<std::string> domains;
    std::size_t size = 0;

    const Tensor& features(Modality m) const { return m == Modality::text ? text : video; }
};

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices, const ModelConfig& config);
Batch make_batch(const Dataset& data, const ModelConfig& config);

enum class Evidence { learned, noise, removed };

struct ForwardOptions {
    SampleMode mode = SampleMode::eval;
    Rng* rng = nullptr;  // required in train mode and for noise evidence
    double temperature = 1.0;
    Evidence evidence = Evidence::learned;
};

struct ModalityOutput {
    Tensor encoded;  // [B*tau, d], after keyframe gating for video
    MaskedFeatures masked;
    Tensor fused;  // [B, d]
    std::optional<Tensor> recon;
    std::optional<Decision> decision;
};

// Projects and self-attends one modality; video frames pass through keyframe
// masking first when enabled.
Tensor encode(const Batch& batch, const ModelParams& params, Modality modality, const ForwardOptions& options,
              ModalityOutput* details = nullptr);

// encode -> apply_mask -> token_fuse (or the configured evidence substitute).
ModalityOutput run_modality(const Batch& batch, const ModelParams& params, Modality modality,
                            const ForwardOptions& options);

// Head logits of `modality`. The head of the first-trained modality reads only
// its own fused vector; the other head reads [conditioning; own] and throws
// StateError when conditioning is absent.
Tensor head_logits(const ModelParams& params, Modality modality, const Tensor& own_fused,
                   const Tensor* conditioning);

Tensor forward_text(const Batch& batch, const ModelParams& params, const ForwardOptions& options,
                    const Tensor* conditioning = nullptr);
Tensor forward_video(const Batch& batch, const ModelParams& params, const Tensor* conditioning,
                     const ForwardOptions& options);

// Logits used for prediction: the joint head of the second modality.
Tensor final_logits(const Batch& batch, const ModelParams& params, const ForwardOptions& options);

struct StageLoss {
    Tensor total;
    double ce = 0.0;
    double sparse = 0.0;
    double recon = 0.0;
    Tensor logits;
    ModalityOutput output;
};

// CE(O_t) + alpha * sparse(text mask)
StageLoss loss_stage_text(const Batch& batch, const ModelParams& params, double alpha, const ForwardOptions& options,
                          const Tensor* conditioning = nullptr);
// CE(O_v) + alpha * sparse(video mask) + recon_weight * recon
StageLoss loss_stage_video(const Batch& batch, const ModelParams& params, double alpha,
                           const ForwardOptions& options, const Tensor* conditioning = nullptr);

// Argmax with ties to the lowest index.
int argmax_row(const Tensor& logits, std::size_t row);

}  // namespace seqmask
