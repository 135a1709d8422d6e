#include "seqmask/model.hpp"

#include <cmath>

#include "seqmask/errors.hpp"

namespace seqmask {

std::string to_string(Order order) {
    switch (order) {
        case Order::text_first: return "t2v";
        case Order::video_first: return "v2t";
        case Order::joint: return "joint";
    }
    return "?";
}

Order order_from_string(const std::string& s) {
    if (s == "t2v" || s == "T->V") return Order::text_first;
    if (s == "v2t" || s == "V->T") return Order::video_first;
    if (s == "joint" || s == "T&V") return Order::joint;
    throw ConfigError("unknown learning order '" + s + "' (expected t2v, v2t or joint)");
}

Modality first_modality(Order order) { return order == Order::video_first ? Modality::video : Modality::text; }
Modality second_modality(Order order) { return order == Order::video_first ? Modality::text : Modality::video; }

std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::none: return "none";
        case Ablation::add_noise: return "add_noise";
        case Ablation::domain_specific: return "using_ds";
    }
    return "?";
}

Ablation ablation_from_string(const std::string& s) {
    if (s == "none") return Ablation::none;
    if (s == "add_noise") return Ablation::add_noise;
    if (s == "using_ds") return Ablation::domain_specific;
    throw ConfigError("unknown ablation '" + s + "' (expected none, add_noise or using_ds)");
}

void ModelConfig::validate() const {
    if (classes < 2) throw ConfigError("class count must be at least 2");
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be nonnegative");
    if (text_dim == 0 || video_dim == 0 || text_tokens == 0 || video_frames == 0)
        throw ConfigError("feature dimensions and token counts must be positive");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (encoder_heads == 0 || text_dim % encoder_heads || video_dim % encoder_heads)
        throw ConfigError("encoder heads must divide both feature dimensions");
    if (keyframe && (keyframe_heads == 0 || video_dim % keyframe_heads))
        throw ConfigError("keyframe heads must divide the video dimension");
    if (stride == 0) throw ConfigError("keyframe stride must be at least 1");
    if (!(temperature > 0.0) || !(temperature_floor > 0.0)) throw ConfigError("temperatures must be positive");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("validation fraction must be in [0,1)");
}

double ModelConfig::temperature_at(std::size_t epoch) const {
    return std::max(temperature_floor, temperature * std::pow(temperature_decay, static_cast<double>(epoch)));
}

// ---- TokenEncoder ------------------------------------------------------------

TokenEncoder::TokenEncoder(std::size_t dim, std::size_t heads, Rng& rng)
    : dim_(dim),
      heads_(heads),
      scale_(Tensor::filled({dim}, 1.0, true)),
      shift_(Tensor::zeros({dim}, true)),
      query_(dim, dim, rng),
      key_(dim, dim, rng) {}

Tensor TokenEncoder::forward(const Tensor& x, std::size_t tokens) const {
    if (x.rank() != 2 || x.cols() != dim_) {
        throw DimensionError("encoder expects [*, " + std::to_string(dim_) + "] tokens, got " +
                             shape_string(x.shape()));
    }
    Tensor h = add_row(mul_row(x, scale_), shift_);
    return add(h, block_attention(query_.forward(h), key_.forward(h), h, tokens, heads_));
}

ParamList TokenEncoder::params() const {
    ParamList p{{"scale", scale_}, {"shift", shift_}};
    append_params(p, "query", query_.params());
    append_params(p, "key", key_.params());
    return p;
}

ParamList ModalityPath::params() const {
    ParamList p;
    append_params(p, "encoder", encoder.params());
    append_params(p, "mask", mask.params());
    return p;
}

// ---- ModelParams ---------------------------------------------------------------

ModelParams ModelParams::init(const ModelConfig& config) {
    config.validate();
    Rng rng(config.seed);
    ModelParams p;
    p.config = config;
    p.text.encoder = TokenEncoder(config.text_dim, config.encoder_heads, rng);
    p.text.mask = MaskState::init(config.text_dim, Modality::text, rng, config.r_init, config.s_init);
    p.video.encoder = TokenEncoder(config.video_dim, config.encoder_heads, rng);
    p.video.mask = MaskState::init(config.video_dim, Modality::video, rng, config.r_init, config.s_init);

    const auto K = static_cast<std::size_t>(config.classes);
    const Modality first = first_modality(config.order);
    const std::size_t joint_in = config.text_dim + config.video_dim;
    const std::size_t solo_in = config.dim(first);
    p.head_text = Linear(first == Modality::text ? solo_in : joint_in, K, rng);
    p.head_video = Linear(first == Modality::video ? solo_in : joint_in, K, rng);

    const std::size_t kf_heads = config.keyframe ? config.keyframe_heads : 1;
    p.keyframe = KeyframeHead(config.video_dim, config.stride, kf_heads, rng);
    p.recon = Gru(config.video_dim, config.video_dim, rng);
    return p;
}

ParamList ModelParams::side(Modality m) const {
    ParamList p;
    const std::string name = to_string(m);
    append_params(p, name, path(m).params());
    append_params(p, "head_" + name, head(m).params());
    if (m == Modality::video) {
        append_params(p, "keyframe", keyframe.params());
        append_params(p, "recon", recon.params());
    }
    return p;
}

ParamList ModelParams::all() const {
    ParamList p = side(Modality::text);
    for (auto& q : side(Modality::video)) p.push_back(std::move(q));
    return p;
}

ModelParams ModelParams::deep_copy() const {
    ModelParams copy = ModelParams::init(config);
    copy.copy_values_from(*this);
    return copy;
}

void ModelParams::copy_values_from(const ModelParams& other) {
    auto dst = all();
    const auto src = other.all();
    if (dst.size() != src.size()) throw StateError("parameter sets differ in layout");
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (dst[i].tensor.shape() != src[i].tensor.shape())
            throw StateError("parameter '" + dst[i].name + "' differs in shape");
        auto out = dst[i].tensor.mutable_values();
        const auto in = src[i].tensor.values();
        std::copy(in.begin(), in.end(), out.begin());
    }
}

// ---- batches ------------------------------------------------------------------------

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices, const ModelConfig& config) {
    const std::size_t B = indices.size();
    std::vector<double> text, video;
    text.reserve(B * config.text_tokens * config.text_dim);
    video.reserve(B * config.video_frames * config.video_dim);
    Batch batch;
    batch.size = B;
    for (auto i : indices) {
        const Sample& s = data.samples.at(i);
        if (s.text.rows != config.text_tokens || s.text.cols != config.text_dim) {
            throw DimensionError("sample '" + s.id + "' text is " + std::to_string(s.text.rows) + "x" +
                                 std::to_string(s.text.cols) + ", model expects " +
                                 std::to_string(config.text_tokens) + "x" + std::to_string(config.text_dim));
        }
        if (s.video.rows != config.video_frames || s.video.cols != config.video_dim) {
            throw DimensionError("sample '" + s.id + "' video is " + std::to_string(s.video.rows) + "x" +
                                 std::to_string(s.video.cols) + ", model expects " +
                                 std::to_string(config.video_frames) + "x" + std::to_string(config.video_dim));
        }
        text.insert(text.end(), s.text.values.begin(), s.text.values.end());
        video.insert(video.end(), s.video.values.begin(), s.video.values.end());
        batch.labels.push_back(s.label);
        batch.domains.push_back(s.domain);
    }
    batch.text = Tensor::matrix(B * config.text_tokens, config.text_dim, std::move(text));
    batch.video = Tensor::matrix(B * config.video_frames, config.video_dim, std::move(video));
    return batch;
}

Batch make_batch(const Dataset& data, const ModelConfig& config) {
    std::vector<std::size_t> all(data.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return make_batch(data, all, config);
}

// ---- forward ----------------------------------------------------------------------------

Tensor encode(const Batch& batch, const ModelParams& params, Modality modality, const ForwardOptions& options,
              ModalityOutput* details) {
    const auto& cfg = params.config;
    Tensor x = batch.features(modality);
    const std::size_t tokens = cfg.tokens(modality);
    if (modality == Modality::video && cfg.keyframe) {
        if (options.mode == SampleMode::train && options.rng == nullptr)
            throw StateError("keyframe sampling in train mode needs an RNG");
        Rng fallback(cfg.seed);
        Rng& rng = options.rng ? *options.rng : fallback;
        Tensor pi = params.keyframe.probabilities(x, tokens);
        Decision decision = sample_decision(pi, tokens, options.mode, options.temperature, rng);
        Tensor kept = mul_col(x, decision.gate);
        if (details) {
            if (options.mode == SampleMode::train) details->recon = recon_loss(kept, x, params.recon, tokens);
            details->decision = std::move(decision);
        }
        x = kept;
    }
    return params.path(modality).encoder.forward(x, tokens);
}

ModalityOutput run_modality(const Batch& batch, const ModelParams& params, Modality modality,
                            const ForwardOptions& options) {
    ModalityOutput out;
    out.encoded = encode(batch, params, modality, options, &out);
    const MaskState& mask = params.path(modality).mask;
    out.masked = apply_mask(out.encoded, mask);
    const std::size_t tokens = params.config.tokens(modality);
    switch (options.evidence) {
        case Evidence::learned:
            out.fused = token_fuse(out.masked.x_c, out.masked.m, tokens);
            break;
        case Evidence::noise: {
            if (options.rng == nullptr) throw StateError("noise evidence needs an RNG");
            std::normal_distribution<double> normal(0.0, 1.0);
            std::vector<double> v(batch.size * mask.dim());
            for (double& e : v) e = normal(*options.rng);
            out.fused = Tensor::matrix(batch.size, mask.dim(), std::move(v));
            break;
        }
        case Evidence::removed: {
            // Complement mask r * (1 - p): only the features the mask dropped.
            std::vector<double> m(mask.dim());
            for (std::size_t i = 0; i < m.size(); ++i) m[i] = out.masked.pattern[i] ? 0.0 : mask.r[i];
            Tensor removed_m = Tensor::vector(std::move(m));
            out.fused = token_fuse(mul_row(out.encoded, removed_m), removed_m, tokens);
            break;
        }
    }
    return out;
}

Tensor head_logits(const ModelParams& params, Modality modality, const Tensor& own_fused,
                   const Tensor* conditioning) {
    const Linear& head = params.head(modality);
    if (modality == first_modality(params.config.order)) return head.forward(own_fused);
    if (conditioning == nullptr || !conditioning->defined()) {
        throw StateError("the " + to_string(modality) + " head in " + to_string(params.config.order) +
                         " order needs the fused " + to_string(first_modality(params.config.order)) +
                         " vector as conditioning");
    }
    return head.forward(concat(*conditioning, own_fused));
}

Tensor forward_text(const Batch& batch, const ModelParams& params, const ForwardOptions& options,
                    const Tensor* conditioning) {
    return head_logits(params, Modality::text, run_modality(batch, params, Modality::text, options).fused,
                       conditioning);
}

Tensor forward_video(const Batch& batch, const ModelParams& params, const Tensor* conditioning,
                     const ForwardOptions& options) {
    return head_logits(params, Modality::video, run_modality(batch, params, Modality::video, options).fused,
                       conditioning);
}

Tensor final_logits(const Batch& batch, const ModelParams& params, const ForwardOptions& options) {
    const Modality first = first_modality(params.config.order);
    const Modality second = second_modality(params.config.order);
    Tensor first_fused = run_modality(batch, params, first, options).fused;
    Tensor second_fused = run_modality(batch, params, second, options).fused;
    return head_logits(params, second, second_fused, &first_fused);
}

namespace {

StageLoss stage_loss(const Batch& batch, const ModelParams& params, Modality modality, double alpha,
                     const ForwardOptions& options, const Tensor* conditioning) {
    StageLoss out;
    out.output = run_modality(batch, params, modality, options);
    out.logits = head_logits(params, modality, out.output.fused, conditioning);
    Tensor ce = cross_entropy(out.logits, batch.labels);
    Tensor sparse = sparse_loss(params.path(modality).mask);
    out.ce = ce.item();
    out.sparse = sparse.item();
    out.total = alpha != 0.0 ? add(ce, scale(sparse, alpha)) : ce;
    if (out.output.recon && params.config.recon_weight != 0.0) {
        out.recon = out.output.recon->item();
        out.total = add(out.total, scale(*out.output.recon, params.config.recon_weight));
    }
    return out;
}

}  // namespace

StageLoss loss_stage_text(const Batch& batch, const ModelParams& params, double alpha, const ForwardOptions& options,
                          const Tensor* conditioning) {
    return stage_loss(batch, params, Modality::text, alpha, options, conditioning);
}

StageLoss loss_stage_video(const Batch& batch, const ModelParams& params, double alpha,
                           const ForwardOptions& options, const Tensor* conditioning) {
    return stage_loss(batch, params, Modality::video, alpha, options, conditioning);
}

int argmax_row(const Tensor& logits, std::size_t row) {
    const std::size_t k = logits.cols();
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
        if (logits.at(row, j) > logits.at(row, best)) best = j;
    return static_cast<int>(best);
}

}  // namespace seqmask
