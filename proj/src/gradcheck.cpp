#include "seqmask/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "seqmask/errors.hpp"
#include "seqmask/keyframe.hpp"
#include "seqmask/mask.hpp"
#include "seqmask/model.hpp"

namespace seqmask {

namespace {

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

struct Instance {
    std::vector<Tensor> inputs;
    Fn f;
};

using Builder = std::function<Instance(Rng&)>;

// Fixed, non-uniform weights so every output element reaches the loss.
Tensor project(const Tensor& out) {
    std::vector<double> w(out.numel());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::cos(0.7 * static_cast<double>(i) + 0.3);
    return sum(mul(out, Tensor(out.shape(), std::move(w))));
}

Tensor uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return Tensor(std::move(shape), std::move(v), grad);
}

// Entries bounded away from zero so kinks stay out of the difference stencil.
Tensor away_from_zero(Shape shape, Rng& rng, double margin = 0.05) {
    Tensor t = uniform(std::move(shape), rng);
    for (auto& x : t.mutable_values())
        if (std::abs(x) < margin) x = x < 0 ? x - margin : x + margin;
    return t;
}

std::vector<Tensor> tensors_of(const ParamList& params) {
    std::vector<Tensor> out;
    for (const auto& p : params) out.push_back(p.tensor);
    return out;
}

Instance unary(Rng& rng, Tensor (*op)(const Tensor&), double lo = -1.0, double hi = 1.0) {
    Instance in;
    in.inputs = {uniform({3, 4}, rng, lo, hi)};
    in.f = [op](const std::vector<Tensor>& t) { return project(op(t[0])); };
    return in;
}

Instance binary(Rng& rng, Tensor (*op)(const Tensor&, const Tensor&), Shape a, Shape b) {
    Instance in;
    in.inputs = {uniform(std::move(a), rng), uniform(std::move(b), rng)};
    in.f = [op](const std::vector<Tensor>& t) { return project(op(t[0], t[1])); };
    return in;
}

ModelConfig tiny_config(Order order) {
    ModelConfig c;
    c.text_dim = 8;
    c.video_dim = 8;
    c.text_tokens = 3;
    c.video_frames = 4;
    c.encoder_heads = 2;
    c.keyframe_heads = 2;
    c.order = order;
    return c;
}

Batch tiny_batch(const ModelConfig& c, Rng& rng) {
    Batch b;
    b.size = 2;
    b.text = uniform({b.size * c.text_tokens, c.text_dim}, rng, -1, 1, false);
    b.video = uniform({b.size * c.video_frames, c.video_dim}, rng, -1, 1, false);
    b.labels = {0, 2};
    b.domains = {"a", "b"};
    return b;
}

// Encoder and head parameters; mask magnitudes/thresholds use the surrogate
// rule and the eval-mode keyframe gate is piecewise constant, so both are
// excluded from finite differences.
std::vector<Tensor> smooth_params(const ModelParams& p) {
    std::vector<Tensor> out;
    for (const auto& np : p.all()) {
        const auto& n = np.name;
        if (n.find(".mask.") != std::string::npos || n.rfind("keyframe.", 0) == 0 || n.rfind("recon.", 0) == 0)
            continue;
        out.push_back(np.tensor);
    }
    return out;
}

Instance e2e(Rng& rng, Order order, int which) {
    auto c = tiny_config(order);
    c.seed = rng();
    auto params = std::make_shared<ModelParams>(ModelParams::init(c));
    auto batch = std::make_shared<Batch>(tiny_batch(c, rng));
    Instance in;
    in.inputs = smooth_params(*params);
    ForwardOptions opts;
    if (which == 0) {
        in.f = [params, batch, opts](const std::vector<Tensor>&) {
            return cross_entropy(forward_text(*batch, *params, opts), batch->labels);
        };
    } else if (which == 1) {
        Tensor cond = uniform({2, 8}, rng);
        in.inputs.push_back(cond);
        in.f = [params, batch, opts, cond](const std::vector<Tensor>&) {
            return cross_entropy(forward_video(*batch, *params, &cond, opts), batch->labels);
        };
    } else {
        in.f = [params, batch, opts](const std::vector<Tensor>&) {
            return cross_entropy(final_logits(*batch, *params, opts), batch->labels);
        };
    }
    return in;
}

const std::vector<std::pair<std::string, Builder>>& registry() {
    static const std::vector<std::pair<std::string, Builder>> checks = {
        {"add", [](Rng& r) { return binary(r, add, {3, 4}, {3, 4}); }},
        {"sub", [](Rng& r) { return binary(r, sub, {3, 4}, {3, 4}); }},
        {"mul", [](Rng& r) { return binary(r, mul, {3, 4}, {3, 4}); }},
        {"scale",
         [](Rng& r) {
             Instance in{{uniform({3, 4}, r)}, [](const std::vector<Tensor>& t) { return project(scale(t[0], -1.7)); }};
             return in;
         }},
        {"add_scalar",
         [](Rng& r) {
             Instance in{{uniform({3, 4}, r)},
                         [](const std::vector<Tensor>& t) { return project(mul(add_scalar(t[0], 0.3), t[0])); }};
             return in;
         }},
        {"relu",
         [](Rng& r) {
             Instance in{{away_from_zero({3, 4}, r)}, [](const std::vector<Tensor>& t) { return project(relu(t[0])); }};
             return in;
         }},
        {"tanh", [](Rng& r) { return unary(r, tanh, -2, 2); }},
        {"sigmoid", [](Rng& r) { return unary(r, sigmoid, -3, 3); }},
        {"exp", [](Rng& r) { return unary(r, exp); }},
        {"log", [](Rng& r) { return unary(r, log, 0.5, 2.0); }},
        {"add_row", [](Rng& r) { return binary(r, add_row, {3, 4}, {4}); }},
        {"mul_row", [](Rng& r) { return binary(r, mul_row, {3, 4}, {4}); }},
        {"mul_col", [](Rng& r) { return binary(r, mul_col, {3, 4}, {3}); }},
        {"matmul", [](Rng& r) { return binary(r, matmul, {3, 4}, {4, 2}); }},
        {"concat_vector", [](Rng& r) { return binary(r, concat, {3}, {2}); }},
        {"concat_matrix", [](Rng& r) { return binary(r, concat, {3, 2}, {3, 4}); }},
        {"slice_cols",
         [](Rng& r) {
             Instance in{{uniform({3, 5}, r)},
                         [](const std::vector<Tensor>& t) { return project(slice_cols(t[0], 1, 4)); }};
             return in;
         }},
        {"slice_rows",
         [](Rng& r) {
             Instance in{{uniform({5, 3}, r)},
                         [](const std::vector<Tensor>& t) { return project(slice_rows(t[0], 2, 5)); }};
             return in;
         }},
        {"gather_rows",
         [](Rng& r) {
             Instance in{{uniform({4, 3}, r)}, [](const std::vector<Tensor>& t) {
                             const std::vector<std::size_t> rows{2, 0, 2, 3};
                             return project(gather_rows(t[0], rows));
                         }};
             return in;
         }},
        {"reshape",
         [](Rng& r) {
             Instance in{{uniform({2, 6}, r)},
                         [](const std::vector<Tensor>& t) { return project(tanh(reshape(t[0], {3, 4}))); }};
             return in;
         }},
        {"sum",
         [](Rng& r) {
             Instance in{{uniform({3, 4}, r)}, [](const std::vector<Tensor>& t) { return sum(mul(t[0], t[0])); }};
             return in;
         }},
        {"mean",
         [](Rng& r) {
             Instance in{{uniform({3, 4}, r)}, [](const std::vector<Tensor>& t) { return mean(tanh(t[0])); }};
             return in;
         }},
        {"mean_rows", [](Rng& r) { return unary(r, mean_rows); }},
        {"row_norms", [](Rng& r) { return unary(r, row_norms); }},
        {"softmax_vector",
         [](Rng& r) {
             Instance in{{uniform({5}, r, -2, 2)}, [](const std::vector<Tensor>& t) { return project(softmax(t[0])); }};
             return in;
         }},
        {"softmax_rows", [](Rng& r) { return unary(r, softmax, -2, 2); }},
        {"log_softmax", [](Rng& r) { return unary(r, log_softmax, -2, 2); }},
        {"cross_entropy",
         [](Rng& r) {
             Instance in{{uniform({3, 4}, r, -2, 2)}, [](const std::vector<Tensor>& t) {
                             const std::vector<int> labels{1, 3, 0};
                             return cross_entropy(t[0], labels);
                         }};
             return in;
         }},
        {"block_attention",
         [](Rng& r) {
             Instance in{{uniform({6, 4}, r), uniform({6, 4}, r), uniform({6, 4}, r)},
                         [](const std::vector<Tensor>& t) { return project(block_attention(t[0], t[1], t[2], 3, 2)); }};
             return in;
         }},
        {"cosine_rows", [](Rng& r) { return binary(r, cosine_rows, {4, 3}, {3}); }},
        {"block_softmax",
         [](Rng& r) {
             Instance in{{uniform({6}, r, -2, 2)},
                         [](const std::vector<Tensor>& t) { return project(block_softmax(t[0], 3)); }};
             return in;
         }},
        {"block_weighted_sum",
         [](Rng& r) {
             Instance in{{uniform({6}, r), uniform({6, 3}, r)},
                         [](const std::vector<Tensor>& t) { return project(block_weighted_sum(t[0], t[1], 3)); }};
             return in;
         }},
        {"linear",
         [](Rng& r) {
             auto lin = std::make_shared<Linear>(4, 3, r);
             Instance in;
             in.inputs = tensors_of(lin->params());
             in.inputs.push_back(uniform({5, 4}, r));
             in.f = [lin](const std::vector<Tensor>& t) { return project(lin->forward(t.back())); };
             return in;
         }},
        {"mlp",
         [](Rng& r) {
             auto mlp = std::make_shared<Mlp>(4, 5, 3, r);
             Tensor x = uniform({3, 4}, r);
             // Keep hidden pre-activations clear of the relu kink.
             for (int tries = 0; tries < 100; ++tries) {
                 Tensor pre = mlp->first().forward(x);
                 double margin = 1.0;
                 for (double v : pre.values()) margin = std::min(margin, std::abs(v));
                 if (margin > 1e-3) break;
                 x = uniform({3, 4}, r);
             }
             Instance in;
             in.inputs = tensors_of(mlp->params());
             in.inputs.push_back(x);
             in.f = [mlp](const std::vector<Tensor>& t) { return project(mlp->forward(t.back())); };
             return in;
         }},
        {"multi_head_attention",
         [](Rng& r) {
             auto mha = std::make_shared<MultiHeadAttention>(4, 2, r);
             Instance in;
             in.inputs = tensors_of(mha->params());
             in.inputs.push_back(uniform({6, 4}, r));
             in.inputs.push_back(uniform({6, 4}, r));
             in.f = [mha](const std::vector<Tensor>& t) {
                 const auto& q = t[t.size() - 2];
                 const auto& kv = t.back();
                 return project(mha->forward(q, kv, kv, 3));
             };
             return in;
         }},
        {"gru",
         [](Rng& r) {
             auto gru = std::make_shared<Gru>(3, 4, r);
             Instance in;
             in.inputs = tensors_of(gru->params());
             in.inputs.push_back(uniform({6, 3}, r));
             in.f = [gru](const std::vector<Tensor>& t) { return project(gru->encode(t.back(), 3)); };
             return in;
         }},
        {"recon_loss",
         [](Rng& r) {
             auto gru = std::make_shared<Gru>(3, 3, r);
             Instance in;
             in.inputs = tensors_of(gru->params());
             in.inputs.push_back(uniform({8, 3}, r));
             in.inputs.push_back(uniform({8, 3}, r));
             in.f = [gru](const std::vector<Tensor>& t) {
                 return recon_loss(t[t.size() - 2], t.back(), *gru, 4);
             };
             return in;
         }},
        {"local_difference",
         [](Rng& r) {
             Instance in{{uniform({8, 3}, r)}, [](const std::vector<Tensor>& t) {
                             return add(project(local_difference(t[0], 1, 4)), project(local_difference(t[0], 2, 4)));
                         }};
             return in;
         }},
        {"global_difference",
         [](Rng& r) {
             auto head = std::make_shared<KeyframeHead>(4, 1, 2, r);
             Instance in;
             in.inputs = tensors_of(head->attention().params());
             in.inputs.push_back(uniform({8, 4}, r));
             in.f = [head](const std::vector<Tensor>& t) { return project(head->global_difference(t.back(), 4)); };
             return in;
         }},
        {"keep_probabilities",
         [](Rng& r) {
             auto head = std::make_shared<KeyframeHead>(4, 1, 2, r);
             Tensor local = uniform({8, 4}, r), global = uniform({8, 4}, r);
             for (int tries = 0; tries < 100; ++tries) {
                 Tensor pre = head->mlp().first().forward(concat(local, global));
                 double margin = 1.0;
                 for (double v : pre.values()) margin = std::min(margin, std::abs(v));
                 if (margin > 1e-3) break;
                 local = uniform({8, 4}, r);
                 global = uniform({8, 4}, r);
             }
             Instance in;
             in.inputs = tensors_of(head->mlp().params());
             in.inputs.push_back(local);
             in.inputs.push_back(global);
             in.f = [head](const std::vector<Tensor>& t) {
                 return project(head->frame_keep_probabilities(t[t.size() - 2], t.back()));
             };
             return in;
         }},
        {"token_encoder",
         [](Rng& r) {
             auto enc = std::make_shared<TokenEncoder>(4, 2, r);
             Instance in;
             in.inputs = tensors_of(enc->params());
             in.inputs.push_back(uniform({6, 4}, r));
             in.f = [enc](const std::vector<Tensor>& t) { return project(enc->forward(t.back(), 3)); };
             return in;
         }},
        {"apply_mask",
         [](Rng& r) {
             auto state = std::make_shared<MaskState>(MaskState::init(5, Modality::text, r));
             state->r.set_requires_grad(false);
             state->s.set_requires_grad(false);
             Instance in{{uniform({6, 5}, r)},
                         [state](const std::vector<Tensor>& t) { return project(apply_mask(t[0], *state).x_c); }};
             return in;
         }},
        {"token_fuse",
         [](Rng& r) {
             Instance in{{uniform({6, 4}, r), away_from_zero({4}, r)},
                         [](const std::vector<Tensor>& t) { return project(token_fuse(t[0], t[1], 3)); }};
             return in;
         }},
        {"sparse_loss",
         [](Rng& r) {
             auto state = std::make_shared<MaskState>(MaskState::init(5, Modality::text, r));
             state->s = uniform({5}, r, -1, 1);
             Instance in{{state->s}, [state](const std::vector<Tensor>&) { return sparse_loss(*state); }};
             return in;
         }},
        {"forward_text", [](Rng& r) { return e2e(r, Order::text_first, 0); }},
        {"forward_video", [](Rng& r) { return e2e(r, Order::text_first, 1); }},
        {"final_logits_t2v", [](Rng& r) { return e2e(r, Order::text_first, 2); }},
        {"final_logits_v2t", [](Rng& r) { return e2e(r, Order::video_first, 2); }},
    };
    return checks;
}

}  // namespace

double gradient_error(const Fn& f, const std::vector<Tensor>& inputs, double step) {
    for (auto t : inputs) t.zero_grad();
    Tensor loss = f(inputs);
    if (loss.numel() != 1) throw DimensionError("gradient check needs a scalar objective");
    loss.backward();

    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (auto t : inputs) {
        const auto analytic = t.grad_or_zero();
        auto values = t.mutable_values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double orig = values[i];
            values[i] = orig + step;
            const double up = f(inputs).item();
            values[i] = orig - step;
            const double down = f(inputs).item();
            values[i] = orig;
            const double numeric = (up - down) / (2.0 * step);
            diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
            a2 += analytic[i] * analytic[i];
            n2 += numeric * numeric;
        }
    }
    return std::sqrt(diff2) / std::max(std::sqrt(a2) + std::sqrt(n2), 1e-12);
}

std::vector<std::string> gradcheck_names() {
    std::vector<std::string> out;
    for (const auto& [name, _] : registry()) out.push_back(name);
    return out;
}

std::vector<GradCheckResult> run_gradchecks(const GradCheckOptions& options, const std::vector<std::string>& only) {
    for (const auto& name : only) {
        const auto& reg = registry();
        if (std::none_of(reg.begin(), reg.end(), [&](const auto& e) { return e.first == name; }))
            throw ConfigError("unknown gradient check '" + name + "'");
    }
    std::vector<GradCheckResult> out;
    std::size_t index = 0;
    for (const auto& [name, build] : registry()) {
        ++index;
        if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
        Rng rng(options.seed * 1000003ULL + index);
        GradCheckResult res;
        res.name = name;
        for (std::size_t i = 0; i < options.instances; ++i) {
            Instance inst = build(rng);
            const double err = gradient_error(inst.f, inst.inputs, options.step);
            res.max_rel_error = std::max(res.max_rel_error, std::isfinite(err) ? err : 1e300);
            ++res.instances;
            if (err < options.tolerance) ++res.passed;
        }
        out.push_back(res);
    }
    return out;
}

}  // namespace seqmask
