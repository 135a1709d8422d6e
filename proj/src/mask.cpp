#include "seqmask/mask.hpp"

#include <cmath>

#include "seqmask/errors.hpp"

namespace seqmask {

std::string to_string(Modality m) { return m == Modality::text ? "text" : "video"; }

Modality modality_from_string(const std::string& s) {
    if (s == "text") return Modality::text;
    if (s == "video") return Modality::video;
    throw ConfigError("unknown modality '" + s + "'");
}

int unit_step(double t) { return t < 0.0 ? 0 : 1; }

double surrogate_step_grad(double t) {
    const double a = std::fabs(t);
    if (a <= 0.4) return 2.0 - 4.0 * a;
    if (a <= 1.0) return 0.4;
    return 0.0;
}

MaskState MaskState::init(std::size_t dim, Modality modality, Rng& rng, double r_range, double s_init) {
    std::uniform_real_distribution<double> dist(-r_range, r_range);
    std::vector<double> r(dim);
    for (double& v : r) v = dist(rng);
    MaskState state;
    state.modality = modality;
    state.r = Tensor::vector(std::move(r), true);
    state.s = Tensor::filled({dim}, s_init, true);
    return state;
}

std::vector<std::uint8_t> MaskState::pattern() const {
    std::vector<std::uint8_t> p(dim());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<std::uint8_t>(unit_step(std::fabs(r[i]) - s[i]));
    return p;
}

std::vector<std::size_t> MaskState::support() const {
    std::vector<std::size_t> out;
    const auto p = pattern();
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i]) out.push_back(i);
    return out;
}

ParamList MaskState::params() const { return {{"r", r}, {"s", s}}; }

Tensor mask_vector(const MaskState& state) {
    const std::size_t d = state.dim();
    if (state.s.numel() != d) throw DimensionError("mask r and s lengths differ");
    std::vector<double> m(d);
    for (std::size_t i = 0; i < d; ++i) m[i] = state.r[i] * unit_step(std::fabs(state.r[i]) - state.s[i]);
    auto pr = state.r.node();
    auto ps = state.s.node();
    return detail::record({d}, std::move(m), {state.r, state.s}, [pr, ps, d](detail::Node& self) {
        double* gr = pr->requires_grad ? pr->grad_buffer() : nullptr;
        double* gs = ps->requires_grad ? ps->grad_buffer() : nullptr;
        for (std::size_t i = 0; i < d; ++i) {
            const double r = pr->value[i];
            const double t = std::fabs(r) - ps->value[i];
            const double step = unit_step(t);
            const double slope = surrogate_step_grad(t);
            const double sign = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
            const double g = self.grad[i];
            // m = r * F(|r| - s)
            if (gr) gr[i] += g * (step + r * slope * sign);
            if (gs) gs[i] -= g * r * slope;
        }
    });
}

MaskedFeatures apply_mask(const Tensor& x, const MaskState& state) {
    if (x.rank() != 2 || x.cols() != state.dim()) {
        throw DimensionError("apply_mask: features " + shape_string(x.shape()) + " do not match mask width " +
                             std::to_string(state.dim()));
    }
    MaskedFeatures out;
    out.m = mask_vector(state);
    out.x_c = mul_row(x, out.m);
    out.pattern = state.pattern();
    for (std::size_t i = 0; i < out.pattern.size(); ++i)
        if (out.pattern[i]) out.support.push_back(i);
    out.retained_fraction = state.dim() ? static_cast<double>(out.support.size()) / state.dim() : 0.0;
    return out;
}

Tensor sparse_loss(const MaskState& state) { return sum(exp(scale(state.s, -1.0))); }

Tensor token_fuse(const Tensor& x_c, const Tensor& m, std::size_t tokens) {
    if (tokens == 0) throw InputError("token_fuse needs at least one token");
    Tensor weights = block_softmax(cosine_rows(x_c, m), tokens);
    return block_weighted_sum(weights, x_c, tokens);
}

Tensor token_fuse(const Tensor& x_c, const Tensor& m) {
    return reshape(token_fuse(x_c, m, x_c.rows()), {x_c.cols()});
}

double retained_fraction(const MaskState& state) {
    if (state.dim() == 0) return 0.0;
    return static_cast<double>(state.support().size()) / static_cast<double>(state.dim());
}

}  // namespace seqmask
