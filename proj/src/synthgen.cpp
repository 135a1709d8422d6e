#include "seqmask/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <boost/math/distributions/normal.hpp>

#include "seqmask/errors.hpp"

namespace seqmask {

namespace {

constexpr std::size_t kThresholdDraws = 200000;

std::vector<double> draw_normals(std::size_t n, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> out(n);
    for (auto& v : out) v = normal(rng);
    return out;
}

std::vector<std::vector<double>> draw_loadings(std::size_t dim, std::size_t cdim, Rng& rng) {
    std::vector<std::vector<double>> out(dim);
    for (auto& c : out) {
        c = draw_normals(cdim, rng);
        double norm = std::sqrt(std::inner_product(c.begin(), c.end(), c.begin(), 0.0));
        if (norm == 0.0) norm = 1.0;
        for (auto& v : c) v /= norm;
    }
    return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

void check_modality(const ModalityCausal& m, const std::string& name) {
    if (m.dim == 0) throw ConfigError(name + ": dim must be positive");
    if (m.label_weights.size() != m.invariant.size())
        throw ConfigError(name + ": need one label weight per invariant feature");
    std::set<std::size_t> inv;
    for (auto i : m.invariant) {
        if (i >= m.dim) throw ConfigError(name + ": invariant index " + std::to_string(i) + " out of range");
        if (!inv.insert(i).second) throw ConfigError(name + ": duplicate invariant index " + std::to_string(i));
    }
    std::set<std::size_t> spur;
    for (auto j : m.spurious) {
        if (j >= m.dim) throw ConfigError(name + ": spurious index " + std::to_string(j) + " out of range");
        if (inv.count(j))
            throw ConfigError(name + ": feature " + std::to_string(j) + " is both invariant and spurious");
        if (!spur.insert(j).second) throw ConfigError(name + ": duplicate spurious index " + std::to_string(j));
    }
}

}  // namespace

std::vector<std::size_t> ModalityCausal::noise() const {
    std::vector<bool> used(dim, false);
    for (auto i : invariant) used[i] = true;
    for (auto j : spurious) used[j] = true;
    std::vector<std::size_t> out;
    for (std::size_t f = 0; f < dim; ++f)
        if (!used[f]) out.push_back(f);
    return out;
}

void CausalSpec::validate() const {
    check_modality(text, "text");
    check_modality(video, "video");
    if (classes < 2) throw ConfigError("classes must be at least 2");
    if (text_tokens == 0 || video_frames == 0) throw ConfigError("token and frame counts must be positive");
    if (confounder_dim == 0) throw ConfigError("confounder_dim must be positive");
    if (confounder_loading < 0.0 || confounder_loading > 1.0)
        throw ConfigError("confounder_loading must lie in [0, 1]");
    if (edge_strength < 0.0 || edge_strength > 1.0) throw ConfigError("edge_strength must lie in [0, 1]");
    if (label_noise < 0.0 || jitter < 0.0) throw ConfigError("noise scales must be non-negative");
    if (text.invariant.empty() && video.invariant.empty()) throw ConfigError("the label needs at least one parent");
}

std::string to_string(DomainRole r) { return r == DomainRole::source ? "source" : "target"; }

DomainRole domain_role_from_string(const std::string& s) {
    if (s == "source") return DomainRole::source;
    if (s == "target") return DomainRole::target;
    throw ConfigError("unknown domain role '" + s + "' (expected source or target)");
}

ModalityCausal make_modality(std::size_t dim, std::size_t invariant, std::size_t spurious, double weight) {
    if (invariant + spurious > dim) throw ConfigError("invariant + spurious exceeds modality dim");
    ModalityCausal m;
    m.dim = dim;
    for (std::size_t i = 0; i < invariant; ++i) m.invariant.push_back(i);
    for (std::size_t j = 0; j < spurious; ++j) m.spurious.push_back(invariant + j);
    m.label_weights.assign(invariant, weight);
    return m;
}

CausalSpec default_causal_spec() {
    CausalSpec spec;
    spec.text = make_modality(64, 8, 8, 1.0);
    spec.video = make_modality(64, 8, 8, 0.6);
    return spec;
}

std::vector<DomainSpec> default_domains(bool flip_target, std::uint64_t seed) {
    std::vector<DomainSpec> out;
    out.push_back({"source_0", DomainRole::source, 2000, 1, 1.0, seed * 1000 + 1});
    out.push_back({"source_1", DomainRole::source, 2000, -1, 0.5, seed * 1000 + 2});
    if (flip_target)
        out.push_back({"target_0", DomainRole::target, 2000, -1, 1.0, seed * 1000 + 3});
    else
        out.push_back({"target_0", DomainRole::target, 2000, 1, 0.0, seed * 1000 + 3});
    return out;
}

Generator::Generator(CausalSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    Rng rng(spec_.structure_seed);
    text_loading_ = draw_loadings(spec_.text.dim, spec_.confounder_dim, rng);
    video_loading_ = draw_loadings(spec_.video.dim, spec_.confounder_dim, rng);
    thresholds_ = label_thresholds(spec_);
}

Exogenous Generator::draw_exogenous(Rng& rng) const {
    Exogenous e;
    e.confounder = draw_normals(spec_.confounder_dim, rng);
    e.text_latent = draw_normals(spec_.text.spurious.size(), rng);
    e.video_latent = draw_normals(spec_.video.spurious.size(), rng);
    e.text_noise = draw_normals(spec_.text.dim, rng);
    e.video_noise = draw_normals(spec_.video.dim, rng);
    e.label_noise = draw_normals(1, rng)[0];
    e.text_jitter = draw_normals(spec_.text_tokens * spec_.text.dim, rng);
    e.video_jitter = draw_normals(spec_.video_frames * spec_.video.dim, rng);
    return e;
}

int Generator::label_of(double score) const {
    int y = 0;
    for (double t : thresholds_)
        if (score > t) ++y;
    return y;
}

namespace {

double invariant_value(const ModalityCausal& m, const std::vector<std::vector<double>>& loading,
                       const std::vector<double>& latent, const std::vector<double>& noise,
                       const std::vector<double>& confounder, const CausalSpec& spec, std::size_t k) {
    std::size_t f = m.invariant[k];
    if (k < m.confounded_count()) {
        double a = spec.confounder_loading;
        return a * dot(loading[f], confounder) + std::sqrt(1.0 - a * a) * noise[f];
    }
    if (m.spurious.empty()) return noise[f];
    double rho = spec.edge_strength;
    std::size_t h = (k - m.confounded_count()) % m.spurious.size();
    return rho * latent[h] + std::sqrt(1.0 - rho * rho) * noise[f];
}

const Intervention* find_clamp(const std::vector<Intervention>& ivs, Modality m, std::size_t f) {
    const Intervention* hit = nullptr;
    for (const auto& iv : ivs)
        if (iv.modality == m && iv.feature == f) hit = &iv;
    return hit;
}

}  // namespace

CausalDraw Generator::realize(const Exogenous& exo, const DomainSpec& domain,
                              const std::vector<Intervention>& interventions) const {
    for (const auto& iv : interventions) {
        std::size_t dim = spec_.modality(iv.modality).dim;
        if (iv.feature >= dim)
            throw InputError("intervention on " + to_string(iv.modality) + " feature " + std::to_string(iv.feature) +
                             " outside [0, " + std::to_string(dim) + ")");
    }

    std::vector<double> text(spec_.text.dim), video(spec_.video.dim);
    double score = spec_.label_noise * exo.label_noise;

    auto fill_invariant = [&](Modality mod, std::vector<double>& x) {
        const auto& m = spec_.modality(mod);
        const auto& loading = mod == Modality::text ? text_loading_ : video_loading_;
        const auto& latent = mod == Modality::text ? exo.text_latent : exo.video_latent;
        const auto& noise = mod == Modality::text ? exo.text_noise : exo.video_noise;
        for (std::size_t k = 0; k < m.invariant.size(); ++k) {
            std::size_t f = m.invariant[k];
            double v = invariant_value(m, loading, latent, noise, exo.confounder, spec_, k);
            if (const auto* iv = find_clamp(interventions, mod, f)) v = iv->value;
            x[f] = v;
            score += m.label_weights[k] * (spec_.nonlinear ? std::tanh(v) : v);
        }
    };
    fill_invariant(Modality::text, text);
    fill_invariant(Modality::video, video);

    int label = label_of(score);
    double ycode = label - 0.5 * (spec_.classes - 1);

    auto fill_rest = [&](Modality mod, std::vector<double>& x) {
        const auto& m = spec_.modality(mod);
        const auto& loading = mod == Modality::text ? text_loading_ : video_loading_;
        const auto& latent = mod == Modality::text ? exo.text_latent : exo.video_latent;
        const auto& noise = mod == Modality::text ? exo.text_noise : exo.video_noise;
        for (std::size_t k = 0; k < m.spurious.size(); ++k) {
            std::size_t f = m.spurious[k];
            x[f] = domain.sign * domain.strength * ycode +
                   spec_.spurious_confounding * dot(loading[f], exo.confounder) + latent[k];
        }
        for (auto f : m.noise()) x[f] = noise[f];
        for (std::size_t f = 0; f < m.dim; ++f)
            if (const auto* iv = find_clamp(interventions, mod, f)) x[f] = iv->value;
    };
    fill_rest(Modality::text, text);
    fill_rest(Modality::video, video);

    auto tile = [&](const std::vector<double>& x, std::size_t tokens, const std::vector<double>& jit) {
        FeatureMatrix out(tokens, x.size());
        for (std::size_t t = 0; t < tokens; ++t)
            for (std::size_t f = 0; f < x.size(); ++f) out(t, f) = x[f] + spec_.jitter * jit[t * x.size() + f];
        return out;
    };

    CausalDraw d;
    d.exogenous = exo;
    d.score = score;
    d.sample.domain = domain.id;
    d.sample.label = label;
    d.sample.text = tile(text, spec_.text_tokens, exo.text_jitter);
    d.sample.video = tile(video, spec_.video_frames, exo.video_jitter);
    return d;
}

CausalDraw Generator::draw(const DomainSpec& domain, Rng& rng) const {
    return realize(draw_exogenous(rng), domain);
}

std::vector<double> label_thresholds(const CausalSpec& spec) {
    spec.validate();
    std::vector<double> out;
    const int K = spec.classes;
    if (!spec.nonlinear) {
        // score = sum_i w_i (L_i . Z + s_i e_i) + eps * eta, Z = [U; h_text; h_video]
        std::size_t cdim = spec.confounder_dim;
        std::size_t zdim = cdim + spec.text.spurious.size() + spec.video.spurious.size();
        std::vector<double> loading_sum(zdim, 0.0);
        double var = spec.label_noise * spec.label_noise;

        Rng rng(spec.structure_seed);
        auto text_loading = draw_loadings(spec.text.dim, cdim, rng);
        auto video_loading = draw_loadings(spec.video.dim, cdim, rng);

        auto accumulate = [&](const ModalityCausal& m, const std::vector<std::vector<double>>& loading,
                              std::size_t latent_offset) {
            for (std::size_t k = 0; k < m.invariant.size(); ++k) {
                double w = m.label_weights[k];
                std::size_t f = m.invariant[k];
                if (k < m.confounded_count()) {
                    double a = spec.confounder_loading;
                    for (std::size_t c = 0; c < cdim; ++c) loading_sum[c] += w * a * loading[f][c];
                    var += w * w * (1.0 - a * a);
                } else if (m.spurious.empty()) {
                    var += w * w;
                } else {
                    double rho = spec.edge_strength;
                    std::size_t h = (k - m.confounded_count()) % m.spurious.size();
                    loading_sum[latent_offset + h] += w * rho;
                    var += w * w * (1.0 - rho * rho);
                }
            }
        };
        accumulate(spec.text, text_loading, cdim);
        accumulate(spec.video, video_loading, cdim + spec.text.spurious.size());
        for (double v : loading_sum) var += v * v;

        boost::math::normal_distribution<double> normal(0.0, std::sqrt(var));
        for (int k = 1; k < K; ++k) out.push_back(boost::math::quantile(normal, double(k) / K));
        return out;
    }

    // No closed form under tanh: empirical quantiles of a large fixed draw.
    Rng rng(spec.structure_seed ^ 0x5eedULL);
    Rng structure(spec.structure_seed);
    auto text_loading = draw_loadings(spec.text.dim, spec.confounder_dim, structure);
    auto video_loading = draw_loadings(spec.video.dim, spec.confounder_dim, structure);
    std::vector<double> scores(kThresholdDraws);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& s : scores) {
        std::vector<double> u = draw_normals(spec.confounder_dim, rng);
        std::vector<double> ht = draw_normals(spec.text.spurious.size(), rng);
        std::vector<double> hv = draw_normals(spec.video.spurious.size(), rng);
        std::vector<double> et = draw_normals(spec.text.dim, rng);
        std::vector<double> ev = draw_normals(spec.video.dim, rng);
        s = spec.label_noise * normal(rng);
        for (std::size_t k = 0; k < spec.text.invariant.size(); ++k)
            s += spec.text.label_weights[k] * std::tanh(invariant_value(spec.text, text_loading, ht, et, u, spec, k));
        for (std::size_t k = 0; k < spec.video.invariant.size(); ++k)
            s += spec.video.label_weights[k] *
                 std::tanh(invariant_value(spec.video, video_loading, hv, ev, u, spec, k));
    }
    std::sort(scores.begin(), scores.end());
    for (int k = 1; k < K; ++k) out.push_back(scores[std::size_t(double(k) / K * (scores.size() - 1))]);
    return out;
}

Dataset generate_dataset(const CausalSpec& spec, const std::vector<DomainSpec>& domains) {
    Generator gen(spec);
    std::set<std::string> seen;
    Dataset data;
    for (const auto& domain : domains) {
        if (domain.id.empty()) throw ConfigError("domain id must not be empty");
        if (!seen.insert(domain.id).second) throw ConfigError("duplicate domain id '" + domain.id + "'");
        if (domain.sign != 1 && domain.sign != -1) throw ConfigError("domain sign must be +1 or -1");
        Rng rng(domain.seed);
        for (std::size_t i = 0; i < domain.n; ++i) {
            CausalDraw d = gen.draw(domain, rng);
            d.sample.id = domain.id + "-" + std::to_string(i);
            data.samples.push_back(std::move(d.sample));
        }
    }
    return data;
}

CausalDraw intervene(const Generator& gen, const CausalDraw& draw, const DomainSpec& domain,
                     const Intervention& intervention) {
    CausalDraw out = gen.realize(draw.exogenous, domain, {intervention});
    out.sample.id = draw.sample.id;
    return out;
}

std::vector<std::size_t> ground_truth_support(const CausalSpec& spec, Modality modality) {
    auto out = spec.modality(modality).invariant;
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::size_t> spurious_support(const CausalSpec& spec, Modality modality) {
    auto out = spec.modality(modality).spurious;
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace seqmask
