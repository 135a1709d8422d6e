#pragma once

// Synthetic multimodal domain-shift data with known causal structure.
//
// Per modality, invariant features are parents of the label: half are driven
// by a shared confounder U, half share an exogenous latent h with a paired
// spurious feature. The label is a quantile-binned linear (optionally tanh)
// score of the invariant features plus Gaussian noise. Spurious features are
// children of the label whose sign and strength vary by domain, plus U and h.
// Remaining coordinates are pure noise. Each sample's feature vector is tiled
// into tokens/frames with small Gaussian jitter.

#include <cstdint>
#include <string>
#include <vector>

#include "seqmask/dataset.hpp"
#include "seqmask/mask.hpp"
#include "seqmask/nn.hpp"

namespace seqmask {

struct ModalityCausal {
    std::size_t dim = 64;
    // First half plays the confounded role, second half the edge-linked role.
    std::vector<std::size_t> invariant;
    std::vector<std::size_t> spurious;
    std::vector<double> label_weights;  // one per invariant feature

    std::vector<std::size_t> noise() const;
    std::size_t confounded_count() const { return (invariant.size() + 1) / 2; }
};

struct CausalSpec {
    ModalityCausal text;
    ModalityCausal video;
    std::size_t confounder_dim = 2;
    double confounder_loading = 0.5;    // U -> confounded invariant features
    double spurious_confounding = 0.05;  // U -> spurious features
    double edge_strength = 0.05;         // shared latent h -> edge-linked invariant features
    double label_noise = 2.0;
    std::size_t text_tokens = 4;
    std::size_t video_frames = 6;
    double jitter = 0.05;
    bool nonlinear = false;
    int classes = 3;
    std::uint64_t structure_seed = 7;

    const ModalityCausal& modality(Modality m) const { return m == Modality::text ? text : video; }
    // Throws ConfigError for overlapping or out-of-range supports.
    void validate() const;
};

enum class DomainRole { source, target };

std::string to_string(DomainRole r);
DomainRole domain_role_from_string(const std::string& s);

struct DomainSpec {
    std::string id;
    DomainRole role = DomainRole::source;
    std::size_t n = 2000;
    int sign = 1;
    double strength = 1.0;
    std::uint64_t seed = 1;
};

// Invariant block [0, inv), spurious block [inv, inv + spur), noise after.
ModalityCausal make_modality(std::size_t dim, std::size_t invariant, std::size_t spurious, double weight);

// d = 64 per modality with 8 invariant, 8 spurious and 48 noise features;
// text label weight 1.0, video 0.6.
CausalSpec default_causal_spec();
// Two sources with opposite spurious signs (+1 at 1.0, -1 at 0.5) and one
// target. The default target's spurious correlation vanishes; `flip_target`
// gives it sign -1 at strength 1.0 instead.
std::vector<DomainSpec> default_domains(bool flip_target = false, std::uint64_t seed = 1);

// Label class boundaries on the continuous score (K - 1 ascending values).
std::vector<double> label_thresholds(const CausalSpec& spec);

// Exogenous draws for one sample; realizing them through the structural
// equations gives the observed sample.
struct Exogenous {
    std::vector<double> confounder;
    std::vector<double> text_latent, video_latent;  // h per spurious feature
    std::vector<double> text_noise, video_noise;    // e per feature
    double label_noise = 0.0;
    std::vector<double> text_jitter, video_jitter;  // per token element
};

struct Intervention {
    Modality modality = Modality::text;
    std::size_t feature = 0;
    double value = 0.0;
};

struct CausalDraw {
    Exogenous exogenous;
    Sample sample;
    double score = 0.0;
};

class Generator {
   public:
    explicit Generator(CausalSpec spec);

    const CausalSpec& spec() const { return spec_; }
    const std::vector<double>& thresholds() const { return thresholds_; }

    Exogenous draw_exogenous(Rng& rng) const;
    // Evaluates the structural equations, honoring any do() interventions.
    CausalDraw realize(const Exogenous& exo, const DomainSpec& domain,
                       const std::vector<Intervention>& interventions = {}) const;
    CausalDraw draw(const DomainSpec& domain, Rng& rng) const;

    int label_of(double score) const;

   private:
    CausalSpec spec_;
    std::vector<double> thresholds_;
    // Unit loading vectors on U, indexed by modality then feature.
    std::vector<std::vector<double>> text_loading_, video_loading_;
};

Dataset generate_dataset(const CausalSpec& spec, const std::vector<DomainSpec>& domains);

// Sets feature `feature` of `modality` to `value`, severs its incoming edges,
// and regenerates its descendants (the label and spurious features when the
// feature is invariant) from the same exogenous draws.
CausalDraw intervene(const Generator& gen, const CausalDraw& draw, const DomainSpec& domain,
                     const Intervention& intervention);

// Pa(Y) restricted to one modality.
std::vector<std::size_t> ground_truth_support(const CausalSpec& spec, Modality modality);
std::vector<std::size_t> spurious_support(const CausalSpec& spec, Modality modality);

}  // namespace seqmask
