#pragma once

// Flat run configuration. Every setting has a dotted key:
//   model.*     training and architecture (ModelConfig)
//   gen.*       synthetic generator structure (CausalSpec)
//   domain.<id>.{role,n,sign,strength,seed}
//   domains.preset = default | flip   (replaces the domain list)
//   analysis.*  Fisher test level, feature source, label encoding
//   run.seeds, run.output

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "seqmask/analysis.hpp"
#include "seqmask/model.hpp"
#include "seqmask/synthgen.hpp"

namespace seqmask {

struct GeneratorShape {
    std::size_t text_dim = 64, video_dim = 64;
    std::size_t text_invariant = 8, text_spurious = 8;
    std::size_t video_invariant = 8, video_spurious = 8;
    double text_weight = 1.0, video_weight = 0.6;
};

struct RunConfig {
    ModelConfig model;
    GeneratorShape shape;
    CausalSpec causal = default_causal_spec();
    std::vector<DomainSpec> domains = default_domains();
    std::string domains_preset = "default";

    double level = kDefaultLevel;
    FeatureSource feature_source = FeatureSource::masked;
    LabelEncoding label_encoding = LabelEncoding::ordinal;
    int positive_class = 0;

    std::vector<std::uint64_t> seeds{1};
    std::string output = "out";

    // Applies one key. Throws UnknownKeyError for unknown keys and
    // ConfigError for unparsable values.
    void set(const std::string& key, const std::string& value);
    // "key = value" lines, '#' starts a comment.
    void load(std::istream& in, const std::string& origin = "<config>");
    void load(const std::filesystem::path& path);

    // Generator spec with supports built from `shape`.
    CausalSpec causal_spec() const;
    // Model config for seed `seed` with dims and token counts taken from the
    // generator shape.
    ModelConfig model_for(std::uint64_t seed) const;

    // Every key with its resolved value, sorted by key.
    std::vector<std::pair<std::string, std::string>> entries() const;
    nlohmann::ordered_json to_json() const;
};

// Keys accepted by RunConfig::set besides the dynamic domain.<id>.* family.
std::vector<std::string> known_keys();

nlohmann::ordered_json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace seqmask
