#pragma once

// JSON encodings of checkpoints, training/evaluation/analysis reports and
// generator ground truth.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqmask/analysis.hpp"
#include "seqmask/synthgen.hpp"
#include "seqmask/trainer.hpp"

namespace seqmask {

using ojson = nlohmann::ordered_json;

constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    ModelParams params;
    ojson run_config;
    std::string rng_state;
};

ojson checkpoint_json(const ModelParams& params, const std::string& rng_state, const ojson& run_config);
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const std::string& rng_state,
                     const ojson& run_config);
// Throws FormatError for a wrong header, version, missing or misshapen tensor.
Checkpoint checkpoint_from_json(const nlohmann::json& j);
Checkpoint load_checkpoint(const std::filesystem::path& path);

ojson to_json(const StageReport& report);
ojson to_json(const std::vector<StageReport>& stages);
// Per-domain accuracy grouped by role when roles are known.
ojson to_json(const EvalReport& report, const std::vector<DomainSpec>& roles = {});
ojson to_json(const IndependenceReport& report);
ojson to_json(const LabelCorrelation& report);
ojson to_json(const OverlapReport& report);
ojson to_json(const RecoveryScore& score);

ojson ground_truth_json(const CausalSpec& spec, const std::vector<DomainSpec>& domains);

// Throws FormatError/InputError on unreadable files.
nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const ojson& j);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace seqmask
