#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "seqmask/dataset.hpp"
#include "seqmask/model.hpp"

namespace seqmask {

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    double temperature = 0.0;
    double loss = 0.0;
    double ce = 0.0;
    double sparse = 0.0;
    double recon = 0.0;
    double retained_text = 0.0;
    double retained_video = 0.0;
    std::map<std::string, double> train_accuracy;
    std::map<std::string, double> val_accuracy;
    double val_overall = 0.0;
};

struct StageReport {
    std::string name;  // "text", "video", "joint", or "evidence" for ablation heads
    std::vector<Modality> trained;
    std::size_t epochs = 0;
    std::vector<EpochRecord> history;
    std::optional<std::size_t> best_epoch;
    std::vector<std::size_t> support_text;
    std::vector<std::size_t> support_video;
    double retained_text = 0.0;
    double retained_video = 0.0;
};

struct TrainResult {
    ModelParams params;
    std::vector<StageReport> stages;
    std::string rng_state;  // training RNG after the last step
};

// Observation hook run after every optimizer step.
struct StepProbe {
    const ModelParams& params;
    const StageReport& stage;
    const Batch& batch;
    std::size_t epoch;
    std::size_t step;
    double lr;
};
using StepCallback = std::function<void(const StepProbe&)>;

// Deterministic train/validation split of sample indices.
struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};
Split split_indices(std::size_t n, double val_fraction, std::uint64_t seed);

// Sequential training. T->V: the text path trains alone for epochs/2, is
// frozen, then the video path and joint head train for epochs/2. V->T mirrors
// it. Joint optimizes L_t + L_v for the full budget. With an ablation set, a
// final stage retrains a fresh joint head on the substituted evidence with
// everything else frozen.
TrainResult train_sequential(const Dataset& data, const ModelConfig& config, const StepCallback& on_step = {});

struct DomainAccuracy {
    std::size_t correct = 0;
    std::size_t total = 0;
    double accuracy = 0.0;
};

struct EvalReport {
    std::map<std::string, DomainAccuracy> domains;
    DomainAccuracy overall;
};

// Final-head predictions in eval mode; evidence follows config.ablation.
std::vector<int> predict(const ModelParams& params, const Dataset& data);
EvalReport evaluate(const ModelParams& params, const Dataset& data);
EvalReport score_predictions(const Dataset& data, const std::vector<int>& predictions);

}  // namespace seqmask
