#pragma once

#include <cstdint>
#include <vector>

#include "seqmask/nn.hpp"

namespace seqmask {

struct AdamConfig {
    double lr = 7e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t warmup_epochs = 3;
};

struct OptimizerState {
    AdamConfig config;
    std::uint64_t step_count = 0;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
};

// Linear warm-up: epoch e < W runs at lr * (e + 1) / W, full lr afterwards.
double warmup_lr(const AdamConfig& config, std::size_t epoch);

class Adam {
   public:
    Adam(ParamList params, AdamConfig config);

    // Applies one bias-corrected Adam update using the learning rate of `epoch`.
    // Throws StateError naming the first parameter without a gradient buffer.
    void step(std::size_t epoch);
    // Resets gradients to explicit zeros so unreachable parameters still count
    // as populated.
    void zero_grad();

    const OptimizerState& state() const { return state_; }
    OptimizerState& state() { return state_; }
    const ParamList& params() const { return params_; }

   private:
    ParamList params_;
    OptimizerState state_;
};

}  // namespace seqmask
