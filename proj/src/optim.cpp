#include "seqmask/optim.hpp"

#include <cmath>

#include "seqmask/errors.hpp"

namespace seqmask {

double warmup_lr(const AdamConfig& config, std::size_t epoch) {
    if (config.warmup_epochs == 0 || epoch >= config.warmup_epochs) return config.lr;
    return config.lr * static_cast<double>(epoch + 1) / static_cast<double>(config.warmup_epochs);
}

Adam::Adam(ParamList params, AdamConfig config) : params_(std::move(params)) {
    if (!(config.lr > 0.0)) throw ConfigError("learning rate must be positive");
    state_.config = config;
    for (const auto& p : params_) {
        state_.first_moment.emplace_back(p.tensor.numel(), 0.0);
        state_.second_moment.emplace_back(p.tensor.numel(), 0.0);
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

void Adam::step(std::size_t epoch) {
    for (const auto& p : params_) {
        if (!p.tensor.has_grad()) throw StateError("parameter '" + p.name + "' has no gradient");
    }
    const auto& c = state_.config;
    ++state_.step_count;
    const double t = static_cast<double>(state_.step_count);
    const double correction1 = 1.0 - std::pow(c.beta1, t);
    const double correction2 = 1.0 - std::pow(c.beta2, t);
    const double lr = warmup_lr(c, epoch);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Tensor& param = params_[k].tensor;
        auto values = param.mutable_values();
        const auto grad = param.grad();
        auto& m = state_.first_moment[k];
        auto& v = state_.second_moment[k];
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double g = grad[i];
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
            const double mhat = m[i] / correction1;
            const double vhat = v[i] / correction2;
            values[i] -= lr * mhat / (std::sqrt(vhat) + c.epsilon);
        }
    }
}

}  // namespace seqmask
