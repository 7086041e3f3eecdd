#pragma once

#include "lgpt/numerics/graph.hpp"

#include <cstddef>

namespace lgpt {

struct AdamConfig {
    double peak_lr = 1e-3;
    std::size_t warmup_steps = 100;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0; // decoupled
};

// Adam with decoupled weight decay and a linear warmup to a constant peak rate.
class Adam {
public:
    explicit Adam(AdamConfig config = {}) : config_(config) {}

    const AdamConfig& config() const { return config_; }
    std::size_t step() const { return step_; }

    // Rate used for the given 1-based step.
    double learning_rate(std::size_t step) const;

    // Applies one update; grads must be keyed exactly like params.
    void update(ParameterStore& params, const TensorMap& grads);

    // Moments and step counter as named tensors (prefix "opt.").
    TensorMap state() const;
    void load_state(const TensorMap& tensors);

private:
    AdamConfig config_;
    std::size_t step_ = 0;
    TensorMap first_;
    TensorMap second_;
};

} // namespace lgpt
