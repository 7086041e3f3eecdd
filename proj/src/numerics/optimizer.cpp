#include "lgpt/numerics/optimizer.hpp"

#include "lgpt/error.hpp"

#include <algorithm>
#include <cmath>

namespace lgpt {

double Adam::learning_rate(std::size_t step) const {
    if (config_.warmup_steps == 0 || step >= config_.warmup_steps) return config_.peak_lr;
    return config_.peak_lr * static_cast<double>(step) / static_cast<double>(config_.warmup_steps);
}

void Adam::update(ParameterStore& params, const TensorMap& grads) {
    if (grads.size() != params.size()) {
        throw Error("gradient keys do not match parameters (" + std::to_string(grads.size()) + " vs " +
                    std::to_string(params.size()) + ")");
    }
    for (const auto& [name, p] : params.tensors()) {
        auto it = grads.find(name);
        if (it == grads.end()) throw Error("no gradient for parameter '" + name + "'");
        if (it->second.shape() != p.shape()) throw ShapeError("gradient shape mismatch for '" + name + "'");
    }
    ++step_;
    const double lr = learning_rate(step_);
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (auto& [name, p] : params.tensors()) {
        const Tensor& g = grads.at(name);
        auto [m_it, _m] = first_.try_emplace(name, p.shape());
        auto [v_it, _v] = second_.try_emplace(name, p.shape());
        Tensor& m = m_it->second;
        Tensor& v = v_it->second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            p[i] -= lr * (mhat / (std::sqrt(vhat) + config_.eps) + config_.weight_decay * p[i]);
        }
    }
}

TensorMap Adam::state() const {
    TensorMap out;
    out.emplace("opt.step", Tensor::scalar(static_cast<double>(step_)));
    for (const auto& [name, t] : first_) out.emplace("opt.m." + name, t);
    for (const auto& [name, t] : second_) out.emplace("opt.v." + name, t);
    return out;
}

void Adam::load_state(const TensorMap& tensors) {
    first_.clear();
    second_.clear();
    step_ = 0;
    for (const auto& [name, t] : tensors) {
        if (name == "opt.step") {
            step_ = static_cast<std::size_t>(std::llround(t.item()));
        } else if (name.rfind("opt.m.", 0) == 0) {
            first_.emplace(name.substr(6), t);
        } else if (name.rfind("opt.v.", 0) == 0) {
            second_.emplace(name.substr(6), t);
        }
    }
}

} // namespace lgpt
