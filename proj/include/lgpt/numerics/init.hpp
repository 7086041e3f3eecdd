#pragma once

#include "lgpt/numerics/random.hpp"
#include "lgpt/numerics/tensor.hpp"

namespace lgpt::init {

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    Tensor t(std::move(shape));
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : t.storage()) v = rng.uniform(-limit, limit);
    return t;
}

inline Tensor normal(Shape shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.storage()) v = rng.normal(0.0, stddev);
    return t;
}

inline Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
inline Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }

} // namespace lgpt::init
