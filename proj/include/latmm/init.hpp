#pragma once

#include <cmath>
#include <random>

#include "latmm/tensor.hpp"

namespace latmm {

/// He-uniform: U(-limit, limit) with limit = sqrt(6 / fan_in).
inline Tensor he_uniform(Shape s, int64_t fan_in, std::mt19937& rng) {
    const float limit = std::sqrt(6.0f / static_cast<float>(fan_in));
    std::uniform_real_distribution<float> u(-limit, limit);
    Tensor t(std::move(s));
    for (auto& v : t.data) v = u(rng);
    return t;
}

}  // namespace latmm
