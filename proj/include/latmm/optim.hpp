#pragma once

#include <cmath>

#include "latmm/tape.hpp"

namespace latmm {

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

/// Adam over a ParameterStore; moment buffers mirror parameter shapes.
class Adam {
public:
    Adam(ParameterStore& store, AdamConfig cfg = {}) : store_(store), cfg_(cfg) {
        store.for_each([this](const std::string&, Param& p) {
            m_.emplace_back(p.value.shape);
            v_.emplace_back(p.value.shape);
        });
    }

    /// One update from the gradients currently accumulated in the store.
    void step() {
        ++t_;
        const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t_));
        const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t_));
        size_t idx = 0;
        store_.for_each([&](const std::string&, Param& p) {
            Tensor& m = m_[idx];
            Tensor& v = v_[idx];
            ++idx;
            for (int64_t i = 0; i < p.value.size(); ++i) {
                const float g = p.grad[i];
                m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * g;
                v[i] = cfg_.beta2 * v[i] + (1.0f - cfg_.beta2) * g * g;
                const float mhat = m[i] / bc1;
                const float vhat = v[i] / bc2;
                p.value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        });
    }

private:
    ParameterStore& store_;
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    int64_t t_ = 0;
};

}  // namespace latmm
