#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "latmm/ops.hpp"
#include "latmm/tape.hpp"

namespace latmm {
namespace fusion {

constexpr int kMaxFrames = 15;  // a micro-expression is at most 500 ms at 30 fps

struct FusionWeights {
    int frames = 0;
    std::vector<double> weights;
};

inline void check_frame_count(int f) {
    if (f < 1) throw std::invalid_argument("fusion: frame count must be >= 1, got " + std::to_string(f));
    if (f > kMaxFrames)
        throw std::invalid_argument("fusion: frame count " + std::to_string(f) + " exceeds " +
                                    std::to_string(kMaxFrames));
}

/// Standard-normal weights over frame index: i_f = -3s + f*6s/(F-1), sigma s = 1,
/// W_f = exp(-i_f^2/2) normalized. A single frame gets full weight.
inline FusionWeights gaussian_weights(int f, double sigma = 1.0) {
    check_frame_count(f);
    FusionWeights w{f, std::vector<double>(static_cast<size_t>(f))};
    if (f == 1) {
        w.weights[0] = 1.0;
        return w;
    }
    double z = 0.0;
    for (int k = 0; k < f; ++k) {
        const double i = -3.0 * sigma + k * 6.0 * sigma / (f - 1);
        w.weights[static_cast<size_t>(k)] = std::exp(-i * i / 2.0);
        z += w.weights[static_cast<size_t>(k)];
    }
    for (auto& v : w.weights) v /= z;
    return w;
}

inline FusionWeights uniform_weights(int f) {
    check_frame_count(f);
    return {f, std::vector<double>(static_cast<size_t>(f), 1.0 / f)};
}

/// Weighted temporal sum of per-frame feature vectors. Weights are constants,
/// not parameters; gradients flow to the features only.
inline int fuse_frames(Tape& t, const std::vector<int>& frame_features, const FusionWeights& w) {
    if (static_cast<int>(frame_features.size()) != w.frames)
        throw std::invalid_argument("fuse_frames: " + std::to_string(frame_features.size()) + " features for " +
                                    std::to_string(w.frames) + " weights");
    return ops::weighted_sum(t, frame_features, w.weights);
}

}  // namespace fusion
}  // namespace latmm
