#pragma once

#include <random>
#include <string>
#include <vector>

#include "latmm/attention.hpp"
#include "latmm/fusion.hpp"
#include "latmm/init.hpp"
#include "latmm/ops.hpp"
#include "latmm/tape.hpp"

namespace latmm {
namespace me {

/// One clip: colour [F×3×H×W] and depth [F×1×H×W], both in [0,1].
struct FrameStack {
    Tensor colour;
    Tensor depth;

    int64_t frames() const { return colour.dim(0); }

    void validate() const {
        if (colour.ndim() != 4 || colour.dim(1) != 3)
            throw std::invalid_argument("frame stack: colour must be [F,3,H,W], got " + shape_str(colour.shape));
        if (depth.ndim() != 4 || depth.dim(1) != 1)
            throw std::invalid_argument("frame stack: depth must be [F,1,H,W], got " + shape_str(depth.shape));
        if (colour.dim(0) != depth.dim(0) || colour.dim(2) != depth.dim(2) || colour.dim(3) != depth.dim(3))
            throw std::invalid_argument("frame stack: colour " + shape_str(colour.shape) + " and depth " +
                                        shape_str(depth.shape) + " disagree");
        const int64_t f = colour.dim(0);
        if (f < 1 || f > fusion::kMaxFrames)
            throw std::invalid_argument("frame stack: frame count " + std::to_string(f) + " outside [1," +
                                        std::to_string(fusion::kMaxFrames) + "]");
        for (const Tensor* t : {&colour, &depth})
            for (float v : t->data)
                if (!(v >= 0.0f && v <= 1.0f))
                    throw std::invalid_argument("frame stack: values must lie in [0,1]");
    }
};

struct BackboneConfig {
    int input_size = 64;  // H = W
    std::vector<int> stage_channels = {16, 32, 64, 64};
    int feature_dim = 256;

    int64_t final_size() const { return input_size >> stage_channels.size(); }
    int64_t flat_dim() const { return stage_channels.back() * final_size() * final_size(); }

    void validate() const {
        if (stage_channels.empty()) throw std::invalid_argument("backbone: needs at least one stage");
        for (int c : stage_channels)
            if (c < 1) throw std::invalid_argument("backbone: stage channels must be >= 1");
        if (input_size < (1 << stage_channels.size()) || input_size % (1 << stage_channels.size()) != 0)
            throw std::invalid_argument("backbone: input size " + std::to_string(input_size) +
                                        " not divisible by the pooling factor");
        if (feature_dim < 1) throw std::invalid_argument("backbone: bad feature dim");
    }
};

inline void build_backbone(ParameterStore& store, const std::string& prefix, const BackboneConfig& cfg,
                           int in_channels, std::mt19937& rng) {
    cfg.validate();
    int64_t cin = in_channels;
    for (size_t s = 0; s < cfg.stage_channels.size(); ++s) {
        const int64_t cout = cfg.stage_channels[s];
        const std::string sp = prefix + ".s" + std::to_string(s);
        store.add(sp + ".w", he_uniform({cout, cin, 3, 3}, cin * 9, rng));
        store.add(sp + ".b", Tensor({cout}));
        cin = cout;
    }
    store.add(prefix + ".fc.w", he_uniform({cfg.feature_dim, cfg.flat_dim()}, cfg.flat_dim(), rng));
    store.add(prefix + ".fc.b", Tensor({cfg.feature_dim}));
}

/// [C×H×W] frame through the staged conv net to a [feature_dim] vector.
inline int frame_features(Tape& t, ParameterStore& store, const std::string& prefix, const BackboneConfig& cfg,
                          int frame) {
    const Tensor& fv = t.val(frame);
    if (fv.ndim() != 3 || fv.dim(1) != cfg.input_size || fv.dim(2) != cfg.input_size)
        throw std::invalid_argument("frame_features: want [C," + std::to_string(cfg.input_size) + "," +
                                    std::to_string(cfg.input_size) + "], got " + shape_str(fv.shape));
    int h = frame;
    for (size_t s = 0; s < cfg.stage_channels.size(); ++s) {
        const std::string sp = prefix + ".s" + std::to_string(s);
        h = ops::conv2d(t, h, t.leaf_param(store.at(sp + ".w")), t.leaf_param(store.at(sp + ".b")));
        h = ops::maxpool2d(t, ops::relu(t, h));
    }
    h = ops::reshape(t, h, {cfg.flat_dim()});
    return ops::relu(t, ops::linear(t, h, t.leaf_param(store.at(prefix + ".fc.w")),
                                    t.leaf_param(store.at(prefix + ".fc.b"))));
}

struct MEConfig {
    BackboneConfig backbone;
    attention::AttentionConfig attn;  // depth guidance
    bool use_depth = true;

    void validate() const {
        backbone.validate();
        attn.validate();
        if (use_depth && attn.d_out() != backbone.feature_dim)
            throw std::invalid_argument("me branch: attention output " + std::to_string(attn.d_out()) +
                                        " must match feature dim " + std::to_string(backbone.feature_dim));
    }
};

inline ParameterStore& build_me_branch(ParameterStore& store, const MEConfig& cfg, std::mt19937& rng,
                                       const std::string& root = "me") {
    cfg.validate();
    build_backbone(store, root + ".colour", cfg.backbone, 3, rng);
    if (cfg.use_depth) {
        build_backbone(store, root + ".depth", cfg.backbone, 1, rng);
        attention::build_guided_attention(store, root + ".ga", cfg.attn, cfg.backbone.feature_dim,
                                          cfg.backbone.feature_dim, rng);
    }
    return store;
}

struct MEProbes {
    std::vector<int> colour_feats;
    std::vector<int> fused;  // per-frame features entering temporal fusion
};

inline Tensor slice_frame(const Tensor& stack, int64_t f) {
    const int64_t per = stack.size() / stack.dim(0);
    Tensor out({stack.dim(1), stack.dim(2), stack.dim(3)});
    std::copy_n(stack.data.begin() + f * per, per, out.data.begin());
    return out;
}

/// Depth guides colour per frame, then frames collapse through the
/// apex-centred temporal weights into one [feature_dim] vector.
inline int me_forward(Tape& t, ParameterStore& store, const MEConfig& cfg, const FrameStack& stack,
                      const fusion::FusionWeights& weights, const std::string& root = "me",
                      MEProbes* probes = nullptr) {
    stack.validate();
    const int64_t f = stack.frames();
    if (weights.frames != f)
        throw std::invalid_argument("me_forward: " + std::to_string(weights.frames) + " weights for " +
                                    std::to_string(f) + " frames");
    std::vector<int> fused;
    for (int64_t i = 0; i < f; ++i) {
        int cf = frame_features(t, store, root + ".colour", cfg.backbone, t.leaf(slice_frame(stack.colour, i)));
        if (probes) probes->colour_feats.push_back(cf);
        int out = cf;
        if (cfg.use_depth) {
            int df = frame_features(t, store, root + ".depth", cfg.backbone, t.leaf(slice_frame(stack.depth, i)));
            out = attention::guided_multihead(t, store, root + ".ga", cf, df, cfg.attn);
        }
        fused.push_back(out);
    }
    if (probes) probes->fused = fused;
    return fusion::fuse_frames(t, fused, weights);
}

inline int me_forward(Tape& t, ParameterStore& store, const MEConfig& cfg, const FrameStack& stack,
                      const std::string& root = "me", MEProbes* probes = nullptr) {
    return me_forward(t, store, cfg, stack, fusion::gaussian_weights(static_cast<int>(stack.frames())), root,
                      probes);
}

/// Table-style colour-only arm: same pipeline with the guide bypassed.
inline int me_forward_colour_only(Tape& t, ParameterStore& store, const MEConfig& cfg, const FrameStack& stack,
                                  const std::string& root = "me", MEProbes* probes = nullptr) {
    MEConfig c = cfg;
    c.use_depth = false;
    return me_forward(t, store, c, stack, fusion::gaussian_weights(static_cast<int>(stack.frames())), root,
                      probes);
}

}  // namespace me
}  // namespace latmm
