#pragma once

#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "latmm/attention.hpp"
#include "latmm/init.hpp"
#include "latmm/ops.hpp"
#include "latmm/tape.hpp"

namespace latmm {
namespace ps {

struct InceptionBranchSpec {
    int kernel_size;
    int out_channels;  // per group
};

struct PSNetConfig {
    int in_channels = 3;  // EDA, ECG, PPG
    int input_length = 300;
    int stem_kernel = 7;
    // two grouped blocks (one isolated group per physiological source),
    // then two blocks over the mixed whole
    std::vector<InceptionBranchSpec> grouped_branches = {{3, 4}, {5, 6}, {7, 8}, {11, 10}};
    std::vector<InceptionBranchSpec> mixed_branches = {{3, 8}, {5, 12}, {7, 16}, {11, 20}};
    int feature_dim = 256;
    int num_classes = 3;

    int grouped_out_per_group() const {
        int n = 0;
        for (const auto& b : grouped_branches) n += b.out_channels;
        return n;
    }
    int mixed_out() const {
        int n = 0;
        for (const auto& b : mixed_branches) n += b.out_channels;
        return n;
    }

    void validate() const {
        if (in_channels != 3)
            throw std::invalid_argument("ps_net: grouped stage expects exactly 3 sources, got " +
                                        std::to_string(in_channels));
        auto check_branches = [](const std::vector<InceptionBranchSpec>& bs, const char* which) {
            if (bs.size() != 4) throw std::invalid_argument(std::string("ps_net: ") + which + " needs 4 branches");
            for (size_t i = 0; i < bs.size(); ++i) {
                if (bs[i].kernel_size < 1 || bs[i].kernel_size % 2 == 0)
                    throw std::invalid_argument(std::string("ps_net: ") + which + " kernel sizes must be odd");
                if (bs[i].out_channels < 1)
                    throw std::invalid_argument(std::string("ps_net: ") + which + " out channels must be >= 1");
                for (size_t j = i + 1; j < bs.size(); ++j)
                    if (bs[i].out_channels == bs[j].out_channels)
                        throw std::invalid_argument(std::string("ps_net: ") + which +
                                                    " branch widths must be pairwise distinct");
            }
        };
        check_branches(grouped_branches, "grouped stage");
        check_branches(mixed_branches, "mixed stage");
        if (input_length < 1 || stem_kernel < 1 || stem_kernel % 2 == 0)
            throw std::invalid_argument("ps_net: bad input_length/stem_kernel");
        if (feature_dim < 1 || num_classes < 2) throw std::invalid_argument("ps_net: bad head dims");
    }
};

inline std::string block_prefix(const std::string& root, int block) {
    return root + ".block" + std::to_string(block);
}

inline void build_inception_block(ParameterStore& store, const std::string& prefix,
                                  const std::vector<InceptionBranchSpec>& branches, int groups,
                                  int in_per_group, std::mt19937& rng) {
    for (int g = 0; g < groups; ++g)
        for (size_t b = 0; b < branches.size(); ++b) {
            const auto& br = branches[b];
            const std::string bp = prefix + ".g" + std::to_string(g) + ".b" + std::to_string(b);
            store.add(bp + ".dw", he_uniform({in_per_group, br.kernel_size}, br.kernel_size, rng));
            store.add(bp + ".dwb", Tensor({in_per_group}));
            store.add(bp + ".pw", he_uniform({br.out_channels, in_per_group, 1}, in_per_group, rng));
            store.add(bp + ".pwb", Tensor({br.out_channels}));
        }
}

/// Full parameter set of the PS network, He-uniform initialized, zero biases.
inline void build_ps_net(ParameterStore& store, const PSNetConfig& cfg, std::mt19937& rng,
                         const std::string& root = "ps") {
    cfg.validate();
    store.add(root + ".stem.w", he_uniform({cfg.in_channels, cfg.stem_kernel}, cfg.stem_kernel, rng));
    store.add(root + ".stem.b", Tensor({cfg.in_channels}));
    const int go = cfg.grouped_out_per_group();
    build_inception_block(store, block_prefix(root, 0), cfg.grouped_branches, 3, 1, rng);
    build_inception_block(store, block_prefix(root, 1), cfg.grouped_branches, 3, go, rng);
    build_inception_block(store, block_prefix(root, 2), cfg.mixed_branches, 1, 3 * go, rng);
    build_inception_block(store, block_prefix(root, 3), cfg.mixed_branches, 1, cfg.mixed_out(), rng);
    store.add(root + ".feat.w", he_uniform({cfg.feature_dim, cfg.mixed_out()}, cfg.mixed_out(), rng));
    store.add(root + ".feat.b", Tensor({cfg.feature_dim}));
    store.add(root + ".head.w", he_uniform({cfg.num_classes, cfg.feature_dim}, cfg.feature_dim, rng));
    store.add(root + ".head.b", Tensor({cfg.num_classes}));
}

inline ParameterStore build_ps_net(const PSNetConfig& cfg, uint64_t seed, const std::string& root = "ps") {
    std::mt19937 rng(static_cast<uint32_t>(seed));
    ParameterStore store;
    build_ps_net(store, cfg, rng, root);
    return store;
}

/// One depthwise-inception block: per group, four branches of depthwise conv +
/// pointwise projection + ReLU, concatenated along channels.
inline int inception_block_forward(Tape& t, ParameterStore& store, const std::string& prefix, int x,
                                   const std::vector<InceptionBranchSpec>& branches, int groups) {
    const int64_t c = t.val(x).dim(0);
    if (c % groups != 0)
        throw std::invalid_argument("inception block: " + std::to_string(c) + " channels not divisible by " +
                                    std::to_string(groups) + " groups");
    const int64_t per_group = c / groups;
    std::vector<int> group_outs;
    for (int g = 0; g < groups; ++g) {
        int xg = groups == 1 ? x : ops::slice_channels(t, x, g * per_group, (g + 1) * per_group);
        std::vector<int> branch_outs;
        for (size_t b = 0; b < branches.size(); ++b) {
            const std::string bp = prefix + ".g" + std::to_string(g) + ".b" + std::to_string(b);
            int d = ops::conv1d_depthwise(t, xg, t.leaf_param(store.at(bp + ".dw")),
                                          t.leaf_param(store.at(bp + ".dwb")));
            int p = ops::conv1d(t, d, t.leaf_param(store.at(bp + ".pw")), t.leaf_param(store.at(bp + ".pwb")));
            branch_outs.push_back(ops::relu(t, p));
        }
        group_outs.push_back(ops::concat(t, branch_outs));
    }
    return group_outs.size() == 1 ? group_outs[0] : ops::concat(t, group_outs);
}

/// Round-robin interleave: mixed channel j takes grouped-output channel
/// (j mod 3, j div 3), so every consecutive triple mixes all three sources.
inline std::vector<int64_t> mixing_permutation(int groups, int per_group) {
    std::vector<int64_t> perm(static_cast<size_t>(groups) * per_group);
    for (size_t j = 0; j < perm.size(); ++j)
        perm[j] = static_cast<int64_t>(j % groups) * per_group + static_cast<int64_t>(j) / groups;
    return perm;
}

struct PSProbes {
    int stem = -1;
    int grouped1 = -1;
    int premix = -1;   // output of the second grouped block
    int postmix = -1;  // after channel interleaving
    int mixed3 = -1;
    int mixed4 = -1;
};

struct PSOutput {
    int features;  // [feature_dim]
    int logits;    // [num_classes]
};

inline PSOutput ps_forward(Tape& t, ParameterStore& store, const PSNetConfig& cfg, int x,
                           const std::string& root = "ps", PSProbes* probes = nullptr) {
    const Tensor& xv = t.val(x);
    if (xv.ndim() != 2 || xv.dim(0) != cfg.in_channels || xv.dim(1) != cfg.input_length)
        throw std::invalid_argument("ps_forward: input " + shape_str(xv.shape) + " does not match config [" +
                                    std::to_string(cfg.in_channels) + "," + std::to_string(cfg.input_length) +
                                    "]");
    int h = ops::relu(t, ops::conv1d_depthwise(t, x, t.leaf_param(store.at(root + ".stem.w")),
                                               t.leaf_param(store.at(root + ".stem.b"))));
    if (probes) probes->stem = h;
    h = inception_block_forward(t, store, block_prefix(root, 0), h, cfg.grouped_branches, 3);
    if (probes) probes->grouped1 = h;
    h = inception_block_forward(t, store, block_prefix(root, 1), h, cfg.grouped_branches, 3);
    if (probes) probes->premix = h;
    h = ops::permute_channels(t, h, mixing_permutation(3, cfg.grouped_out_per_group()));
    if (probes) probes->postmix = h;
    h = inception_block_forward(t, store, block_prefix(root, 2), h, cfg.mixed_branches, 1);
    if (probes) probes->mixed3 = h;
    h = inception_block_forward(t, store, block_prefix(root, 3), h, cfg.mixed_branches, 1);
    if (probes) probes->mixed4 = h;
    int pooled = ops::mean_pool_len(t, h);
    int feat = ops::relu(t, ops::linear(t, pooled, t.leaf_param(store.at(root + ".feat.w")),
                                        t.leaf_param(store.at(root + ".feat.b"))));
    int logits = ops::linear(t, feat, t.leaf_param(store.at(root + ".head.w")),
                             t.leaf_param(store.at(root + ".head.b")));
    return {feat, logits};
}

}  // namespace ps
}  // namespace latmm
