#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "latmm/init.hpp"
#include "latmm/ops.hpp"
#include "latmm/tape.hpp"

namespace latmm {
namespace attention {

struct AttentionConfig {
    int tokens = 8;    // T; projected feature is reshaped into T tokens
    int d_model = 32;  // per-token dimension; D_out = tokens * d_model
    int heads = 4;
    bool residual = false;  // off by default, the module as described has none

    int head_dim() const { return d_model / heads; }
    int d_out() const { return tokens * d_model; }

    void validate() const {
        if (tokens < 1 || d_model < 1 || heads < 1)
            throw std::invalid_argument("attention: tokens, d_model, heads must be positive");
        if (d_model % heads != 0)
            throw std::invalid_argument("attention: d_model " + std::to_string(d_model) +
                                        " not divisible by heads " + std::to_string(heads));
    }
};

/// softmax(QK^T/sqrt(d))V. Q:[T_q×d], K:[T_k×d], V:[T_k×d_v].
/// attn_out, when non-null, receives the node id of the row-stochastic
/// attention matrix.
inline int sdp_attention(Tape& t, int q, int k, int v, int* attn_out = nullptr) {
    const Tensor& qv = t.val(q);
    const Tensor& kv = t.val(k);
    const Tensor& vv = t.val(v);
    ops::check_2d(qv, "sdp Q");
    ops::check_2d(kv, "sdp K");
    ops::check_2d(vv, "sdp V");
    if (qv.dim(1) != kv.dim(1))
        throw std::invalid_argument("sdp: Q dim " + shape_str(qv.shape) + " vs K dim " + shape_str(kv.shape));
    if (kv.dim(0) != vv.dim(0))
        throw std::invalid_argument("sdp: K rows " + shape_str(kv.shape) + " vs V rows " + shape_str(vv.shape));
    const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(qv.dim(1)));
    int scores = ops::scale(t, ops::matmul(t, q, k, false, true), inv_sqrt_d);
    int attn = ops::softmax(t, scores);
    if (attn_out) *attn_out = attn;
    return ops::matmul(t, attn, v);
}

/// Registers the parameters of one guided attention module under `prefix`.
/// Guide drives Q; main is copied as the source of both K and V.
inline void build_guided_attention(ParameterStore& store, const std::string& prefix, const AttentionConfig& cfg,
                                   int64_t d_main, int64_t d_guide, std::mt19937& rng) {
    cfg.validate();
    const int64_t dt = cfg.d_out();
    store.add(prefix + ".q_proj.w", he_uniform({dt, d_guide}, d_guide, rng));
    store.add(prefix + ".q_proj.b", Tensor({dt}));
    store.add(prefix + ".kv_proj.w", he_uniform({dt, d_main}, d_main, rng));
    store.add(prefix + ".kv_proj.b", Tensor({dt}));
    const int64_t dm = cfg.d_model, dh = cfg.head_dim();
    for (int h = 0; h < cfg.heads; ++h) {
        const std::string hp = prefix + ".head" + std::to_string(h);
        store.add(hp + ".wq", he_uniform({dm, dh}, dm, rng));
        store.add(hp + ".wk", he_uniform({dm, dh}, dm, rng));
        store.add(hp + ".wv", he_uniform({dm, dh}, dm, rng));
    }
    store.add(prefix + ".w0", he_uniform({dm, dm}, dm, rng));
}

/// Multi-head guided attention on single feature vectors; returns a [d_out]
/// node. attn_mats, when non-null, is filled with one attention-matrix node
/// id per head.
inline int guided_multihead(Tape& t, ParameterStore& store, const std::string& prefix, int main_vec,
                            int guide_vec, const AttentionConfig& cfg, std::vector<int>* attn_mats = nullptr) {
    cfg.validate();
    const int64_t tok = cfg.tokens, dm = cfg.d_model;
    auto lin = [&](const std::string& name, int x) {
        return ops::linear(t, x, t.leaf_param(store.at(prefix + name + ".w")),
                           t.leaf_param(store.at(prefix + name + ".b")));
    };
    int q_tokens = ops::reshape(t, lin(".q_proj", guide_vec), {tok, dm});
    int kv_tokens = ops::reshape(t, lin(".kv_proj", main_vec), {tok, dm});

    std::vector<int> head_t;  // per-head output, transposed to [head_dim × T]
    for (int h = 0; h < cfg.heads; ++h) {
        const std::string hp = prefix + ".head" + std::to_string(h);
        int qi = ops::matmul(t, q_tokens, t.leaf_param(store.at(hp + ".wq")));
        int ki = ops::matmul(t, kv_tokens, t.leaf_param(store.at(hp + ".wk")));
        int vi = ops::matmul(t, kv_tokens, t.leaf_param(store.at(hp + ".wv")));
        int attn = -1;
        int hi = sdp_attention(t, qi, ki, vi, &attn);
        if (attn_mats) attn_mats->push_back(attn);
        head_t.push_back(ops::transpose(t, hi));
    }
    int heads_cat = ops::transpose(t, ops::concat(t, head_t));  // [T × d_model]
    int out = ops::matmul(t, heads_cat, t.leaf_param(store.at(prefix + ".w0")));
    int flat = ops::reshape(t, out, {cfg.d_out()});
    if (cfg.residual) flat = ops::add(t, flat, main_vec);
    return flat;
}

/// Concatenation-fusion baseline: [main ; guide] through one linear layer.
inline void build_concat_fusion(ParameterStore& store, const std::string& prefix, int64_t d_main,
                                int64_t d_guide, int64_t d_out, std::mt19937& rng) {
    store.add(prefix + ".w", he_uniform({d_out, d_main + d_guide}, d_main + d_guide, rng));
    store.add(prefix + ".b", Tensor({d_out}));
}

inline int concat_fusion(Tape& t, ParameterStore& store, const std::string& prefix, int main_vec,
                         int guide_vec) {
    int cat = ops::concat(t, {main_vec, guide_vec});
    return ops::linear(t, cat, t.leaf_param(store.at(prefix + ".w")), t.leaf_param(store.at(prefix + ".b")));
}

}  // namespace attention
}  // namespace latmm
