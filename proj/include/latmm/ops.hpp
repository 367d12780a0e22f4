#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include <cblas.h>

#include "latmm/tape.hpp"
#include "latmm/tensor.hpp"

extern "C" void openblas_set_num_threads(int);

namespace latmm {
namespace ops {

// Fixed single-threaded BLAS keeps reduction order (and thus results) identical
// across runs regardless of machine load.
inline void init_blas() {
    static const bool once = [] {
        openblas_set_num_threads(1);
        return true;
    }();
    (void)once;
}

// C(m×n) (+)= A'(m×k) × B'(k×n), where A' = ta ? Aᵀ : A and likewise B'.
inline void gemm(float* c, const float* a, const float* b, int64_t m, int64_t n, int64_t k, bool ta, bool tb,
                 float beta) {
    init_blas();
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0f, a,
                static_cast<int>(ta ? m : k), b, static_cast<int>(tb ? k : n), beta, c, static_cast<int>(n));
}

inline void check_2d(const Tensor& t, const char* role) {
    if (t.ndim() != 2) throw std::invalid_argument(std::string(role) + " must be 2-D, got " + shape_str(t.shape));
}

/// C = A'×B' with optional transposes; A' = aᵀ when ta.
inline int matmul(Tape& t, int a, int b, bool ta = false, bool tb = false) {
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    check_2d(av, "matmul lhs");
    check_2d(bv, "matmul rhs");
    const int64_t m = ta ? av.dim(1) : av.dim(0);
    const int64_t k = ta ? av.dim(0) : av.dim(1);
    const int64_t kb = tb ? bv.dim(1) : bv.dim(0);
    const int64_t n = tb ? bv.dim(0) : bv.dim(1);
    if (k != kb)
        throw std::invalid_argument("matmul: inner dims disagree, lhs " + shape_str(av.shape) +
                                    (ta ? " (T)" : "") + " vs rhs " + shape_str(bv.shape) + (tb ? " (T)" : ""));
    Tensor out({m, n});
    gemm(out.data.data(), av.data.data(), bv.data.data(), m, n, k, ta, tb, 0.0f);
    bool rg = t.requires_grad(a) || t.requires_grad(b);
    return t.push(std::move(out), rg, [a, b, ta, tb, m, n, k](Tape& tp, int self) {
        const float* g = tp.grad(self).data.data();
        const float* ad = tp.val(a).data.data();
        const float* bd = tp.val(b).data.data();
        if (tp.requires_grad(a)) {
            float* da = tp.grad(a).data.data();
            if (!ta)
                gemm(da, g, bd, m, k, n, false, !tb, 1.0f);  // dA = g·B'ᵀ
            else
                gemm(da, bd, g, k, m, n, tb, true, 1.0f);  // dA stored = B'·gᵀ
        }
        if (tp.requires_grad(b)) {
            float* db = tp.grad(b).data.data();
            if (!tb)
                gemm(db, ad, g, k, n, m, !ta, false, 1.0f);  // dB = A'ᵀ·g
            else
                gemm(db, g, ad, n, k, m, true, ta, 1.0f);  // dB stored = gᵀ·A'
        }
    });
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                                    shape_str(b.shape));
}

inline int add(Tape& t, int a, int b) {
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    check_same_shape(av, bv, "add");
    Tensor out(av.shape);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    bool rg = t.requires_grad(a) || t.requires_grad(b);
    return t.push(std::move(out), rg, [a, b](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        if (tp.requires_grad(a)) {
            Tensor& da = tp.grad(a);
            for (int64_t i = 0; i < g.size(); ++i) da[i] += g[i];
        }
        if (tp.requires_grad(b)) {
            Tensor& db = tp.grad(b);
            for (int64_t i = 0; i < g.size(); ++i) db[i] += g[i];
        }
    });
}

inline int mul(Tape& t, int a, int b) {
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    check_same_shape(av, bv, "mul");
    Tensor out(av.shape);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    bool rg = t.requires_grad(a) || t.requires_grad(b);
    return t.push(std::move(out), rg, [a, b](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        const Tensor& av = tp.val(a);
        const Tensor& bv = tp.val(b);
        if (tp.requires_grad(a)) {
            Tensor& da = tp.grad(a);
            for (int64_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
        }
        if (tp.requires_grad(b)) {
            Tensor& db = tp.grad(b);
            for (int64_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
        }
    });
}

inline int scale(Tape& t, int a, float c) {
    const Tensor& av = t.val(a);
    Tensor out(av.shape);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
    return t.push(std::move(out), t.requires_grad(a), [a, c](Tape& tp, int self) {
        if (!tp.requires_grad(a)) return;
        const Tensor& g = tp.grad(self);
        Tensor& da = tp.grad(a);
        for (int64_t i = 0; i < g.size(); ++i) da[i] += g[i] * c;
    });
}

inline int relu(Tape& t, int a) {
    const Tensor& av = t.val(a);
    Tensor out(av.shape);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0f ? av[i] : 0.0f;
    return t.push(std::move(out), t.requires_grad(a), [a](Tape& tp, int self) {
        if (!tp.requires_grad(a)) return;
        const Tensor& g = tp.grad(self);
        const Tensor& av = tp.val(a);
        Tensor& da = tp.grad(a);
        for (int64_t i = 0; i < g.size(); ++i)
            if (av[i] > 0.0f) da[i] += g[i];
    });
}

/// Data-preserving shape change.
inline int reshape(Tape& t, int a, Shape s) {
    const Tensor& av = t.val(a);
    if (numel(s) != av.size())
        throw std::invalid_argument("reshape: " + shape_str(av.shape) + " to " + shape_str(s) +
                                    " changes element count");
    Tensor out(std::move(s), av.data);
    return t.push(std::move(out), t.requires_grad(a), [a](Tape& tp, int self) {
        if (!tp.requires_grad(a)) return;
        const Tensor& g = tp.grad(self);
        Tensor& da = tp.grad(a);
        for (int64_t i = 0; i < g.size(); ++i) da[i] += g[i];
    });
}

inline int sum(Tape& t, int a) {
    const Tensor& av = t.val(a);
    float s = 0.0f;
    for (float v : av.data) s += v;
    return t.push(Tensor({1}, {s}), t.requires_grad(a), [a](Tape& tp, int self) {
        if (!tp.requires_grad(a)) return;
        float g = tp.grad(self)[0];
        Tensor& da = tp.grad(a);
        for (int64_t i = 0; i < da.size(); ++i) da[i] += g;
    });
}

/// y = W·x + b for a single feature vector. x:[n], w:[m×n], b:[m].
inline int linear(Tape& t, int x, int w, int b) {
    const Tensor& xv = t.val(x);
    const Tensor& wv = t.val(w);
    const Tensor& bv = t.val(b);
    if (xv.ndim() != 1 || wv.ndim() != 2 || bv.ndim() != 1 || wv.dim(1) != xv.dim(0) || wv.dim(0) != bv.dim(0))
        throw std::invalid_argument("linear: incompatible shapes x" + shape_str(xv.shape) + " w" +
                                    shape_str(wv.shape) + " b" + shape_str(bv.shape));
    const int64_t m = wv.dim(0), n = wv.dim(1);
    Tensor out({m});
    for (int64_t i = 0; i < m; ++i) out[i] = bv[i];
    gemm(out.data.data(), wv.data.data(), xv.data.data(), m, 1, n, false, false, 1.0f);
    bool rg = t.requires_grad(x) || t.requires_grad(w) || t.requires_grad(b);
    return t.push(std::move(out), rg, [x, w, b, m, n](Tape& tp, int self) {
        const float* g = tp.grad(self).data.data();
        if (tp.requires_grad(x))
            gemm(tp.grad(x).data.data(), tp.val(w).data.data(), g, n, 1, m, true, false, 1.0f);
        if (tp.requires_grad(w))
            gemm(tp.grad(w).data.data(), g, tp.val(x).data.data(), m, n, 1, false, false, 1.0f);
        if (tp.requires_grad(b)) {
            Tensor& db = tp.grad(b);
            for (int64_t i = 0; i < m; ++i) db[i] += g[i];
        }
    });
}

/// Cross-correlation with "same" zero padding. x:[C_in×L], w:[C_out×C_in×K], b:[C_out].
inline int conv1d(Tape& t, int x, int w, int b) {
    const Tensor& xv = t.val(x);
    const Tensor& wv = t.val(w);
    const Tensor& bv = t.val(b);
    if (xv.ndim() != 2 || wv.ndim() != 3)
        throw std::invalid_argument("conv1d: want x[C_in×L], w[C_out×C_in×K], got x" + shape_str(xv.shape) +
                                    " w" + shape_str(wv.shape));
    const int64_t cin = xv.dim(0), len = xv.dim(1);
    const int64_t cout = wv.dim(0), kk = wv.dim(2);
    if (wv.dim(1) != cin)
        throw std::invalid_argument("conv1d: channel mismatch x" + shape_str(xv.shape) + " vs w" +
                                    shape_str(wv.shape));
    if (kk % 2 == 0) throw std::invalid_argument("conv1d: kernel size must be odd, got " + std::to_string(kk));
    if (bv.ndim() != 1 || bv.dim(0) != cout)
        throw std::invalid_argument("conv1d: bias shape " + shape_str(bv.shape) + " vs C_out " +
                                    std::to_string(cout));
    const int64_t pad = (kk - 1) / 2;
    Tensor out({cout, len});
    for (int64_t oc = 0; oc < cout; ++oc) {
        float* orow = out.data.data() + oc * len;
        for (int64_t p = 0; p < len; ++p) orow[p] = bv[oc];
        for (int64_t ic = 0; ic < cin; ++ic) {
            const float* xrow = xv.data.data() + ic * len;
            const float* wrow = wv.data.data() + (oc * cin + ic) * kk;
            for (int64_t k = 0; k < kk; ++k) {
                const float wk = wrow[k];
                const int64_t lo = std::max<int64_t>(0, pad - k);
                const int64_t hi = std::min(len, len + pad - k);
                for (int64_t p = lo; p < hi; ++p) orow[p] += wk * xrow[p + k - pad];
            }
        }
    }
    bool rg = t.requires_grad(x) || t.requires_grad(w) || t.requires_grad(b);
    return t.push(std::move(out), rg, [x, w, b, cin, cout, len, kk, pad](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        const Tensor& xv = tp.val(x);
        const Tensor& wv = tp.val(w);
        if (tp.requires_grad(b)) {
            Tensor& db = tp.grad(b);
            for (int64_t oc = 0; oc < cout; ++oc) {
                const float* grow = g.data.data() + oc * len;
                float s = 0.0f;
                for (int64_t p = 0; p < len; ++p) s += grow[p];
                db[oc] += s;
            }
        }
        for (int64_t oc = 0; oc < cout; ++oc) {
            const float* grow = g.data.data() + oc * len;
            for (int64_t ic = 0; ic < cin; ++ic) {
                const float* xrow = xv.data.data() + ic * len;
                const float* wrow = wv.data.data() + (oc * cin + ic) * kk;
                float* dwrow = tp.requires_grad(w) ? tp.grad(w).data.data() + (oc * cin + ic) * kk : nullptr;
                float* dxrow = tp.requires_grad(x) ? tp.grad(x).data.data() + ic * len : nullptr;
                for (int64_t k = 0; k < kk; ++k) {
                    const int64_t lo = std::max<int64_t>(0, pad - k);
                    const int64_t hi = std::min(len, len + pad - k);
                    if (dwrow) {
                        float s = 0.0f;
                        for (int64_t p = lo; p < hi; ++p) s += grow[p] * xrow[p + k - pad];
                        dwrow[k] += s;
                    }
                    if (dxrow) {
                        const float wk = wrow[k];
                        for (int64_t p = lo; p < hi; ++p) dxrow[p + k - pad] += wk * grow[p];
                    }
                }
            }
        }
    });
}

/// One filter per channel, no cross-channel mixing. x:[C×L], w:[C×K], b:[C].
inline int conv1d_depthwise(Tape& t, int x, int w, int b) {
    const Tensor& xv = t.val(x);
    const Tensor& wv = t.val(w);
    const Tensor& bv = t.val(b);
    if (xv.ndim() != 2 || wv.ndim() != 2)
        throw std::invalid_argument("conv1d_depthwise: want x[C×L], w[C×K], got x" + shape_str(xv.shape) +
                                    " w" + shape_str(wv.shape));
    const int64_t c = xv.dim(0), len = xv.dim(1), kk = wv.dim(1);
    if (wv.dim(0) != c)
        throw std::invalid_argument("conv1d_depthwise: channel mismatch x" + shape_str(xv.shape) + " vs w" +
                                    shape_str(wv.shape));
    if (kk % 2 == 0)
        throw std::invalid_argument("conv1d_depthwise: kernel size must be odd, got " + std::to_string(kk));
    if (bv.ndim() != 1 || bv.dim(0) != c)
        throw std::invalid_argument("conv1d_depthwise: bias shape " + shape_str(bv.shape));
    const int64_t pad = (kk - 1) / 2;
    Tensor out({c, len});
    for (int64_t ch = 0; ch < c; ++ch) {
        const float* xrow = xv.data.data() + ch * len;
        const float* wrow = wv.data.data() + ch * kk;
        float* orow = out.data.data() + ch * len;
        for (int64_t p = 0; p < len; ++p) orow[p] = bv[ch];
        for (int64_t k = 0; k < kk; ++k) {
            const float wk = wrow[k];
            const int64_t lo = std::max<int64_t>(0, pad - k);
            const int64_t hi = std::min(len, len + pad - k);
            for (int64_t p = lo; p < hi; ++p) orow[p] += wk * xrow[p + k - pad];
        }
    }
    bool rg = t.requires_grad(x) || t.requires_grad(w) || t.requires_grad(b);
    return t.push(std::move(out), rg, [x, w, b, c, len, kk, pad](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        const Tensor& xv = tp.val(x);
        const Tensor& wv = tp.val(w);
        for (int64_t ch = 0; ch < c; ++ch) {
            const float* grow = g.data.data() + ch * len;
            const float* xrow = xv.data.data() + ch * len;
            const float* wrow = wv.data.data() + ch * kk;
            if (tp.requires_grad(b)) {
                float s = 0.0f;
                for (int64_t p = 0; p < len; ++p) s += grow[p];
                tp.grad(b)[ch] += s;
            }
            for (int64_t k = 0; k < kk; ++k) {
                const int64_t lo = std::max<int64_t>(0, pad - k);
                const int64_t hi = std::min(len, len + pad - k);
                if (tp.requires_grad(w)) {
                    float s = 0.0f;
                    for (int64_t p = lo; p < hi; ++p) s += grow[p] * xrow[p + k - pad];
                    tp.grad(w)[ch * kk + k] += s;
                }
                if (tp.requires_grad(x)) {
                    float* dxrow = tp.grad(x).data.data() + ch * len;
                    const float wk = wrow[k];
                    for (int64_t p = lo; p < hi; ++p) dxrow[p + k - pad] += wk * grow[p];
                }
            }
        }
    });
}

/// Row-wise softmax with max subtraction; works on [n] or [R×n] (last axis).
inline int softmax(Tape& t, int a) {
    const Tensor& av = t.val(a);
    if (av.ndim() < 1) throw std::invalid_argument("softmax: need at least 1-D input");
    const int64_t n = av.shape.back();
    const int64_t rows = av.size() / n;
    Tensor out(av.shape);
    for (int64_t r = 0; r < rows; ++r) {
        const float* xr = av.data.data() + r * n;
        float* yr = out.data.data() + r * n;
        float mx = xr[0];
        for (int64_t i = 1; i < n; ++i) mx = std::max(mx, xr[i]);
        float z = 0.0f;
        for (int64_t i = 0; i < n; ++i) {
            yr[i] = std::exp(xr[i] - mx);
            z += yr[i];
        }
        for (int64_t i = 0; i < n; ++i) yr[i] /= z;
    }
    return t.push(std::move(out), t.requires_grad(a), [a, n, rows](Tape& tp, int self) {
        if (!tp.requires_grad(a)) return;
        const Tensor& y = tp.val(self);
        const Tensor& g = tp.grad(self);
        Tensor& da = tp.grad(a);
        for (int64_t r = 0; r < rows; ++r) {
            const float* yr = y.data.data() + r * n;
            const float* gr = g.data.data() + r * n;
            float* dr = da.data.data() + r * n;
            float dot = 0.0f;
            for (int64_t i = 0; i < n; ++i) dot += gr[i] * yr[i];
            for (int64_t i = 0; i < n; ++i) dr[i] += yr[i] * (gr[i] - dot);
        }
    });
}

/// Mean of −log softmax(logits)[target] over the batch. logits:[B×C] or [C].
inline int cross_entropy(Tape& t, int logits, const std::vector<int>& targets) {
    const Tensor& lv = t.val(logits);
    const int64_t c = lv.shape.back();
    const int64_t batch = lv.size() / c;
    if (lv.ndim() > 2) throw std::invalid_argument("cross_entropy: logits must be [C] or [B×C]");
    if (static_cast<int64_t>(targets.size()) != batch)
        throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) + " targets for batch " +
                                    std::to_string(batch));
    for (int tgt : targets)
        if (tgt < 0 || tgt >= c)
            throw std::out_of_range("cross_entropy: target " + std::to_string(tgt) + " outside [0," +
                                    std::to_string(c) + ")");
    // Cache softmax probabilities for the backward rule.
    auto probs = std::make_shared<std::vector<float>>(static_cast<size_t>(lv.size()));
    float loss = 0.0f;
    for (int64_t bi = 0; bi < batch; ++bi) {
        const float* xr = lv.data.data() + bi * c;
        float* pr = probs->data() + bi * c;
        float mx = xr[0];
        for (int64_t i = 1; i < c; ++i) mx = std::max(mx, xr[i]);
        float z = 0.0f;
        for (int64_t i = 0; i < c; ++i) {
            pr[i] = std::exp(xr[i] - mx);
            z += pr[i];
        }
        for (int64_t i = 0; i < c; ++i) pr[i] /= z;
        loss += -std::log(std::max(pr[targets[static_cast<size_t>(bi)]], 1e-30f));
    }
    loss /= static_cast<float>(batch);
    return t.push(Tensor({1}, {loss}), t.requires_grad(logits),
                  [logits, targets, probs, batch, c](Tape& tp, int self) {
                      if (!tp.requires_grad(logits)) return;
                      const float g = tp.grad(self)[0] / static_cast<float>(batch);
                      Tensor& dl = tp.grad(logits);
                      for (int64_t bi = 0; bi < batch; ++bi) {
                          const float* pr = probs->data() + bi * c;
                          float* dr = dl.data.data() + bi * c;
                          for (int64_t i = 0; i < c; ++i) dr[i] += g * pr[i];
                          dr[targets[static_cast<size_t>(bi)]] -= g;
                      }
                  });
}

/// Concatenate [C_i×L] maps along channels, or 1-D vectors end to end.
inline int concat(Tape& t, const std::vector<int>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Tensor& first = t.val(parts[0]);
    const size_t nd = first.ndim();
    int64_t total = 0;
    bool rg = false;
    for (int p : parts) {
        const Tensor& v = t.val(p);
        if (v.ndim() != nd || (nd == 2 && v.dim(1) != first.dim(1)))
            throw std::invalid_argument("concat: incompatible part " + shape_str(v.shape) + " vs " +
                                        shape_str(first.shape));
        total += v.dim(0);
        rg = rg || t.requires_grad(p);
    }
    Shape os = first.shape;
    os[0] = total;
    Tensor out(os);
    int64_t off = 0;
    for (int p : parts) {
        const Tensor& v = t.val(p);
        std::copy(v.data.begin(), v.data.end(), out.data.begin() + off);
        off += v.size();
    }
    return t.push(std::move(out), rg, [parts](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        int64_t off = 0;
        for (int p : parts) {
            Tensor& dp = tp.grad(p);
            if (tp.requires_grad(p))
                for (int64_t i = 0; i < dp.size(); ++i) dp[i] += g[off + i];
            off += dp.size();
        }
    });
}

/// Channel slice [from,to) of x:[C×L] (or rows of a vector stack).
inline int slice_channels(Tape& t, int x, int64_t from, int64_t to) {
    const Tensor& xv = t.val(x);
    if (xv.ndim() < 1 || from < 0 || to > xv.dim(0) || from >= to)
        throw std::invalid_argument("slice_channels: bad range [" + std::to_string(from) + "," +
                                    std::to_string(to) + ") for " + shape_str(xv.shape));
    const int64_t stride = xv.size() / xv.dim(0);
    Shape os = xv.shape;
    os[0] = to - from;
    Tensor out(os);
    std::copy(xv.data.begin() + from * stride, xv.data.begin() + to * stride, out.data.begin());
    return t.push(std::move(out), t.requires_grad(x), [x, from, stride](Tape& tp, int self) {
        if (!tp.requires_grad(x)) return;
        const Tensor& g = tp.grad(self);
        Tensor& dx = tp.grad(x);
        for (int64_t i = 0; i < g.size(); ++i) dx[from * stride + i] += g[i];
    });
}

/// Reorder channels of x:[C×L] by perm: out channel i = x channel perm[i].
inline int permute_channels(Tape& t, int x, const std::vector<int64_t>& perm) {
    const Tensor& xv = t.val(x);
    const int64_t c = xv.dim(0);
    if (static_cast<int64_t>(perm.size()) != c)
        throw std::invalid_argument("permute_channels: perm size " + std::to_string(perm.size()) + " vs C " +
                                    std::to_string(c));
    const int64_t stride = xv.size() / c;
    Tensor out(xv.shape);
    for (int64_t i = 0; i < c; ++i) {
        if (perm[i] < 0 || perm[i] >= c) throw std::invalid_argument("permute_channels: index out of range");
        std::copy(xv.data.begin() + perm[i] * stride, xv.data.begin() + (perm[i] + 1) * stride,
                  out.data.begin() + i * stride);
    }
    return t.push(std::move(out), t.requires_grad(x), [x, perm, stride, c](Tape& tp, int self) {
        if (!tp.requires_grad(x)) return;
        const Tensor& g = tp.grad(self);
        Tensor& dx = tp.grad(x);
        for (int64_t i = 0; i < c; ++i)
            for (int64_t j = 0; j < stride; ++j) dx[perm[i] * stride + j] += g[i * stride + j];
    });
}

inline int transpose(Tape& t, int x) {
    const Tensor& xv = t.val(x);
    check_2d(xv, "transpose input");
    const int64_t r = xv.dim(0), c = xv.dim(1);
    Tensor out({c, r});
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
    return t.push(std::move(out), t.requires_grad(x), [x, r, c](Tape& tp, int self) {
        if (!tp.requires_grad(x)) return;
        const Tensor& g = tp.grad(self);
        Tensor& dx = tp.grad(x);
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) dx[i * c + j] += g[j * r + i];
    });
}

/// Global mean over the length axis. x:[C×L] -> [C].
inline int mean_pool_len(Tape& t, int x) {
    const Tensor& xv = t.val(x);
    check_2d(xv, "mean_pool_len input");
    const int64_t c = xv.dim(0), len = xv.dim(1);
    Tensor out({c});
    for (int64_t ch = 0; ch < c; ++ch) {
        const float* row = xv.data.data() + ch * len;
        float s = 0.0f;
        for (int64_t p = 0; p < len; ++p) s += row[p];
        out[ch] = s / static_cast<float>(len);
    }
    return t.push(std::move(out), t.requires_grad(x), [x, c, len](Tape& tp, int self) {
        if (!tp.requires_grad(x)) return;
        const Tensor& g = tp.grad(self);
        Tensor& dx = tp.grad(x);
        for (int64_t ch = 0; ch < c; ++ch) {
            const float gl = g[ch] / static_cast<float>(len);
            float* row = dx.data.data() + ch * len;
            for (int64_t p = 0; p < len; ++p) row[p] += gl;
        }
    });
}

/// Fixed-coefficient convex/linear combination of equally shaped tensors.
inline int weighted_sum(Tape& t, const std::vector<int>& xs, const std::vector<double>& w) {
    if (xs.empty() || xs.size() != w.size())
        throw std::invalid_argument("weighted_sum: need matching non-empty inputs and weights");
    const Tensor& first = t.val(xs[0]);
    Tensor out(first.shape);
    bool rg = false;
    for (size_t i = 0; i < xs.size(); ++i) {
        const Tensor& v = t.val(xs[i]);
        check_same_shape(first, v, "weighted_sum");
        const float wi = static_cast<float>(w[i]);
        for (int64_t j = 0; j < v.size(); ++j) out[j] += wi * v[j];
        rg = rg || t.requires_grad(xs[i]);
    }
    return t.push(std::move(out), rg, [xs, w](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        for (size_t i = 0; i < xs.size(); ++i) {
            if (!tp.requires_grad(xs[i])) continue;
            Tensor& dx = tp.grad(xs[i]);
            const float wi = static_cast<float>(w[i]);
            for (int64_t j = 0; j < g.size(); ++j) dx[j] += wi * g[j];
        }
    });
}

// ---- 2D ops for the ME backbone ----

namespace detail {
inline void im2col(const float* x, int64_t cin, int64_t h, int64_t wd, int64_t kk, float* col) {
    // col: [cin*kk*kk, h*wd], same padding
    const int64_t pad = (kk - 1) / 2;
    int64_t row = 0;
    for (int64_t ic = 0; ic < cin; ++ic)
        for (int64_t ky = 0; ky < kk; ++ky)
            for (int64_t kx = 0; kx < kk; ++kx, ++row) {
                float* crow = col + row * h * wd;
                const int64_t dy = ky - pad, dx = kx - pad;
                for (int64_t y = 0; y < h; ++y) {
                    const int64_t sy = y + dy;
                    float* cr = crow + y * wd;
                    if (sy < 0 || sy >= h) {
                        std::fill(cr, cr + wd, 0.0f);
                        continue;
                    }
                    const float* xr = x + (ic * h + sy) * wd;
                    for (int64_t xx = 0; xx < wd; ++xx) {
                        const int64_t sx = xx + dx;
                        cr[xx] = (sx < 0 || sx >= wd) ? 0.0f : xr[sx];
                    }
                }
            }
}

inline void col2im_add(const float* col, int64_t cin, int64_t h, int64_t wd, int64_t kk, float* dx) {
    const int64_t pad = (kk - 1) / 2;
    int64_t row = 0;
    for (int64_t ic = 0; ic < cin; ++ic)
        for (int64_t ky = 0; ky < kk; ++ky)
            for (int64_t kx = 0; kx < kk; ++kx, ++row) {
                const float* crow = col + row * h * wd;
                const int64_t dy = ky - pad, dxo = kx - pad;
                for (int64_t y = 0; y < h; ++y) {
                    const int64_t sy = y + dy;
                    if (sy < 0 || sy >= h) continue;
                    float* xr = dx + (ic * h + sy) * wd;
                    const float* cr = crow + y * wd;
                    for (int64_t xx = 0; xx < wd; ++xx) {
                        const int64_t sx = xx + dxo;
                        if (sx >= 0 && sx < wd) xr[sx] += cr[xx];
                    }
                }
            }
}
}  // namespace detail

/// 2D cross-correlation, same padding, square odd kernel. x:[C_in×H×W], w:[C_out×C_in×K×K].
inline int conv2d(Tape& t, int x, int w, int b) {
    const Tensor& xv = t.val(x);
    const Tensor& wv = t.val(w);
    const Tensor& bv = t.val(b);
    if (xv.ndim() != 3 || wv.ndim() != 4)
        throw std::invalid_argument("conv2d: want x[C×H×W], w[C_out×C_in×K×K], got x" + shape_str(xv.shape) +
                                    " w" + shape_str(wv.shape));
    const int64_t cin = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
    const int64_t cout = wv.dim(0), kk = wv.dim(2);
    if (wv.dim(1) != cin || wv.dim(3) != kk)
        throw std::invalid_argument("conv2d: weight shape " + shape_str(wv.shape) + " vs input " +
                                    shape_str(xv.shape));
    if (kk % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd");
    if (bv.dim(0) != cout) throw std::invalid_argument("conv2d: bias shape " + shape_str(bv.shape));
    const int64_t krows = cin * kk * kk, hw = h * wd;
    auto col = std::make_shared<std::vector<float>>(static_cast<size_t>(krows * hw));
    detail::im2col(xv.data.data(), cin, h, wd, kk, col->data());
    Tensor out({cout, h, wd});
    gemm(out.data.data(), wv.data.data(), col->data(), cout, hw, krows, false, false, 0.0f);
    for (int64_t oc = 0; oc < cout; ++oc) {
        float* orow = out.data.data() + oc * hw;
        const float bb = bv[oc];
        for (int64_t p = 0; p < hw; ++p) orow[p] += bb;
    }
    bool rg = t.requires_grad(x) || t.requires_grad(w) || t.requires_grad(b);
    return t.push(std::move(out), rg, [x, w, b, col, cin, cout, h, wd, kk, krows, hw](Tape& tp, int self) {
        const float* g = tp.grad(self).data.data();
        if (tp.requires_grad(b)) {
            Tensor& db = tp.grad(b);
            for (int64_t oc = 0; oc < cout; ++oc) {
                const float* grow = g + oc * hw;
                float s = 0.0f;
                for (int64_t p = 0; p < hw; ++p) s += grow[p];
                db[oc] += s;
            }
        }
        if (tp.requires_grad(w))
            gemm(tp.grad(w).data.data(), g, col->data(), cout, krows, hw, false, true, 1.0f);
        if (tp.requires_grad(x)) {
            std::vector<float> dcol(static_cast<size_t>(krows * hw));
            gemm(dcol.data(), tp.val(w).data.data(), g, krows, hw, cout, true, false, 0.0f);
            detail::col2im_add(dcol.data(), cin, h, wd, kk, tp.grad(x).data.data());
        }
    });
}

/// 2×2 max-pool, stride 2; H and W must be even.
inline int maxpool2d(Tape& t, int x) {
    const Tensor& xv = t.val(x);
    if (xv.ndim() != 3 || xv.dim(1) % 2 || xv.dim(2) % 2)
        throw std::invalid_argument("maxpool2d: want x[C×H×W] with even H,W, got " + shape_str(xv.shape));
    const int64_t c = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
    const int64_t oh = h / 2, ow = wd / 2;
    Tensor out({c, oh, ow});
    auto arg = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(c * oh * ow));
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < oh; ++y)
            for (int64_t xx = 0; xx < ow; ++xx) {
                const int64_t base = (ch * h + 2 * y) * wd + 2 * xx;
                int64_t best = base;
                float bv = xv[base];
                for (int64_t dy = 0; dy < 2; ++dy)
                    for (int64_t dx = 0; dx < 2; ++dx) {
                        const int64_t idx = base + dy * wd + dx;
                        if (xv[idx] > bv) {
                            bv = xv[idx];
                            best = idx;
                        }
                    }
                const int64_t o = (ch * oh + y) * ow + xx;
                out[o] = bv;
                (*arg)[static_cast<size_t>(o)] = best;
            }
    return t.push(std::move(out), t.requires_grad(x), [x, arg](Tape& tp, int self) {
        if (!tp.requires_grad(x)) return;
        const Tensor& g = tp.grad(self);
        Tensor& dx = tp.grad(x);
        for (int64_t o = 0; o < g.size(); ++o) dx[(*arg)[static_cast<size_t>(o)]] += g[o];
    });
}

}  // namespace ops
}  // namespace latmm
