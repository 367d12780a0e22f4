#pragma once

#include <cmath>
#include <functional>

#include "latmm/ops.hpp"
#include "latmm/tape.hpp"
#include "latmm/tensor.hpp"

namespace latmm {

/// Scalar-valued tensor function under test: builds a fresh subgraph on the
/// given tape from the leaf id of x and returns the loss node id.
using TensorFn = std::function<int(Tape&, int)>;

inline double eval_scalar(const TensorFn& f, const Tensor& x) {
    Tape t;
    int xid = t.leaf(x, false);
    int loss = f(t, xid);
    if (t.val(loss).size() != 1) throw std::invalid_argument("gradcheck: f must be scalar-valued");
    return static_cast<double>(t.val(loss)[0]);
}

/// Central-difference check of reverse-mode gradients. Forward passes run in
/// float32; the checker itself differences in float64. Returns the max over
/// elements of |analytic − numeric| / max(1, |analytic|, |numeric|).
inline double gradcheck(const TensorFn& f, const Tensor& x, double h = 1e-3) {
    const double v0 = eval_scalar(f, x);
    if (eval_scalar(f, x) != v0) throw std::runtime_error("gradcheck: f is not deterministic");

    Tape t;
    int xid = t.leaf(x, true);
    int loss = f(t, xid);
    t.backward(loss);
    const Tensor analytic = t.grad(xid);

    double max_err = 0.0;
    Tensor xp = x;
    for (int64_t i = 0; i < x.size(); ++i) {
        const float orig = xp[i];
        const float up = static_cast<float>(orig + h);
        const float dn = static_cast<float>(orig - h);
        xp[i] = up;
        const double fp = eval_scalar(f, xp);
        xp[i] = dn;
        const double fm = eval_scalar(f, xp);
        xp[i] = orig;
        // divide by the step actually realized in float32, not the nominal 2h
        const double numeric = (fp - fm) / (static_cast<double>(up) - static_cast<double>(dn));
        const double a = static_cast<double>(analytic[i]);
        const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
        max_err = std::max(max_err, err);
    }
    return max_err;
}

/// Model builder under test: constructs the forward pass on the tape, reading
/// parameters from wherever it pleases via leaf_param, and returns the loss id.
using ModelFn = std::function<int(Tape&)>;

inline double eval_model(const ModelFn& f) {
    Tape t;
    int loss = f(t);
    if (t.val(loss).size() != 1) throw std::invalid_argument("gradcheck_param: loss must be scalar");
    return static_cast<double>(t.val(loss)[0]);
}

/// Same check as gradcheck(), but differentiates with respect to the named
/// parameter of a store the model reads through leaf_param.
inline double gradcheck_param(const ModelFn& f, ParameterStore& store, const std::string& name, double h = 1e-3) {
    Param& p = store.at(name);
    store.zero_grads();
    {
        Tape t;
        int loss = f(t);
        t.backward(loss);
    }
    const Tensor analytic = p.grad;

    double max_err = 0.0;
    for (int64_t i = 0; i < p.value.size(); ++i) {
        const float orig = p.value[i];
        const float up = static_cast<float>(orig + h);
        const float dn = static_cast<float>(orig - h);
        p.value[i] = up;
        const double fp = eval_model(f);
        p.value[i] = dn;
        const double fm = eval_model(f);
        p.value[i] = orig;
        const double numeric = (fp - fm) / (static_cast<double>(up) - static_cast<double>(dn));
        const double a = static_cast<double>(analytic[i]);
        const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace latmm
