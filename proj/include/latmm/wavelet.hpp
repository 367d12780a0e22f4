#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace latmm {
namespace wavelet {

/// Low-pass analysis filters for Daubechies wavelets db1..db8 (2p taps for
/// p vanishing moments), normalized so that sum(h) = sqrt(2).
inline const std::vector<double>& daubechies_lowpass(int order) {
    static const std::vector<std::vector<double>> tables = {
        {7.07106781186547573e-01, 7.07106781186547573e-01},
        {-1.29409522551260370e-01, 2.24143868042013389e-01, 8.36516303737807942e-01, 4.82962913144534156e-01},
        {3.52262918857095333e-02, -8.54412738820266582e-02, -1.35011020010254584e-01, 4.59877502118491543e-01,
         8.06891509311092547e-01, 3.32670552950082632e-01},
        {-1.05974017850690317e-02, 3.28830116668851966e-02, 3.08413818355607640e-02, -1.87034811719093086e-01,
         -2.79837694168598543e-02, 6.30880767929858921e-01, 7.14846570552915672e-01, 2.30377813308896506e-01},
        {3.33572528547377125e-03, -1.25807519990819988e-02, -6.24149021279827437e-03, 7.75714938400457188e-02,
         -3.22448695846383748e-02, -2.42294887066382025e-01, 1.38428145901320743e-01, 7.24308528437772936e-01,
         6.03829269797189649e-01, 1.60102397974192928e-01},
        {-1.07730108530847959e-03, 4.77725751094551076e-03, 5.53842201161496126e-04, -3.15820393174860298e-02,
         2.75228655303057269e-02, 9.75016055873230425e-02, -1.29766867567261940e-01, -2.26264693965439828e-01,
         3.15250351709197629e-01, 7.51133908021095364e-01, 4.94623890398453059e-01, 1.11540743350109467e-01},
        {3.53713799974520241e-04, -1.80164070404749085e-03, 4.29577972921366515e-04, 1.25509985560998405e-02,
         -1.65745416306668815e-02, -3.80299369350144134e-02, 8.06126091510830783e-02, 7.13092192668302594e-02,
         -2.24036184993874982e-01, -1.43906003928564979e-01, 4.69782287405193122e-01, 7.29132090846235092e-01,
         3.96539319481917285e-01, 7.78520540850091841e-02},
        {-1.17476784124769535e-04, 6.75449406450569331e-04, -3.91740373376947050e-04, -4.87035299345157414e-03,
         8.74609404740577662e-03, 1.39810279173982824e-02, -4.40882539307947546e-02, -1.73693010018075474e-02,
         1.28747426620478472e-01, 4.72484573913282795e-04, -2.84015542961546907e-01, -1.58291052563493059e-02,
         5.85354683654206731e-01, 6.75630736297289758e-01, 3.12871590914299946e-01, 5.44158422431040081e-02}};
    if (order < 1 || order > 8)
        throw std::invalid_argument("daubechies order must be in [1,8], got " + std::to_string(order));
    return tables[static_cast<size_t>(order - 1)];
}

/// Quadrature mirror of h: g[k] = (-1)^k h[L-1-k].
inline std::vector<double> quadrature_mirror(const std::vector<double>& h) {
    std::vector<double> g(h.size());
    for (size_t k = 0; k < h.size(); ++k) g[k] = ((k % 2) ? -1.0 : 1.0) * h[h.size() - 1 - k];
    return g;
}

struct WaveletSpec {
    int order = 4;   // vanishing moments, db<order>
    int levels = 4;  // decomposition depth
};

struct WaveletCoeffs {
    std::vector<double> approx;                // deepest-level approximation band
    std::vector<std::vector<double>> details;  // details[0] = finest (level 1)
    size_t original_len = 0;
    size_t padded_len = 0;

    size_t total_count() const {
        size_t n = approx.size();
        for (const auto& d : details) n += d.size();
        return n;
    }
    double energy() const {
        double e = 0;
        for (double v : approx) e += v * v;
        for (const auto& d : details)
            for (double v : d) e += v * v;
        return e;
    }
};

namespace detail {

// One analysis step with periodic extension; n must be even.
inline void analysis_step(const std::vector<double>& x, const std::vector<double>& h,
                          const std::vector<double>& g, std::vector<double>& a, std::vector<double>& d) {
    const size_t n = x.size(), half = n / 2, fl = h.size();
    a.assign(half, 0.0);
    d.assign(half, 0.0);
    for (size_t k = 0; k < half; ++k) {
        double sa = 0, sd = 0;
        for (size_t m = 0; m < fl; ++m) {
            const double xv = x[(2 * k + m) % n];
            sa += h[m] * xv;
            sd += g[m] * xv;
        }
        a[k] = sa;
        d[k] = sd;
    }
}

// Transpose of the orthogonal analysis step.
inline std::vector<double> synthesis_step(const std::vector<double>& a, const std::vector<double>& d,
                                          const std::vector<double>& h, const std::vector<double>& g) {
    const size_t half = a.size(), n = half * 2, fl = h.size();
    std::vector<double> x(n, 0.0);
    for (size_t k = 0; k < half; ++k)
        for (size_t m = 0; m < fl; ++m) x[(2 * k + m) % n] += h[m] * a[k] + g[m] * d[k];
    return x;
}

}  // namespace detail

inline WaveletCoeffs dwt(const std::vector<double>& x, const WaveletSpec& spec) {
    const auto& h = daubechies_lowpass(spec.order);
    const auto g = quadrature_mirror(h);
    if (spec.levels < 1) throw std::invalid_argument("dwt: levels must be >= 1");
    const size_t block = size_t{1} << spec.levels;
    size_t padded = ((x.size() + block - 1) / block) * block;
    // The deepest analysis step convolves a band of padded/2^(levels-1)
    // samples; keep it at least one filter length so periodization stays
    // orthogonal.
    if (x.size() < 2 || padded < (h.size() << (spec.levels - 1)))
        throw std::invalid_argument("dwt: signal of length " + std::to_string(x.size()) + " too short for " +
                                    std::to_string(spec.levels) + " levels of db" + std::to_string(spec.order));
    WaveletCoeffs c;
    c.original_len = x.size();
    c.padded_len = padded;
    std::vector<double> band(x);
    band.resize(padded, 0.0);
    for (int lv = 0; lv < spec.levels; ++lv) {
        std::vector<double> a, d;
        detail::analysis_step(band, h, g, a, d);
        c.details.push_back(std::move(d));
        band = std::move(a);
    }
    c.approx = std::move(band);
    return c;
}

inline std::vector<double> idwt(const WaveletCoeffs& c, const WaveletSpec& spec) {
    const auto& h = daubechies_lowpass(spec.order);
    const auto g = quadrature_mirror(h);
    if (static_cast<int>(c.details.size()) != spec.levels)
        throw std::invalid_argument("idwt: coefficient levels " + std::to_string(c.details.size()) +
                                    " do not match spec levels " + std::to_string(spec.levels));
    if (c.total_count() != c.padded_len) throw std::invalid_argument("idwt: coefficient count/shape mismatch");
    std::vector<double> band = c.approx;
    for (int lv = spec.levels - 1; lv >= 0; --lv) {
        const auto& d = c.details[static_cast<size_t>(lv)];
        if (d.size() != band.size()) throw std::invalid_argument("idwt: detail band size mismatch");
        band = detail::synthesis_step(band, d, h, g);
    }
    band.resize(c.original_len);
    return band;
}

/// d -> sign(d) * max(|d| - t, 0) on every detail band; approximation untouched.
inline WaveletCoeffs soft_threshold(WaveletCoeffs c, double t) {
    if (t < 0) throw std::invalid_argument("soft_threshold: negative threshold");
    for (auto& band : c.details)
        for (auto& d : band) {
            const double mag = std::abs(d) - t;
            d = mag > 0 ? (d > 0 ? mag : -mag) : 0.0;
        }
    return c;
}

inline double median_abs(std::vector<double> v) {
    if (v.empty()) return 0.0;
    for (auto& x : v) x = std::abs(x);
    const size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    double hi = v[mid];
    if (v.size() % 2 == 0) {
        std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid) - 1, v.end());
        return 0.5 * (hi + v[mid - 1]);
    }
    return hi;
}

/// Universal soft-threshold denoising: sigma from the finest detail band's
/// median absolute deviation, t = sigma * sqrt(2 ln N).
inline std::vector<double> denoise(const std::vector<double>& x, const WaveletSpec& spec = {}) {
    WaveletCoeffs c = dwt(x, spec);
    const double sigma = median_abs(c.details.front()) / 0.6745;
    const double t = sigma * std::sqrt(2.0 * std::log(static_cast<double>(x.size())));
    return idwt(soft_threshold(std::move(c), t), spec);
}

}  // namespace wavelet
}  // namespace latmm
