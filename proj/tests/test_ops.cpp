#include "latmm/ops.hpp"

#include "latmm/gradcheck.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

using namespace latmm;
namespace op = latmm::ops;

namespace {

Tensor random_tensor(Shape s, std::mt19937& rng, float lo = -1.0f, float hi = 1.0f) {
    std::uniform_real_distribution<float> u(lo, hi);
    Tensor t(std::move(s));
    for (auto& v : t.data) v = u(rng);
    return t;
}

// Independent O(C_out*C_in*L*K) reference, same-padding cross-correlation.
Tensor conv1d_oracle(const Tensor& x, const Tensor& w, const Tensor& b) {
    const int64_t cin = x.dim(0), len = x.dim(1), cout = w.dim(0), kk = w.dim(2), pad = (kk - 1) / 2;
    Tensor out({cout, len});
    for (int64_t oc = 0; oc < cout; ++oc)
        for (int64_t p = 0; p < len; ++p) {
            double acc = b[oc];
            for (int64_t ic = 0; ic < cin; ++ic)
                for (int64_t k = 0; k < kk; ++k) {
                    const int64_t src = p + k - pad;
                    if (src >= 0 && src < len) acc += w[(oc * cin + ic) * kk + k] * x[ic * len + src];
                }
            out[oc * len + p] = static_cast<float>(acc);
        }
    return out;
}

Tensor conv2d_oracle(const Tensor& x, const Tensor& w, const Tensor& b) {
    const int64_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2), cout = w.dim(0), kk = w.dim(2), pad = (kk - 1) / 2;
    Tensor out({cout, h, wd});
    for (int64_t oc = 0; oc < cout; ++oc)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t xx = 0; xx < wd; ++xx) {
                double acc = b[oc];
                for (int64_t ic = 0; ic < cin; ++ic)
                    for (int64_t ky = 0; ky < kk; ++ky)
                        for (int64_t kx = 0; kx < kk; ++kx) {
                            const int64_t sy = y + ky - pad, sx = xx + kx - pad;
                            if (sy >= 0 && sy < h && sx >= 0 && sx < wd)
                                acc += w[((oc * cin + ic) * kk + ky) * kk + kx] * x[(ic * h + sy) * wd + sx];
                        }
                out[(oc * h + y) * wd + xx] = static_cast<float>(acc);
            }
    return out;
}

}  // namespace

TEST_CASE("matmul basics") {
    Tape t;
    int eye = t.leaf(Tensor({2, 2}, {1, 0, 0, 1}));
    int a = t.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
    int c = op::matmul(t, eye, a);
    CHECK(t.val(c).data == std::vector<float>{1, 2, 3, 4});

    int r = t.leaf(Tensor({1, 2}, {1, 0}));
    int v = t.leaf(Tensor({2, 1}, {5, 7}));
    int s = op::matmul(t, r, v);
    CHECK(t.val(s).data == std::vector<float>{5});

    CHECK_THROWS_WITH(op::matmul(t, a, r), Catch::Matchers::ContainsSubstring("inner dims"));
}

TEST_CASE("matmul gradient of sum(a*b) equals b-transpose structure") {
    std::mt19937 rng(11);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);

    Tape t;
    int aid = t.leaf(a, true);
    int bid = t.leaf(b, false);
    int loss = op::sum(t, op::matmul(t, aid, bid));
    t.backward(loss);
    // d/da sum(a.b) = ones(m,n).b^T: row-independent, each row = rowsums of b
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t k = 0; k < 4; ++k) {
            float rowsum = 0;
            for (int64_t j = 0; j < 2; ++j) rowsum += b[k * 2 + j];
            CHECK_THAT(t.grad(aid)[i * 4 + k], Catch::Matchers::WithinAbs(rowsum, 1e-6));
        }

    // and against central finite differences, h=1e-3
    double err = gradcheck([&](Tape& tp, int x) { return op::sum(tp, op::matmul(tp, x, tp.leaf(b))); }, a, 1e-3);
    CHECK(err < 1e-3);
}

TEST_CASE("matmul transpose flags agree with explicit transposition") {
    std::mt19937 rng(5);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({3, 5}, rng);
    Tape t;
    int c = op::matmul(t, t.leaf(a), t.leaf(b), true, false);  // a^T b: [4x5]
    Tensor at({4, 3});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) at[j * 3 + i] = a[i * 4 + j];
    int ref = op::matmul(t, t.leaf(at), t.leaf(b));
    for (int64_t i = 0; i < 20; ++i) CHECK_THAT(t.val(c)[i], Catch::Matchers::WithinAbs(t.val(ref)[i], 1e-5));
}

TEST_CASE("conv1d contracts") {
    std::mt19937 rng(3);

    SECTION("delta kernel reproduces channel mix") {
        Tensor x = random_tensor({2, 16}, rng);
        Tensor w({1, 2, 3});
        w[0 * 3 + 1] = 0.5f;  // ic=0 centre tap
        w[1 * 3 + 1] = 2.0f;  // ic=1 centre tap
        Tensor b({1});
        Tape t;
        int y = op::conv1d(t, t.leaf(x), t.leaf(w), t.leaf(b));
        for (int64_t p = 0; p < 16; ++p)
            CHECK_THAT(t.val(y)[p], Catch::Matchers::WithinAbs(0.5f * x[p] + 2.0f * x[16 + p], 1e-6));
    }

    SECTION("all-zero input yields bias broadcast") {
        Tape t;
        int y = op::conv1d(t, t.leaf(Tensor({3, 10})), t.leaf(random_tensor({4, 3, 5}, rng)),
                           t.leaf(Tensor({4}, {1, 2, 3, 4})));
        for (int64_t oc = 0; oc < 4; ++oc)
            for (int64_t p = 0; p < 10; ++p) CHECK(t.val(y)[oc * 10 + p] == static_cast<float>(oc + 1));
    }

    SECTION("even kernel rejected") {
        Tape t;
        CHECK_THROWS_WITH(op::conv1d(t, t.leaf(Tensor({1, 8})), t.leaf(Tensor({1, 1, 4})), t.leaf(Tensor({1}))),
                          Catch::Matchers::ContainsSubstring("odd"));
    }

    SECTION("matches naive triple-loop oracle on 100 random instances") {
        for (int it = 0; it < 100; ++it) {
            std::uniform_int_distribution<int64_t> ci(1, 5), co(1, 6), li(1, 40);
            const int64_t cin = ci(rng), cout = co(rng), len = li(rng);
            const int64_t kk = 2 * std::uniform_int_distribution<int64_t>(0, 3)(rng) + 1;
            Tensor x = random_tensor({cin, len}, rng);
            Tensor w = random_tensor({cout, cin, kk}, rng);
            Tensor b = random_tensor({cout}, rng);
            Tape t;
            int y = op::conv1d(t, t.leaf(x), t.leaf(w), t.leaf(b));
            Tensor ref = conv1d_oracle(x, w, b);
            for (int64_t i = 0; i < ref.size(); ++i)
                REQUIRE_THAT(t.val(y)[i], Catch::Matchers::WithinAbs(ref[i], 1e-5));
        }
    }

    SECTION("gradcheck") {
        Tensor x = random_tensor({2, 9}, rng);
        Tensor w = random_tensor({3, 2, 5}, rng);
        Tensor b = random_tensor({3}, rng);
        double ex = gradcheck(
            [&](Tape& tp, int xi) {
                return op::scale(tp, op::sum(tp, op::conv1d(tp, xi, tp.leaf(w), tp.leaf(b))), 1.0f / 27.0f);
            },
            x);
        double ew = gradcheck(
            [&](Tape& tp, int wi) {
                return op::scale(tp, op::sum(tp, op::conv1d(tp, tp.leaf(x), wi, tp.leaf(b))), 1.0f / 27.0f);
            },
            w);
        CHECK(ex < 1e-3);
        CHECK(ew < 1e-3);
    }
}

TEST_CASE("conv1d_depthwise contracts") {
    std::mt19937 rng(17);

    SECTION("shape and parameter count") {
        Tensor w = random_tensor({3, 5}, rng);
        Tensor b = random_tensor({3}, rng);
        CHECK(w.size() + b.size() == 15 + 3);
        Tape t;
        int y = op::conv1d_depthwise(t, t.leaf(random_tensor({3, 128}, rng)), t.leaf(w), t.leaf(b));
        CHECK(t.val(y).shape == Shape{3, 128});
    }

    SECTION("delta filters pass input through plus bias") {
        Tensor x = random_tensor({2, 12}, rng);
        Tensor w({2, 3});
        w[1] = 1.0f;
        w[3 + 1] = 1.0f;
        Tensor b({2}, {0.25f, -0.5f});
        Tape t;
        int y = op::conv1d_depthwise(t, t.leaf(x), t.leaf(w), t.leaf(b));
        for (int64_t ch = 0; ch < 2; ++ch)
            for (int64_t p = 0; p < 12; ++p)
                CHECK_THAT(t.val(y)[ch * 12 + p], Catch::Matchers::WithinAbs(x[ch * 12 + p] + b[ch], 1e-6));
    }

    SECTION("channel mismatch rejected") {
        Tape t;
        CHECK_THROWS_WITH(
            op::conv1d_depthwise(t, t.leaf(Tensor({3, 8})), t.leaf(Tensor({2, 3})), t.leaf(Tensor({2}))),
            Catch::Matchers::ContainsSubstring("channel mismatch"));
    }

    SECTION("equals conv1d with block-diagonal weight") {
        const int64_t c = 4, len = 20, kk = 5;
        Tensor x = random_tensor({c, len}, rng);
        Tensor w = random_tensor({c, kk}, rng);
        Tensor b = random_tensor({c}, rng);
        Tensor wfull({c, c, kk});  // grouped expansion: filter i only on channel i
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t k = 0; k < kk; ++k) wfull[(ch * c + ch) * kk + k] = w[ch * kk + k];
        Tape t;
        int yd = op::conv1d_depthwise(t, t.leaf(x), t.leaf(w), t.leaf(b));
        int yf = op::conv1d(t, t.leaf(x), t.leaf(wfull), t.leaf(b));
        for (int64_t i = 0; i < c * len; ++i)
            CHECK_THAT(t.val(yd)[i], Catch::Matchers::WithinAbs(t.val(yf)[i], 1e-6));
    }

    SECTION("gradcheck") {
        Tensor x = random_tensor({3, 11}, rng);
        Tensor w = random_tensor({3, 5}, rng);
        Tensor b = random_tensor({3}, rng);
        double e = gradcheck(
            [&](Tape& tp, int wi) { return op::sum(tp, op::conv1d_depthwise(tp, tp.leaf(x), wi, tp.leaf(b))); },
            w);
        CHECK(e < 1e-3);
    }
}

TEST_CASE("softmax values and stability") {
    Tape t;
    int y1 = op::softmax(t, t.leaf(Tensor({2}, {0, 0})));
    CHECK_THAT(t.val(y1)[0], Catch::Matchers::WithinAbs(0.5, 1e-7));

    int y2 = op::softmax(t, t.leaf(Tensor({1}, {3.7f})));
    CHECK(t.val(y2)[0] == 1.0f);

    // e^2/(e^2+2) etc., frozen from a 64-bit evaluation
    int y3 = op::softmax(t, t.leaf(Tensor({3}, {2, 0, 0})));
    CHECK_THAT(t.val(y3)[0], Catch::Matchers::WithinAbs(0.78699, 1e-5));
    CHECK_THAT(t.val(y3)[1], Catch::Matchers::WithinAbs(0.10650, 1e-5));
    CHECK_THAT(t.val(y3)[2], Catch::Matchers::WithinAbs(0.10650, 1e-5));

    // row-stochastic over the extreme range
    std::mt19937 rng(23);
    std::uniform_real_distribution<float> u(-80.0f, 80.0f);
    Tensor x({16, 7});
    for (auto& v : x.data) v = u(rng);
    int y4 = op::softmax(t, t.leaf(x));
    for (int64_t r = 0; r < 16; ++r) {
        float s = 0;
        for (int64_t i = 0; i < 7; ++i) {
            const float p = t.val(y4)[r * 7 + i];
            CHECK(p >= 0.0f);
            s += p;
        }
        CHECK_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-6));
    }
}

TEST_CASE("softmax gradcheck") {
    std::mt19937 rng(29);
    Tensor x = random_tensor({4, 5}, rng);
    Tensor mask = random_tensor({4, 5}, rng);
    double e = gradcheck(
        [&](Tape& tp, int xi) { return op::sum(tp, op::mul(tp, op::softmax(tp, xi), tp.leaf(mask))); }, x);
    CHECK(e < 1e-3);
}

TEST_CASE("cross_entropy values") {
    Tape t;
    int l1 = t.leaf(Tensor({3}, {1, 1, 1}));
    int c1 = op::cross_entropy(t, l1, {0});
    CHECK_THAT(t.val(c1)[0], Catch::Matchers::WithinAbs(std::log(3.0), 1e-6));

    int l2 = t.leaf(Tensor({3}, {2, 0, 0}));
    int c2 = op::cross_entropy(t, l2, {0});
    CHECK_THAT(t.val(c2)[0], Catch::Matchers::WithinAbs(std::log(1.0 + 2.0 * std::exp(-2.0)), 1e-6));

    CHECK_THROWS_AS(op::cross_entropy(t, l2, {3}), std::out_of_range);
    CHECK_THROWS_AS(op::cross_entropy(t, l2, {-1}), std::out_of_range);
}

TEST_CASE("cross_entropy gradcheck") {
    std::mt19937 rng(31);
    Tensor logits = random_tensor({4, 3}, rng);
    double e = gradcheck([&](Tape& tp, int li) { return op::cross_entropy(tp, li, {0, 2, 1, 1}); }, logits);
    CHECK(e < 1e-3);
}

TEST_CASE("backward basics") {
    Tensor w({5}, {1, -2, 3, 0.5f, 4});

    SECTION("loss = sum(w) gives all-ones grad") {
        Tape t;
        int wid = t.leaf(w, true);
        t.backward(op::sum(t, wid));
        for (int64_t i = 0; i < 5; ++i) CHECK(t.grad(wid)[i] == 1.0f);
    }

    SECTION("loss = sum(w*w)/2 gives grad w") {
        Tape t;
        int wid = t.leaf(w, true);
        t.backward(op::scale(t, op::sum(t, op::mul(t, wid, wid)), 0.5f));
        for (int64_t i = 0; i < 5; ++i) CHECK_THAT(t.grad(wid)[i], Catch::Matchers::WithinAbs(w[i], 1e-6));
    }

    SECTION("double backward without reset is an error") {
        Tape t;
        int wid = t.leaf(w, true);
        int loss = op::sum(t, wid);
        t.backward(loss);
        CHECK_THROWS_AS(t.backward(loss), std::logic_error);
    }

    SECTION("non-scalar loss rejected") {
        Tape t;
        int wid = t.leaf(w, true);
        CHECK_THROWS_AS(t.backward(wid), std::invalid_argument);
    }
}

TEST_CASE("gradcheck harness itself") {
    std::mt19937 rng(37);
    // values and step on the 2^-10 grid so every float32 partial sum is exact
    Tensor x({6});
    std::uniform_int_distribution<int> grid(-1024, 1024);
    for (auto& v : x.data) v = static_cast<float>(grid(rng)) / 1024.0f;
    CHECK(gradcheck([](Tape& tp, int xi) { return op::sum(tp, xi); }, x, 1.0 / 1024.0) < 1e-7);

    Tensor w = random_tensor({3, 6}, rng);
    Tensor b = random_tensor({3}, rng);
    double e = gradcheck(
        [&](Tape& tp, int xi) { return op::cross_entropy(tp, op::linear(tp, xi, tp.leaf(w), tp.leaf(b)), {1}); },
        x);
    CHECK(e < 1e-3);
}

TEST_CASE("linear matches matmul route") {
    std::mt19937 rng(41);
    Tensor x = random_tensor({7}, rng);
    Tensor w = random_tensor({4, 7}, rng);
    Tensor b = random_tensor({4}, rng);
    Tape t;
    int y = op::linear(t, t.leaf(x), t.leaf(w), t.leaf(b));
    int ref = op::matmul(t, t.leaf(w), t.leaf(Tensor({7, 1}, x.data)));
    for (int64_t i = 0; i < 4; ++i)
        CHECK_THAT(t.val(y)[i], Catch::Matchers::WithinAbs(t.val(ref)[i] + b[i], 1e-5));

    double e = gradcheck(
        [&](Tape& tp, int wi) {
            return op::cross_entropy(tp, op::linear(tp, tp.leaf(x), wi, tp.leaf(b)), {2});
        },
        w);
    CHECK(e < 1e-3);
}

TEST_CASE("structural ops") {
    std::mt19937 rng(43);

    SECTION("concat/slice round trip") {
        Tensor a = random_tensor({2, 6}, rng), b = random_tensor({3, 6}, rng);
        Tape t;
        int cc = op::concat(t, {t.leaf(a), t.leaf(b)});
        CHECK(t.val(cc).shape == Shape{5, 6});
        int sl = op::slice_channels(t, cc, 2, 5);
        for (int64_t i = 0; i < b.size(); ++i) CHECK(t.val(sl)[i] == b[i]);
    }

    SECTION("permute_channels inverts") {
        Tensor x = random_tensor({4, 3}, rng);
        Tape t;
        int p = op::permute_channels(t, t.leaf(x), {2, 0, 3, 1});
        int q = op::permute_channels(t, p, {1, 3, 0, 2});
        for (int64_t i = 0; i < x.size(); ++i) CHECK(t.val(q)[i] == x[i]);
    }

    SECTION("mean_pool_len") {
        Tape t;
        int y = op::mean_pool_len(t, t.leaf(Tensor({2, 4}, {1, 2, 3, 4, 10, 10, 10, 10})));
        CHECK_THAT(t.val(y)[0], Catch::Matchers::WithinAbs(2.5, 1e-6));
        CHECK(t.val(y)[1] == 10.0f);
    }

    SECTION("weighted_sum convexity") {
        Tensor a = random_tensor({5}, rng), b = random_tensor({5}, rng);
        Tape t;
        int y = op::weighted_sum(t, {t.leaf(a), t.leaf(b)}, {0.25, 0.75});
        for (int64_t i = 0; i < 5; ++i)
            CHECK_THAT(t.val(y)[i], Catch::Matchers::WithinAbs(0.25 * a[i] + 0.75 * b[i], 1e-6));
    }

    SECTION("gradcheck through concat + slice + permute + pool") {
        Tensor x = random_tensor({3, 8}, rng);
        double e = gradcheck(
            [&](Tape& tp, int xi) {
                int cc = op::concat(tp, {xi, op::relu(tp, xi)});
                int pm = op::permute_channels(tp, cc, {5, 3, 1, 4, 2, 0});
                return op::sum(tp, op::mul(tp, op::mean_pool_len(tp, pm), op::mean_pool_len(tp, pm)));
            },
            x);
        CHECK(e < 1e-3);
    }
}

TEST_CASE("conv2d and maxpool2d") {
    std::mt19937 rng(47);

    SECTION("conv2d matches naive oracle") {
        for (int it = 0; it < 10; ++it) {
            Tensor x = random_tensor({2, 6, 8}, rng);
            Tensor w = random_tensor({3, 2, 3, 3}, rng);
            Tensor b = random_tensor({3}, rng);
            Tape t;
            int y = op::conv2d(t, t.leaf(x), t.leaf(w), t.leaf(b));
            Tensor ref = conv2d_oracle(x, w, b);
            for (int64_t i = 0; i < ref.size(); ++i)
                REQUIRE_THAT(t.val(y)[i], Catch::Matchers::WithinAbs(ref[i], 1e-4));
        }
    }

    SECTION("conv2d gradcheck") {
        Tensor x = random_tensor({2, 4, 4}, rng);
        Tensor w = random_tensor({2, 2, 3, 3}, rng);
        Tensor b = random_tensor({2}, rng);
        double ex = gradcheck(
            [&](Tape& tp, int xi) {
                return op::scale(tp, op::sum(tp, op::conv2d(tp, xi, tp.leaf(w), tp.leaf(b))), 1.0f / 32.0f);
            },
            x);
        double ew = gradcheck(
            [&](Tape& tp, int wi) {
                return op::scale(tp, op::sum(tp, op::conv2d(tp, tp.leaf(x), wi, tp.leaf(b))), 1.0f / 32.0f);
            },
            w);
        CHECK(ex < 1e-3);
        CHECK(ew < 1e-3);
    }

    SECTION("maxpool2d picks window maxima and routes gradient") {
        Tensor x({1, 2, 4}, {1, 5, 2, 0, 3, 4, 1, 7});
        Tape t;
        int xi = t.leaf(x, true);
        int y = op::maxpool2d(t, xi);
        CHECK(t.val(y).data == std::vector<float>{5, 7});
        t.backward(op::sum(t, y));
        CHECK(t.grad(xi).data == std::vector<float>{0, 1, 0, 0, 0, 0, 0, 1});
    }

    SECTION("odd spatial size rejected") {
        Tape t;
        CHECK_THROWS_AS(op::maxpool2d(t, t.leaf(Tensor({1, 3, 4}))), std::invalid_argument);
    }
}

TEST_CASE("determinism: identical inputs give bit-identical outputs") {
    std::mt19937 rng(53);
    Tensor x = random_tensor({3, 32}, rng);
    Tensor w = random_tensor({8, 3, 7}, rng);
    Tensor b = random_tensor({8}, rng);
    auto run = [&] {
        Tape t;
        int y = op::relu(t, op::conv1d(t, t.leaf(x), t.leaf(w), t.leaf(b)));
        return t.val(op::mean_pool_len(t, y)).data;
    };
    CHECK(run() == run());
}
