// Acceptance gate: one pass/fail line per criterion, nonzero exit on any
// failure. Criteria 6 and 7 train real models and dominate the runtime.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <thread>

#include "latmm/data_io.hpp"
#include "latmm/eval.hpp"
#include "latmm/gradcheck.hpp"
#include "latmm/model.hpp"
#include "latmm/wavelet.hpp"

using namespace latmm;
namespace fs = std::filesystem;

namespace {

int g_failed = 0;

void criterion(int n, bool ok, const std::string& detail) {
    std::printf("criterion %d: %s (%s)\n", n, ok ? "pass" : "FAIL", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failed;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor random_tensor(Shape s, std::mt19937& rng, float lo = -1.0f, float hi = 1.0f) {
    std::uniform_real_distribution<float> u(lo, hi);
    Tensor t(std::move(s));
    for (auto& v : t.data) v = u(rng);
    return t;
}

// ---- criterion 1: gradient checks ------------------------------------------

void check_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937 rng(7);
    double op_err = 0.0;

    {
        Tensor x = random_tensor({4, 5}, rng);
        Tensor w = random_tensor({5, 3}, rng);
        op_err = std::max(op_err, gradcheck([&](Tape& t, int xi) {
                              return ops::sum(t, ops::matmul(t, xi, t.leaf(w)));
                          },
                                            x));
    }
    {
        Tensor x = random_tensor({3, 20}, rng);
        Tensor w = random_tensor({4, 3, 5}, rng), b = random_tensor({4}, rng);
        op_err = std::max(op_err, gradcheck([&](Tape& t, int xi) {
                              return ops::scale(t, ops::sum(t, ops::conv1d(t, xi, t.leaf(w), t.leaf(b))),
                                                1.0f / 60.0f);
                          },
                                            x));
    }
    {
        Tensor x = random_tensor({2, 8, 8}, rng);
        Tensor w = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
        op_err = std::max(op_err, gradcheck([&](Tape& t, int xi) {
                              return ops::scale(t, ops::sum(t, ops::conv2d(t, xi, t.leaf(w), t.leaf(b))),
                                                1.0f / 100.0f);
                          },
                                            x));
    }
    {
        Tensor x = random_tensor({6}, rng);
        op_err = std::max(op_err, gradcheck([&](Tape& t, int xi) { return ops::cross_entropy(t, xi, {2}); }, x));
    }
    {
        Tensor x = random_tensor({5, 4}, rng);
        op_err = std::max(op_err, gradcheck([&](Tape& t, int xi) {
                              return ops::scale(t, ops::sum(t, ops::relu(t, xi)), 0.25f);
                          },
                                            x));
    }

    double module_err = 0.0;
    {
        ps::PSNetConfig cfg;
        cfg.input_length = 32;
        cfg.grouped_branches = {{3, 1}, {3, 2}, {5, 3}, {5, 4}};
        cfg.mixed_branches = {{3, 2}, {3, 3}, {5, 4}, {5, 5}};
        cfg.feature_dim = 16;
        auto store = ps::build_ps_net(cfg, 11);
        Tensor x = random_tensor({3, 32}, rng);
        auto f = [&](Tape& t) {
            return ops::cross_entropy(t, ps::ps_forward(t, store, cfg, t.leaf(x)).logits, {1});
        };
        module_err = std::max({module_err, gradcheck_param(f, store, "ps.stem.w"),
                               gradcheck_param(f, store, "ps.block2.g0.b0.pw")});
    }
    {
        me::MEConfig cfg;
        cfg.backbone.input_size = 16;
        cfg.backbone.stage_channels = {4, 8};
        cfg.backbone.feature_dim = 32;
        cfg.attn = {.tokens = 4, .d_model = 8, .heads = 2};
        ParameterStore store;
        std::mt19937 r2(13);
        me::build_me_branch(store, cfg, r2);
        me::FrameStack stack{random_tensor({2, 3, 16, 16}, rng, 0.0f, 1.0f),
                             random_tensor({2, 1, 16, 16}, rng, 0.0f, 1.0f)};
        auto f = [&](Tape& t) {
            return ops::scale(t, ops::sum(t, me::me_forward(t, store, cfg, stack)), 1.0f / 32.0f);
        };
        module_err = std::max({module_err, gradcheck_param(f, store, "me.colour.s0.w"),
                               gradcheck_param(f, store, "me.ga.w0")});
    }

    double full_err = 0.0;
    {
        // reduced 16x16 two-frame configuration of the whole assembly
        model::FullModelConfig cfg;
        cfg.me_cfg.backbone.input_size = 16;
        cfg.me_cfg.backbone.stage_channels = {4, 8};
        cfg.me_cfg.backbone.feature_dim = 32;
        cfg.me_cfg.attn = {.tokens = 4, .d_model = 8, .heads = 2};
        cfg.fusion = {.tokens = 4, .d_model = 8, .heads = 2};
        cfg.ps_cfg.input_length = 64;
        cfg.ps_cfg.grouped_branches = {{3, 1}, {3, 2}, {5, 3}, {5, 4}};
        cfg.ps_cfg.mixed_branches = {{3, 2}, {3, 3}, {5, 4}, {5, 5}};
        cfg.ps_cfg.feature_dim = 32;
        auto m = model::build_full_model(cfg, 17);
        data::MESample s;
        s.label = 1;
        s.frames.colour = random_tensor({2, 3, 16, 16}, rng, 0.0f, 1.0f);
        s.frames.depth = random_tensor({2, 1, 16, 16}, rng, 0.0f, 1.0f);
        Tensor seg = random_tensor({3, 64}, rng);
        auto f = [&](Tape& t) {
            return model::composite_loss(t, model::full_forward(t, m, s, seg), s.label);
        };
        full_err = std::max({gradcheck_param(f, m.store, "me.colour.s1.w"),
                             gradcheck_param(f, m.store, "ps.feat.w"), gradcheck_param(f, m.store, "fuse.w0"),
                             gradcheck_param(f, m.store, "head.w")});
    }

    const double elapsed = seconds_since(t0);
    char buf[160];
    std::snprintf(buf, sizeof buf, "op err %.2e <= 1e-3, module err %.2e <= 5e-3, full err %.2e <= 5e-3, %.1fs < 120s",
                  op_err, module_err, full_err, elapsed);
    criterion(1, op_err <= 1e-3 && module_err <= 5e-3 && full_err <= 5e-3 && elapsed < 120.0, buf);
}

// ---- criterion 2: temporal fusion weights ----------------------------------

void check_weights() {
    bool ok = true;
    std::string detail;
    // independent 64-bit evaluation of the sampled-Gaussian weights
    auto expect = [](int f) {
        std::vector<double> w(static_cast<size_t>(f));
        double sum = 0.0;
        for (int i = 0; i < f; ++i) {
            const double x = f == 1 ? 0.0 : -3.0 + static_cast<double>(i) * 6.0 / (f - 1);
            w[static_cast<size_t>(i)] = std::exp(-0.5 * x * x);
            sum += w[static_cast<size_t>(i)];
        }
        for (auto& v : w) v /= sum;
        return w;
    };

    auto f3 = fusion::gaussian_weights(3);
    const double ref3[3] = {0.010868, 0.978264, 0.010868};
    for (int i = 0; i < 3; ++i) {
        ok = ok && std::abs(f3.weights[static_cast<size_t>(i)] - ref3[i]) < 1e-4;
        ok = ok && std::abs(f3.weights[static_cast<size_t>(i)] - expect(3)[static_cast<size_t>(i)]) < 1e-12;
    }
    auto f5 = fusion::gaussian_weights(5);
    ok = ok && std::abs(f5.weights[2] - 0.598257) < 1e-4;
    ok = ok && std::abs(f5.weights[2] - expect(5)[2]) < 1e-12;

    auto f1 = fusion::gaussian_weights(1);
    ok = ok && f1.weights.size() == 1 && f1.weights[0] == 1.0;

    double worst_sum = 0.0;
    for (int f = 1; f <= 15; ++f) {
        double s = 0.0;
        for (double v : fusion::gaussian_weights(f).weights) s += v;
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    }
    ok = ok && worst_sum < 1e-9;
    char buf[120];
    std::snprintf(buf, sizeof buf, "F=3/F=5 within 1e-4, F=1 exact, worst |sum-1| = %.1e < 1e-9", worst_sum);
    criterion(2, ok, buf);
}

// ---- criterion 3: wavelet transform ----------------------------------------

void check_wavelet() {
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    double worst_pr = 0.0;
    std::mt19937 rng(3);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int n : {64, 100, 256, 1000}) {
        std::vector<double> x(static_cast<size_t>(n));
        double mx = 0.0;
        for (auto& v : x) {
            v = g(rng);
            mx = std::max(mx, std::abs(v));
        }
        auto rec = wavelet::idwt(wavelet::dwt(x, {}), {});
        double err = 0.0;
        for (int i = 0; i < n; ++i) err = std::max(err, std::abs(rec[static_cast<size_t>(i)] - x[static_cast<size_t>(i)]));
        worst_pr = std::max(worst_pr, err / mx);
    }
    ok = ok && worst_pr < 1e-5;

    double gain_sum = 0.0;
    const int n = 512;
    std::normal_distribution<double> noise(0.0, 0.2);
    for (int seed = 0; seed < 20; ++seed) {
        std::mt19937 r(static_cast<uint32_t>(seed) + 100);
        std::vector<double> clean(n), noisy(n);
        for (int i = 0; i < n; ++i) {
            clean[static_cast<size_t>(i)] = std::sin(2.0 * std::numbers::pi * 3.0 * i / n);
            noisy[static_cast<size_t>(i)] = clean[static_cast<size_t>(i)] + noise(r);
        }
        auto den = wavelet::denoise(noisy, {});
        auto snr = [&](const std::vector<double>& y) {
            double sig = 0.0, err = 0.0;
            for (int i = 0; i < n; ++i) {
                sig += clean[static_cast<size_t>(i)] * clean[static_cast<size_t>(i)];
                const double d = y[static_cast<size_t>(i)] - clean[static_cast<size_t>(i)];
                err += d * d;
            }
            return 10.0 * std::log10(sig / err);
        };
        gain_sum += snr(den) - snr(noisy);
    }
    const double gain = gain_sum / 20.0;
    const double elapsed = seconds_since(t0);
    ok = ok && gain >= 3.0 && elapsed < 30.0;
    char buf[120];
    std::snprintf(buf, sizeof buf, "reconstruction err %.1e < 1e-5, mean snr gain %.2f dB >= 3, %.1fs < 30s",
                  worst_pr, gain, elapsed);
    criterion(3, ok, buf);
}

// ---- criterion 4: attention properties -------------------------------------

void check_attention() {
    bool ok = true;
    std::mt19937 rng(5);
    double worst_row = 0.0;
    for (int rep = 0; rep < 1000; ++rep) {
        Tape t;
        const int64_t tok = 2 + rep % 7, dim = 4 + rep % 5;
        int q = t.leaf(random_tensor({tok, dim}, rng));
        int k = t.leaf(random_tensor({tok, dim}, rng));
        int v = t.leaf(random_tensor({tok, dim}, rng));
        int attn = -1;
        attention::sdp_attention(t, q, k, v, &attn);
        const Tensor& a = t.val(attn);
        for (int64_t r = 0; r < tok; ++r) {
            double s = 0.0;
            for (int64_t c = 0; c < tok; ++c) s += a[r * tok + c];
            worst_row = std::max(worst_row, std::abs(s - 1.0));
        }
    }
    ok = ok && worst_row < 1e-6;

    // a single key/value token forces every attention weight to exactly 1
    bool single_exact = true;
    {
        Tape t;
        int q = t.leaf(random_tensor({3, 4}, rng));
        int k = t.leaf(random_tensor({1, 4}, rng));
        int v = t.leaf(random_tensor({1, 4}, rng));
        int attn = -1;
        int out = attention::sdp_attention(t, q, k, v, &attn);
        for (int64_t r = 0; r < 3; ++r) {
            single_exact = single_exact && t.val(attn)[r] == 1.0f;
            for (int64_t c = 0; c < 4; ++c) single_exact = single_exact && t.val(out)[r * 4 + c] == t.val(v)[c];
        }
    }
    ok = ok && single_exact;

    // one head through the multi-head plumbing equals the direct computation
    double head_err = 0.0;
    {
        attention::AttentionConfig cfg{.tokens = 4, .d_model = 8, .heads = 1};
        ParameterStore store;
        std::mt19937 r2(11);
        attention::build_guided_attention(store, "a", cfg, 32, 32, r2);
        Tensor main_v = random_tensor({32}, rng), guide_v = random_tensor({32}, rng);
        Tape t;
        int out = attention::guided_multihead(t, store, "a", t.leaf(main_v), t.leaf(guide_v), cfg);

        Tape t2;
        auto lin = [&](const char* nm, const Tensor& x) {
            return ops::linear(t2, t2.leaf(x), t2.leaf(store.at(std::string("a.") + nm + ".w").value),
                               t2.leaf(store.at(std::string("a.") + nm + ".b").value));
        };
        int qt = ops::reshape(t2, lin("q_proj", guide_v), {4, 8});
        int kt = ops::reshape(t2, lin("kv_proj", main_v), {4, 8});
        int qi = ops::matmul(t2, qt, t2.leaf(store.at("a.head0.wq").value));
        int ki = ops::matmul(t2, kt, t2.leaf(store.at("a.head0.wk").value));
        int vi = ops::matmul(t2, kt, t2.leaf(store.at("a.head0.wv").value));
        int hi = attention::sdp_attention(t2, qi, ki, vi);
        int ref = ops::reshape(t2, ops::matmul(t2, hi, t2.leaf(store.at("a.w0").value)), {32});
        for (int64_t i = 0; i < 32; ++i)
            head_err = std::max(head_err, std::abs(static_cast<double>(t.val(out)[i]) - t2.val(ref)[i]));
    }
    ok = ok && head_err < 1e-6;
    char buf[140];
    std::snprintf(buf, sizeof buf,
                  "worst row-sum dev %.1e < 1e-6, single-token exact %s, one-head dev %.1e < 1e-6", worst_row,
                  single_exact ? "yes" : "no", head_err);
    criterion(4, ok, buf);
}

// ---- criterion 5: metrics oracle -------------------------------------------

void check_metrics() {
    bool ok = true;
    std::mt19937 rng(99);
    std::uniform_int_distribution<int> classes_d(2, 6);
    std::uniform_int_distribution<int64_t> count_d(0, 12);
    double worst = 0.0;
    for (int rep = 0; rep < 1000; ++rep) {
        const int c = classes_d(rng);
        eval::ConfusionMatrix cm(c);
        for (auto& v : cm.counts) v = count_d(rng);
        if (cm.total() == 0) cm.counts[0] = 1;
        int64_t correct = 0;
        double uf1 = 0.0, uar = 0.0;
        for (int cls = 0; cls < c; ++cls) {
            correct += cm.at(cls, cls);
            int64_t row = 0, col = 0;
            for (int j = 0; j < c; ++j) {
                row += cm.at(cls, j);
                col += cm.at(j, cls);
            }
            const double recall = row ? static_cast<double>(cm.at(cls, cls)) / row : 0.0;
            const double prec = col ? static_cast<double>(cm.at(cls, cls)) / col : 0.0;
            uar += recall;
            uf1 += (prec + recall > 0.0) ? 2.0 * prec * recall / (prec + recall) : 0.0;
        }
        auto m = eval::metrics(cm);
        ok = ok && m.acc == static_cast<double>(correct) / cm.total();
        worst = std::max({worst, std::abs(m.uf1 - uf1 / c), std::abs(m.uar - uar / c)});
    }
    ok = ok && worst < 1e-12;

    eval::ConfusionMatrix a(2);
    a.counts = {2, 1, 1, 2};
    auto ma = eval::metrics(a);
    ok = ok && std::abs(ma.acc - 0.6667) < 1e-4 && std::abs(ma.uf1 - 0.6667) < 1e-4 &&
         std::abs(ma.uar - 0.6667) < 1e-4;
    eval::ConfusionMatrix b(2);
    b.counts = {3, 0, 3, 0};
    auto mb = eval::metrics(b);
    ok = ok && mb.acc == 0.5 && std::abs(mb.uf1 - 0.3333) < 1e-4 && mb.uar == 0.5;
    char buf[100];
    std::snprintf(buf, sizeof buf, "1000 random matrices, worst dev %.1e < 1e-12, hand cases exact", worst);
    criterion(5, ok, buf);
}

// ---- criteria 6-8: end-to-end runs -----------------------------------------

model::FullModelConfig training_schedule(model::FullModelConfig cfg) {
    cfg.epochs = 8;
    cfg.batch_size = 4;
    cfg.adam.lr = 1e-3f;
    return cfg;
}

void check_learnability() {
    const auto t0 = std::chrono::steady_clock::now();
    data::SynthConfig sc;  // defaults: 12 subjects x 6 samples, 3 classes, seed 42
    auto ds = data::generate_synthetic(sc);
    auto cfg = training_schedule(model::FullModelConfig{});
    cfg.seed = 42;
    auto rep = eval::run_loso(ds, cfg, 4);
    const double elapsed = seconds_since(t0);
    // the 1200s budget assumes 4 worker threads; scale it when fewer cores exist
    const double cores = std::max(1u, std::thread::hardware_concurrency());
    const double budget = 1200.0 * std::max(1.0, 4.0 / cores);
    char buf[140];
    std::snprintf(buf, sizeof buf,
                  "seed-42 multimodal loso uar %.3f >= 0.80, acc %.3f, %.0fs < %.0fs (%.0f-core budget)",
                  rep.pooled_metrics.uar, rep.pooled_metrics.acc, elapsed, budget, cores);
    criterion(6, rep.pooled_metrics.uar >= 0.80 && elapsed < budget, buf);
}

void check_directions() {
    // reduced scale: the orderings, not the magnitudes, are under test
    auto small_cfg = [] {
        model::FullModelConfig cfg;
        cfg.me_cfg.backbone.input_size = 32;
        cfg.me_cfg.backbone.stage_channels = {8, 16, 32};
        cfg.me_cfg.backbone.feature_dim = 128;
        cfg.me_cfg.attn = {.tokens = 8, .d_model = 16, .heads = 4};
        cfg.fusion = {.tokens = 8, .d_model = 16, .heads = 4};
        cfg.ps_cfg.input_length = 150;
        cfg.ps_cfg.feature_dim = 128;
        return training_schedule(cfg);
    };
    int gauss_wins = 0, guided_wins = 0, ps_wins = 0;
    for (uint64_t seed : {42u, 43u, 44u}) {
        data::SynthConfig sc;
        sc.subjects = 6;
        sc.per_subject = 4;
        sc.image_size = 32;
        sc.seed = seed;
        auto ds = data::generate_synthetic(sc);
        auto cfg = small_cfg();
        cfg.seed = seed;

        auto run = [&](bool depth, bool ps, bool uniform, bool concat) {
            model::FullModelConfig c = cfg;
            c.use_depth = depth;
            c.use_ps = ps;
            c.uniform_frame_weights = uniform;
            c.concat_fusion = concat;
            return eval::run_loso(ds, c, 1).pooled_metrics;
        };
        auto full = run(true, true, false, false);
        auto uniform = run(true, true, true, false);
        auto concat = run(true, true, false, true);
        auto colour = run(false, false, false, false);
        auto colour_ps = run(false, true, false, false);
        gauss_wins += full.uf1 >= uniform.uf1;
        guided_wins += full.uf1 >= concat.uf1;
        ps_wins += colour_ps.uar >= colour.uar;
        std::printf("  seed %llu: full uf1 %.3f | uniform %.3f | concat %.3f | colour uar %.3f | colour+ps %.3f\n",
                    static_cast<unsigned long long>(seed), full.uf1, uniform.uf1, concat.uf1, colour.uar,
                    colour_ps.uar);
        std::fflush(stdout);
    }
    char buf[120];
    std::snprintf(buf, sizeof buf,
                  "gaussian>=uniform %d/3, guided>=concat %d/3, colour+ps>=colour %d/3 (need >= 2 each)",
                  gauss_wins, guided_wins, ps_wins);
    criterion(7, gauss_wins >= 2 && guided_wins >= 2 && ps_wins >= 2, buf);
}

void check_determinism() {
    data::SynthConfig sc;
    sc.subjects = 3;
    sc.per_subject = 2;
    sc.image_size = 16;
    sc.seed = 9;
    auto ds = data::generate_synthetic(sc);
    model::FullModelConfig cfg;
    cfg.me_cfg.backbone.input_size = 16;
    cfg.me_cfg.backbone.stage_channels = {4, 8};
    cfg.me_cfg.backbone.feature_dim = 32;
    cfg.me_cfg.attn = {.tokens = 4, .d_model = 8, .heads = 2};
    cfg.fusion = {.tokens = 4, .d_model = 8, .heads = 2};
    cfg.ps_cfg.input_length = 64;
    cfg.ps_cfg.grouped_branches = {{3, 1}, {3, 2}, {5, 3}, {5, 4}};
    cfg.ps_cfg.mixed_branches = {{3, 2}, {3, 3}, {5, 4}, {5, 5}};
    cfg.ps_cfg.feature_dim = 32;
    cfg.epochs = 2;
    cfg.batch_size = 4;

    auto dir = fs::temp_directory_path() / "latmm_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);
    auto emit = [&](const char* name) {
        auto rep = eval::run_loso(ds, cfg, 1);
        eval::write_predictions_csv(rep, dir / (std::string(name) + ".csv"));
        eval::write_report(rep, dir / (std::string(name) + ".txt"));
    };
    emit("a");
    emit("b");
    auto slurp = [](const fs::path& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
    };
    const bool same = slurp(dir / "a.csv") == slurp(dir / "b.csv") &&
                      slurp(dir / "a.txt") == slurp(dir / "b.txt") && !slurp(dir / "a.csv").empty();
    fs::remove_all(dir);
    criterion(8, same, "two identical evaluations produced byte-identical report files");
}

}  // namespace

int main() {
    check_gradients();
    check_weights();
    check_wavelet();
    check_attention();
    check_metrics();
    check_learnability();
    check_directions();
    check_determinism();
    std::printf("%s\n", g_failed == 0 ? "acceptance: all criteria passed"
                                      : "acceptance: FAILED");
    return g_failed == 0 ? 0 : 1;
}
