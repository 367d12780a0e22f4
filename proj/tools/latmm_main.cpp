// latmm command-line interface: dataset synthesis, signal denoising,
// training, leave-one-subject-out evaluation, and gradient checking.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "latmm/data_io.hpp"
#include "latmm/eval.hpp"
#include "latmm/gradcheck.hpp"
#include "latmm/model.hpp"
#include "latmm/wavelet.hpp"

namespace fs = std::filesystem;
using namespace latmm;

namespace {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

model::FullModelConfig load_config(const std::string& path) {
    try {
        if (path.empty()) return model::FullModelConfig{};
        return model::FullModelConfig::from_kv(config::parse_file(path));
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
}

wavelet::WaveletSpec parse_wavelet(const std::string& name, int levels) {
    if (name.size() < 3 || name.substr(0, 2) != "db")
        throw ConfigError("--wavelet expects db1..db8, got '" + name + "'");
    wavelet::WaveletSpec spec;
    try {
        spec.order = std::stoi(name.substr(2));
    } catch (const std::exception&) {
        throw ConfigError("--wavelet expects db1..db8, got '" + name + "'");
    }
    spec.levels = levels;
    return spec;
}

struct PsCsv {
    std::vector<double> t, eda, ecg, ppg;
};

PsCsv read_ps_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(f, line) || line != "t,eda,ecg,ppg")
        throw std::runtime_error(path + ": expected header t,eda,ecg,ppg");
    PsCsv csv;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto fields = data::split_csv_line(line);
        if (fields.size() != 4) throw std::runtime_error(path + ": bad row '" + line + "'");
        csv.t.push_back(std::stod(fields[0]));
        csv.eda.push_back(std::stod(fields[1]));
        csv.ecg.push_back(std::stod(fields[2]));
        csv.ppg.push_back(std::stod(fields[3]));
    }
    return csv;
}

void write_ps_csv(const PsCsv& csv, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "t,eda,ecg,ppg\n";
    for (size_t i = 0; i < csv.t.size(); ++i)
        f << data::format_double(csv.t[i]) << ',' << data::format_double(csv.eda[i]) << ','
          << data::format_double(csv.ecg[i]) << ',' << data::format_double(csv.ppg[i]) << '\n';
}

double snr_db(const std::vector<double>& clean, const std::vector<double>& noisy) {
    double sig = 0.0, err = 0.0;
    for (size_t i = 0; i < clean.size(); ++i) {
        sig += clean[i] * clean[i];
        const double d = noisy[i] - clean[i];
        err += d * d;
    }
    return 10.0 * std::log10(sig / std::max(err, 1e-300));
}

int run_gradcheck() {
    int failures = 0;
    auto report = [&](const char* name, double err, double tol) {
        const bool ok = err < tol;
        std::printf("%-32s max_rel_err=%.3e tol=%.0e %s\n", name, err, tol, ok ? "ok" : "FAIL");
        if (!ok) ++failures;
    };
    std::mt19937 rng(7);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    auto rand_t = [&](Shape s) {
        Tensor t(std::move(s));
        for (auto& v : t.data) v = u(rng);
        return t;
    };

    {
        Tensor x = rand_t({4, 5});
        Tensor w = rand_t({5, 3});
        report("matmul",
               gradcheck([&](Tape& t, int xi) { return ops::sum(t, ops::matmul(t, xi, t.leaf(w))); }, x), 1e-3);
    }
    {
        Tensor x = rand_t({3, 20});
        Tensor w = rand_t({4, 3, 5}), b = rand_t({4});
        report("conv1d",
               gradcheck(
                   [&](Tape& t, int xi) {
                       return ops::scale(t, ops::sum(t, ops::conv1d(t, xi, t.leaf(w), t.leaf(b))),
                                         1.0f / 60.0f);
                   },
                   x),
               1e-3);
    }
    {
        Tensor x = rand_t({2, 8, 8});
        Tensor w = rand_t({3, 2, 3, 3}), b = rand_t({3});
        report("conv2d",
               gradcheck(
                   [&](Tape& t, int xi) {
                       return ops::scale(t, ops::sum(t, ops::conv2d(t, xi, t.leaf(w), t.leaf(b))),
                                         1.0f / 100.0f);
                   },
                   x),
               1e-3);
    }
    {
        Tensor x = rand_t({6});
        report("softmax+cross_entropy",
               gradcheck([&](Tape& t, int xi) { return ops::cross_entropy(t, xi, {2}); }, x), 1e-3);
    }
    {
        ps::PSNetConfig cfg;
        cfg.input_length = 32;
        cfg.grouped_branches = {{3, 1}, {3, 2}, {5, 3}, {5, 4}};
        cfg.mixed_branches = {{3, 2}, {3, 3}, {5, 4}, {5, 5}};
        cfg.feature_dim = 16;
        auto store = ps::build_ps_net(cfg, 11);
        Tensor x = rand_t({3, 32});
        auto f = [&](Tape& t) {
            return ops::cross_entropy(t, ps::ps_forward(t, store, cfg, t.leaf(x)).logits, {1});
        };
        report("signal network", std::max(gradcheck_param(f, store, "ps.stem.w"),
                                          gradcheck_param(f, store, "ps.block2.g0.b0.pw")),
               5e-3);
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
        std::uniform_real_distribution<float> unit(0.0f, 1.0f);
        me::FrameStack stack{Tensor({2, 3, 16, 16}), Tensor({2, 1, 16, 16})};
        for (auto& v : stack.colour.data) v = unit(rng);
        for (auto& v : stack.depth.data) v = unit(rng);
        auto f = [&](Tape& t) {
            return ops::scale(t, ops::sum(t, me::me_forward(t, store, cfg, stack)), 1.0f / 32.0f);
        };
        report("clip branch", std::max(gradcheck_param(f, store, "me.colour.s0.w"),
                                       gradcheck_param(f, store, "me.ga.w0")),
               5e-3);
    }
    {
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
        std::uniform_real_distribution<float> unit(0.0f, 1.0f);
        data::MESample s;
        s.label = 1;
        s.frames.colour = Tensor({2, 3, 16, 16});
        s.frames.depth = Tensor({2, 1, 16, 16});
        for (auto& v : s.frames.colour.data) v = unit(rng);
        for (auto& v : s.frames.depth.data) v = unit(rng);
        Tensor seg = rand_t({3, 64});
        auto f = [&](Tape& t) {
            auto out = model::full_forward(t, m, s, seg);
            return model::composite_loss(t, out, s.label);
        };
        report("full model", std::max({gradcheck_param(f, m.store, "me.colour.s1.w"),
                                       gradcheck_param(f, m.store, "ps.feat.w"),
                                       gradcheck_param(f, m.store, "fuse.w0"),
                                       gradcheck_param(f, m.store, "head.w")}),
               5e-3);
    }
    std::printf("gradcheck: %d failure(s)\n", failures);
    return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"latent-emotion recognition pipeline"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    std::string synth_out;
    data::SynthConfig sc;
    synth->add_option("--out", synth_out, "output dataset directory")->required();
    synth->add_option("--subjects", sc.subjects, "number of subjects");
    synth->add_option("--per-subject", sc.per_subject, "samples per subject");
    synth->add_option("--classes", sc.classes, "number of classes");
    synth->add_option("--seed", sc.seed, "generator seed");
    synth->add_option("--image-size", sc.image_size, "frame height/width");

    // denoise
    auto* den = app.add_subcommand("denoise", "wavelet-denoise a signal CSV");
    std::string den_in, den_out, den_clean, den_wavelet = "db4";
    int den_levels = 4;
    den->add_option("--in", den_in, "input ps.csv")->required();
    den->add_option("--out", den_out, "output CSV")->required();
    den->add_option("--wavelet", den_wavelet, "wavelet name (db1..db8)");
    den->add_option("--levels", den_levels, "decomposition levels");
    den->add_option("--clean", den_clean, "clean reference CSV for SNR reporting");

    // train
    auto* tr = app.add_subcommand("train", "train one fold");
    std::string tr_data, tr_config, tr_out;
    int tr_holdout = -1;
    tr->add_option("--data", tr_data, "dataset directory")->required();
    tr->add_option("--config", tr_config, "config file");
    tr->add_option("--hold-out-subject", tr_holdout, "subject id excluded from training");
    tr->add_option("--out", tr_out, "checkpoint output directory")->required();

    // eval-loso
    auto* ev = app.add_subcommand("eval-loso", "leave-one-subject-out evaluation");
    std::string ev_data, ev_config, ev_report;
    std::string ev_arms = "full", ev_fusion = "gaussian", ev_attn = "guided";
    int ev_jobs = 1;
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--config", ev_config, "config file");
    ev->add_option("--report", ev_report, "report output directory")->required();
    ev->add_option("--arms", ev_arms, "all | full | colour | colour+depth | colour+depth+ps | colour+ps");
    ev->add_option("--fusion", ev_fusion, "frame weighting: gaussian | uniform");
    ev->add_option("--attn", ev_attn, "branch fusion: guided | concat");
    ev->add_option("--jobs", ev_jobs, "parallel folds");

    // gradcheck
    app.add_subcommand("gradcheck", "numeric gradient verification suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) {
            auto ds = data::generate_synthetic(sc);
            data::save_dataset(ds, synth_out);
            std::cout << "synth: wrote " << ds.samples.size() << " samples (" << sc.subjects << " subjects, "
                      << sc.classes << " classes, seed " << sc.seed << ") to " << synth_out << "\n";
        } else if (den->parsed()) {
            auto spec = parse_wavelet(den_wavelet, den_levels);
            auto csv = read_ps_csv(den_in);
            PsCsv out = csv;
            out.eda = wavelet::denoise(csv.eda, spec);
            out.ecg = wavelet::denoise(csv.ecg, spec);
            out.ppg = wavelet::denoise(csv.ppg, spec);
            write_ps_csv(out, den_out);
            std::cout << "denoise: " << den_in << " -> " << den_out << " (" << den_wavelet << ", "
                      << den_levels << " levels)\n";
            if (!den_clean.empty()) {
                auto clean = read_ps_csv(den_clean);
                const char* names[3] = {"eda", "ecg", "ppg"};
                const std::vector<double>* cs[3] = {&clean.eda, &clean.ecg, &clean.ppg};
                const std::vector<double>* ns[3] = {&csv.eda, &csv.ecg, &csv.ppg};
                const std::vector<double>* ds[3] = {&out.eda, &out.ecg, &out.ppg};
                for (int c = 0; c < 3; ++c) {
                    if (cs[c]->size() != ns[c]->size())
                        throw std::runtime_error("--clean length differs from --in");
                    std::printf("%s: snr %.2f dB -> %.2f dB (delta %+.2f)\n", names[c], snr_db(*cs[c], *ns[c]),
                                snr_db(*cs[c], *ds[c]), snr_db(*cs[c], *ds[c]) - snr_db(*cs[c], *ns[c]));
                }
            }
        } else if (tr->parsed()) {
            auto cfg = load_config(tr_config);
            auto ds = data::load_dataset(tr_data, cfg.num_classes);
            auto m = model::build_full_model(cfg, cfg.seed);
            auto segs = model::prepare_segments(cfg, ds);
            std::vector<size_t> idx;
            for (size_t i = 0; i < ds.samples.size(); ++i)
                if (ds.samples[i].subject_id != tr_holdout) idx.push_back(i);
            auto log = model::train(m, ds, idx, segs);
            fs::create_directories(tr_out);
            model::save_checkpoint(m, tr_out);
            model::write_loss_log(log, fs::path(tr_out) / "loss_log.csv");
            std::cout << "train: seed " << cfg.seed << ", " << idx.size() << " samples, " << log.size()
                      << " epochs, final loss " << (log.empty() ? 0.0 : log.back()) << "\n"
                      << tr_out << "\n";
        } else if (ev->parsed()) {
            auto cfg = load_config(ev_config);
            if (ev_fusion == "uniform")
                cfg.uniform_frame_weights = true;
            else if (ev_fusion != "gaussian")
                throw ConfigError("--fusion expects gaussian|uniform, got '" + ev_fusion + "'");
            if (ev_attn == "concat")
                cfg.concat_fusion = true;
            else if (ev_attn != "guided")
                throw ConfigError("--attn expects guided|concat, got '" + ev_attn + "'");
            auto ds = data::load_dataset(ev_data, cfg.num_classes);
            fs::create_directories(ev_report);
            if (ev_arms == "all") {
                auto rows = eval::run_ablations(ds, cfg, ev_jobs);
                eval::write_ablation_summary(rows, fs::path(ev_report) / "ablations.csv");
                for (const auto& r : rows) {
                    const std::string tag = r.name.substr(r.name.find('=') + 1);
                    eval::write_report(r.report, fs::path(ev_report) / ("report_" + tag + ".txt"));
                    eval::write_predictions_csv(r.report,
                                                fs::path(ev_report) / ("predictions_" + tag + ".csv"));
                }
                std::cout << (fs::path(ev_report) / "ablations.csv").string() << "\n";
            } else {
                if (ev_arms == "colour") {
                    cfg.use_depth = false;
                    cfg.use_ps = false;
                } else if (ev_arms == "colour+depth") {
                    cfg.use_depth = true;
                    cfg.use_ps = false;
                } else if (ev_arms == "colour+ps") {
                    cfg.use_depth = false;
                    cfg.use_ps = true;
                } else if (ev_arms != "full" && ev_arms != "colour+depth+ps") {
                    throw ConfigError("--arms got unknown value '" + ev_arms + "'");
                }
                auto rep = eval::run_loso(ds, cfg, ev_jobs);
                eval::write_report(rep, fs::path(ev_report) / "report.txt");
                eval::write_predictions_csv(rep, fs::path(ev_report) / "predictions.csv");
                std::cout << (fs::path(ev_report) / "report.txt").string() << "\n"
                          << (fs::path(ev_report) / "predictions.csv").string() << "\n";
            }
        } else {  // gradcheck
            return run_gradcheck();
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
