#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "latmm/data_io.hpp"
#include "latmm/model.hpp"

namespace latmm {
namespace eval {

namespace fs = std::filesystem;

struct ConfusionMatrix {
    int classes = 0;
    std::vector<int64_t> counts;  // row = true class, column = predicted

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(int c) : classes(c), counts(static_cast<size_t>(c) * c, 0) {}

    int64_t& at(int truth, int pred) { return counts[static_cast<size_t>(truth) * classes + pred]; }
    int64_t at(int truth, int pred) const { return counts[static_cast<size_t>(truth) * classes + pred]; }

    void add(int truth, int pred) {
        if (truth < 0 || truth >= classes || pred < 0 || pred >= classes)
            throw std::out_of_range("confusion matrix: label outside [0," + std::to_string(classes) + ")");
        ++at(truth, pred);
    }

    int64_t total() const {
        int64_t t = 0;
        for (int64_t v : counts) t += v;
        return t;
    }

    ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
        if (o.classes != classes) throw std::invalid_argument("confusion matrix: class count mismatch");
        for (size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
        return *this;
    }
};

struct Metrics {
    double acc = 0.0;
    double uf1 = 0.0;
    double uar = 0.0;
};

/// Accuracy, unweighted (macro) F1, unweighted average recall. Classes with
/// an empty denominator contribute zero.
inline Metrics metrics(const ConfusionMatrix& cm) {
    const int64_t total = cm.total();
    if (total == 0) throw std::invalid_argument("metrics: empty confusion matrix");
    Metrics m;
    int64_t trace = 0;
    for (int c = 0; c < cm.classes; ++c) {
        trace += cm.at(c, c);
        int64_t row = 0, col = 0;
        for (int j = 0; j < cm.classes; ++j) {
            row += cm.at(c, j);
            col += cm.at(j, c);
        }
        const double recall = row > 0 ? static_cast<double>(cm.at(c, c)) / static_cast<double>(row) : 0.0;
        const double precision = col > 0 ? static_cast<double>(cm.at(c, c)) / static_cast<double>(col) : 0.0;
        const double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        m.uar += recall;
        m.uf1 += f1;
    }
    m.acc = static_cast<double>(trace) / static_cast<double>(total);
    m.uar /= cm.classes;
    m.uf1 /= cm.classes;
    return m;
}

struct Fold {
    int subject = 0;
    std::vector<size_t> train_idx;
    std::vector<size_t> test_idx;
};

/// One fold per distinct subject, ordered by subject id.
inline std::vector<Fold> loso_folds(const data::Dataset& ds) {
    std::map<int, std::vector<size_t>> by_subject;
    for (size_t i = 0; i < ds.samples.size(); ++i) by_subject[ds.samples[i].subject_id].push_back(i);
    if (by_subject.size() < 2)
        throw std::invalid_argument("loso_folds: need >= 2 subjects, got " +
                                    std::to_string(by_subject.size()));
    std::vector<Fold> folds;
    for (const auto& [subject, test] : by_subject) {
        Fold f;
        f.subject = subject;
        f.test_idx = test;
        for (size_t i = 0; i < ds.samples.size(); ++i)
            if (ds.samples[i].subject_id != subject) f.train_idx.push_back(i);
        folds.push_back(std::move(f));
    }
    return folds;
}

struct SamplePrediction {
    std::string sample_id;
    int subject = 0;
    int truth = 0;
    int pred = 0;
    std::vector<double> probs;
};

struct EvalReport {
    uint64_t seed = 0;
    config::KV config_snapshot;
    std::vector<int> fold_subjects;
    std::vector<ConfusionMatrix> fold_cms;
    std::vector<SamplePrediction> predictions;  // pooled, in fold order
    ConfusionMatrix pooled;
    Metrics pooled_metrics;
};

/// LOSO skeleton over an arbitrary per-fold evaluator, so oracle predictors
/// can exercise the pooling logic. `fn(fold) -> predictions for its test set`.
template <typename FoldFn>
EvalReport run_loso_with(const data::Dataset& ds, const model::FullModelConfig& cfg, FoldFn&& fn, int jobs = 1) {
    const auto folds = loso_folds(ds);
    EvalReport rep;
    rep.seed = cfg.seed;
    rep.config_snapshot = cfg.to_kv();
    rep.pooled = ConfusionMatrix(cfg.num_classes);

    std::vector<std::vector<SamplePrediction>> per_fold(folds.size());
    if (jobs <= 1) {
        for (size_t i = 0; i < folds.size(); ++i) per_fold[i] = fn(folds[i]);
    } else {
        std::vector<std::thread> pool;
        std::atomic<size_t> next{0};
        std::vector<std::exception_ptr> errors(static_cast<size_t>(jobs));
        for (int w = 0; w < jobs; ++w)
            pool.emplace_back([&, w] {
                for (size_t i = next.fetch_add(1); i < folds.size(); i = next.fetch_add(1)) {
                    try {
                        per_fold[i] = fn(folds[i]);
                    } catch (...) {
                        errors[static_cast<size_t>(w)] = std::current_exception();
                        return;
                    }
                }
            });
        for (auto& t : pool) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    for (size_t i = 0; i < folds.size(); ++i) {
        ConfusionMatrix cm(cfg.num_classes);
        for (const auto& p : per_fold[i]) {
            cm.add(p.truth, p.pred);
            rep.predictions.push_back(p);
        }
        rep.fold_subjects.push_back(folds[i].subject);
        rep.fold_cms.push_back(cm);
        rep.pooled += cm;
    }
    rep.pooled_metrics = metrics(rep.pooled);
    return rep;
}

/// Full protocol: fresh seeded model per fold, held-out subject as test set,
/// metrics on the pooled confusion matrix.
inline EvalReport run_loso(const data::Dataset& ds, const model::FullModelConfig& cfg, int jobs = 1) {
    const auto segs = model::prepare_segments(cfg, ds);
    return run_loso_with(
        ds, cfg,
        [&](const Fold& fold) {
            try {
                auto m = model::build_full_model(cfg, cfg.seed);
                model::train(m, ds, fold.train_idx, segs);
                std::vector<SamplePrediction> out;
                for (size_t i : fold.test_idx) {
                    const auto& s = ds.samples[i];
                    auto p = model::predict(m, s, segs[i]);
                    out.push_back({s.sample_id, s.subject_id, s.label, p.label, p.probs});
                }
                return out;
            } catch (const std::exception& e) {
                throw std::runtime_error("fold subject " + std::to_string(fold.subject) + ": " + e.what());
            }
        },
        jobs);
}

struct AblationRow {
    std::string name;
    EvalReport report;
};

/// Ablation grid: the four modality arms, the two temporal weightings, and
/// the two fusion mechanisms, all sharing one generator seed.
inline std::vector<AblationRow> run_ablations(const data::Dataset& ds, const model::FullModelConfig& base,
                                              int jobs = 1) {
    auto arm = [&](bool depth, bool ps) {
        model::FullModelConfig c = base;
        c.use_depth = depth;
        c.use_ps = ps;
        return c;
    };
    std::vector<std::pair<std::string, model::FullModelConfig>> rows;
    rows.emplace_back("arm=colour", arm(false, false));
    rows.emplace_back("arm=colour+depth", arm(true, false));
    rows.emplace_back("arm=colour+depth+ps", arm(true, true));
    rows.emplace_back("arm=colour+ps", arm(false, true));
    {
        model::FullModelConfig c = base;
        c.uniform_frame_weights = true;
        rows.emplace_back("frame_weights=uniform", c);
        c.uniform_frame_weights = false;
        rows.emplace_back("frame_weights=gaussian", c);
    }
    {
        model::FullModelConfig c = base;
        c.concat_fusion = true;
        rows.emplace_back("fusion=concat", c);
        c.concat_fusion = false;
        rows.emplace_back("fusion=guided", c);
    }
    std::vector<AblationRow> out;
    for (auto& [name, cfg] : rows) out.push_back({name, run_loso(ds, cfg, jobs)});
    return out;
}

inline std::string format_metric(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

/// Human-readable report: key-value header, confusion matrix block, per-fold
/// subject list.
inline void write_report(const EvalReport& rep, const fs::path& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write report: " + path.string());
    f << "seed=" << rep.seed << "\n";
    for (const auto& [k, v] : rep.config_snapshot) f << "config." << k << "=" << v << "\n";
    f << "folds=" << rep.fold_subjects.size() << "\n";
    f << "samples=" << rep.pooled.total() << "\n";
    f << "acc=" << format_metric(rep.pooled_metrics.acc) << "\n";
    f << "uf1=" << format_metric(rep.pooled_metrics.uf1) << "\n";
    f << "uar=" << format_metric(rep.pooled_metrics.uar) << "\n";
    f << "confusion_matrix.rows_true_cols_pred\n";
    for (int i = 0; i < rep.pooled.classes; ++i) {
        for (int j = 0; j < rep.pooled.classes; ++j) f << (j ? " " : "") << rep.pooled.at(i, j);
        f << "\n";
    }
    for (size_t i = 0; i < rep.fold_subjects.size(); ++i)
        f << "fold." << i << ".subject=" << rep.fold_subjects[i] << " samples=" << rep.fold_cms[i].total()
          << "\n";
}

inline void write_predictions_csv(const EvalReport& rep, const fs::path& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write predictions: " + path.string());
    f << "sample_id,subject,true,pred";
    for (int c = 0; c < rep.pooled.classes; ++c) f << ",p_" << c;
    f << "\n";
    for (const auto& p : rep.predictions) {
        f << p.sample_id << ',' << p.subject << ',' << p.truth << ',' << p.pred;
        for (double v : p.probs) f << ',' << format_metric(v);
        f << "\n";
    }
}

/// Published target for the sensor-fusion arm; the source corpus is
/// license-restricted, so this is context, not an assertion.
inline std::string reference_note() {
    return "reference (not reproducible without CAS(ME)^3): colour+ps acc=0.750 uf1=0.642 uar=0.578";
}

inline void write_ablation_summary(const std::vector<AblationRow>& rows, const fs::path& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write ablation summary: " + path.string());
    f << "# " << reference_note() << "\n";
    f << "row,acc,uf1,uar\n";
    for (const auto& r : rows)
        f << r.name << ',' << format_metric(r.report.pooled_metrics.acc) << ','
          << format_metric(r.report.pooled_metrics.uf1) << ',' << format_metric(r.report.pooled_metrics.uar)
          << "\n";
}

}  // namespace eval
}  // namespace latmm
