#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "latmm/fusion.hpp"
#include "latmm/me_branch.hpp"
#include "latmm/tensor.hpp"
#include "latmm/wavelet.hpp"

namespace latmm {
namespace data {

namespace fs = std::filesystem;

/// Raw physiological recording around one clip: EDA, ECG, PPG at a common
/// rate, with the clip's onset/offset in seconds on the same clock.
struct SignalClip {
    double sample_rate = 100.0;  // Hz
    std::vector<double> eda, ecg, ppg;
    double onset_s = 0.0;
    double offset_s = 0.0;

    int64_t length() const { return static_cast<int64_t>(eda.size()); }
    double duration() const { return static_cast<double>(length()) / sample_rate; }

    const std::vector<double>& channel(int i) const {
        switch (i) {
            case 0: return eda;
            case 1: return ecg;
            default: return ppg;
        }
    }

    void validate() const {
        if (sample_rate <= 0.0) throw std::invalid_argument("signal clip: sample rate must be positive");
        if (ecg.size() != eda.size() || ppg.size() != eda.size())
            throw std::invalid_argument("signal clip: channel lengths disagree");
    }
};

struct MESample {
    std::string sample_id;
    int subject_id = 0;
    int label = 0;
    double fps = 30.0;
    me::FrameStack frames;
    SignalClip signals;

    void validate(int num_classes) const {
        frames.validate();
        signals.validate();
        if (label < 0 || label >= num_classes)
            throw std::invalid_argument("sample " + sample_id + ": label " + std::to_string(label) +
                                        " outside [0," + std::to_string(num_classes) + ")");
    }
};

struct Dataset {
    int num_classes = 0;
    std::vector<MESample> samples;
};

/// Slice [onset, offset) from each channel, linearly resample to L points,
/// wavelet-denoise, and z-normalize per channel (constant channels to zeros).
inline Tensor segment_signals(const SignalClip& raw, double onset, double offset, int64_t target_len,
                              const wavelet::WaveletSpec& spec = {}) {
    raw.validate();
    if (target_len < 2) throw std::invalid_argument("segment_signals: target length must be >= 2");
    const int64_t i0 = std::llround(onset * raw.sample_rate);
    const int64_t i1 = std::llround(offset * raw.sample_rate);
    if (!(onset < offset) || i0 < 0 || i1 > raw.length())
        throw std::out_of_range("segment_signals: window [" + std::to_string(onset) + "," +
                                std::to_string(offset) + ")s outside the recording");
    const int64_t n = i1 - i0;
    if (n < 2) throw std::out_of_range("segment_signals: window too short");

    Tensor out({3, target_len});
    for (int c = 0; c < 3; ++c) {
        const std::vector<double>& src = raw.channel(c);
        std::vector<double> seg(static_cast<size_t>(target_len));
        for (int64_t i = 0; i < target_len; ++i) {
            const double p = static_cast<double>(i) * static_cast<double>(n - 1) / static_cast<double>(target_len - 1);
            const int64_t lo = std::min(static_cast<int64_t>(p), n - 2);
            const double frac = p - static_cast<double>(lo);
            seg[static_cast<size_t>(i)] =
                src[static_cast<size_t>(i0 + lo)] * (1.0 - frac) + src[static_cast<size_t>(i0 + lo + 1)] * frac;
        }
        seg = wavelet::denoise(seg, spec);
        double mean = 0.0;
        for (double v : seg) mean += v;
        mean /= static_cast<double>(target_len);
        double var = 0.0;
        for (double v : seg) var += (v - mean) * (v - mean);
        var /= static_cast<double>(target_len);
        const double sd = std::sqrt(var);
        // reconstruction round-off can leave a constant channel with sd ~ 1e-15
        const bool constant = sd <= 1e-9 * (std::abs(mean) + 1.0);
        for (int64_t i = 0; i < target_len; ++i)
            out[c * target_len + i] =
                constant ? 0.0f : static_cast<float>((seg[static_cast<size_t>(i)] - mean) / sd);
    }
    return out;
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void save_sample(const MESample& s, const fs::path& dataset_dir) {
    const fs::path dir = dataset_dir / s.sample_id;
    fs::create_directories(dir);
    save_ten(s.frames.colour, (dir / "colour.ten").string());
    save_ten(s.frames.depth, (dir / "depth.ten").string());
    std::ofstream ps(dir / "ps.csv");
    if (!ps) throw std::runtime_error("cannot write " + (dir / "ps.csv").string());
    ps << "t,eda,ecg,ppg\n";
    for (int64_t i = 0; i < s.signals.length(); ++i)
        ps << format_double(static_cast<double>(i) / s.signals.sample_rate) << ','
           << format_double(s.signals.eda[static_cast<size_t>(i)]) << ','
           << format_double(s.signals.ecg[static_cast<size_t>(i)]) << ','
           << format_double(s.signals.ppg[static_cast<size_t>(i)]) << '\n';
    if (!ps) throw std::runtime_error("write failure in " + (dir / "ps.csv").string());
}

/// One row of dataset/meta.csv.
struct MetaRow {
    std::string sample_id;
    int subject_id = 0;
    int label = 0;
    int n_frames = 0;
    double fps = 30.0;
    double ps_rate = 100.0;
    double onset_s = 0.0;
    double offset_s = 0.0;
};

inline MetaRow meta_row(const MESample& s) {
    return {s.sample_id, s.subject_id, s.label, static_cast<int>(s.frames.frames()),
            s.fps,       s.signals.sample_rate, s.signals.onset_s, s.signals.offset_s};
}

inline void save_meta(const std::vector<MetaRow>& rows, const fs::path& dataset_dir) {
    fs::create_directories(dataset_dir);
    std::ofstream f(dataset_dir / "meta.csv");
    if (!f) throw std::runtime_error("cannot write " + (dataset_dir / "meta.csv").string());
    f << "sample_id,subject_id,label,n_frames,fps,ps_rate,onset_s,offset_s\n";
    for (const auto& r : rows)
        f << r.sample_id << ',' << r.subject_id << ',' << r.label << ',' << r.n_frames << ','
          << format_double(r.fps) << ',' << format_double(r.ps_rate) << ',' << format_double(r.onset_s) << ','
          << format_double(r.offset_s) << '\n';
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(field);
    return out;
}

inline std::vector<MetaRow> load_meta(const fs::path& dataset_dir) {
    const fs::path path = dataset_dir / "meta.csv";
    std::ifstream f(path);
    if (!f) throw std::runtime_error("missing metadata file: " + path.string());
    std::string line;
    if (!std::getline(f, line) || line != "sample_id,subject_id,label,n_frames,fps,ps_rate,onset_s,offset_s")
        throw std::runtime_error("bad metadata header in " + path.string());
    std::vector<MetaRow> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 8) throw std::runtime_error("bad metadata row in " + path.string() + ": " + line);
        MetaRow r;
        r.sample_id = fields[0];
        r.subject_id = std::stoi(fields[1]);
        r.label = std::stoi(fields[2]);
        r.n_frames = std::stoi(fields[3]);
        r.fps = std::stod(fields[4]);
        r.ps_rate = std::stod(fields[5]);
        r.onset_s = std::stod(fields[6]);
        r.offset_s = std::stod(fields[7]);
        rows.push_back(std::move(r));
    }
    return rows;
}

inline MESample load_sample(const fs::path& dataset_dir, const MetaRow& row) {
    const fs::path dir = dataset_dir / row.sample_id;
    MESample s;
    s.sample_id = row.sample_id;
    s.subject_id = row.subject_id;
    s.label = row.label;
    s.fps = row.fps;
    s.frames.colour = load_ten((dir / "colour.ten").string());
    s.frames.depth = load_ten((dir / "depth.ten").string());
    if (s.frames.colour.dim(0) != row.n_frames)
        throw std::runtime_error("sample " + row.sample_id + ": metadata says " + std::to_string(row.n_frames) +
                                 " frames, colour.ten has " + std::to_string(s.frames.colour.dim(0)));
    s.frames.validate();

    const fs::path ps_path = dir / "ps.csv";
    std::ifstream ps(ps_path);
    if (!ps) throw std::runtime_error("missing signal file: " + ps_path.string());
    std::string line;
    if (!std::getline(ps, line) || line != "t,eda,ecg,ppg")
        throw std::runtime_error("bad signal header in " + ps_path.string());
    s.signals.sample_rate = row.ps_rate;
    s.signals.onset_s = row.onset_s;
    s.signals.offset_s = row.offset_s;
    while (std::getline(ps, line)) {
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 4) throw std::runtime_error("bad signal row in " + ps_path.string() + ": " + line);
        s.signals.eda.push_back(std::stod(fields[1]));
        s.signals.ecg.push_back(std::stod(fields[2]));
        s.signals.ppg.push_back(std::stod(fields[3]));
    }
    s.signals.validate();
    return s;
}

inline Dataset load_dataset(const fs::path& dataset_dir, int num_classes) {
    Dataset d;
    d.num_classes = num_classes;
    for (const auto& row : load_meta(dataset_dir)) {
        d.samples.push_back(load_sample(dataset_dir, row));
        d.samples.back().validate(num_classes);
    }
    return d;
}

inline void save_dataset(const Dataset& d, const fs::path& dataset_dir) {
    std::vector<MetaRow> rows;
    for (const auto& s : d.samples) {
        save_sample(s, dataset_dir);
        rows.push_back(meta_row(s));
    }
    save_meta(rows, dataset_dir);
}

struct SynthConfig {
    int subjects = 12;
    int per_subject = 6;
    int classes = 3;
    uint64_t seed = 42;
    int image_size = 64;
    double ps_rate = 100.0;
    double ps_duration = 4.0;  // raw recording; the 3 s analysis window sits inside
    double noise_sigma = 0.2;
};

/// Synthetic stand-in corpus. Class identity is written into every modality:
/// bump position in the frames, step size in EDA, pulse rates in ECG and PPG.
/// Per-subject nuisance offsets keep the held-out-subject protocol honest.
inline Dataset generate_synthetic(const SynthConfig& cfg) {
    if (cfg.subjects < 2 || cfg.per_subject < 1 || cfg.classes < 2)
        throw std::invalid_argument("generate_synthetic: need >= 2 subjects and >= 2 classes");
    std::mt19937 rng(static_cast<uint32_t>(cfg.seed));
    std::uniform_int_distribution<int> label_d(0, cfg.classes - 1);
    std::uniform_int_distribution<int> frames_d(5, 15);
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    std::normal_distribution<double> pix_noise(0.0, 0.05);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const int hw = cfg.image_size;
    const double cx0 = hw / 2.0, r = hw / 4.0;
    const int64_t ticks = static_cast<int64_t>(std::llround(cfg.ps_duration * cfg.ps_rate));

    Dataset d;
    d.num_classes = cfg.classes;
    for (int subj = 0; subj < cfg.subjects; ++subj) {
        // subject nuisance: baseline shifts, cardiac phase, bump jitter
        const double eda_base = 0.6 * (unit(rng) - 0.5);
        const double phase = 2.0 * std::numbers::pi * unit(rng);
        const double jx = 3.0 * (unit(rng) - 0.5), jy = 3.0 * (unit(rng) - 0.5);
        const double rate_jitter = 0.1 * (unit(rng) - 0.5);

        for (int k = 0; k < cfg.per_subject; ++k) {
            MESample s;
            s.subject_id = subj;
            s.sample_id = "s" + std::to_string(subj) + "_" + std::to_string(k);
            s.label = label_d(rng);
            const int f = frames_d(rng);

            const double ang = 2.0 * std::numbers::pi * s.label / cfg.classes;
            const double cx = cx0 + r * std::cos(ang) + jx;
            const double cy = cx0 + r * std::sin(ang) + jy;
            auto profile = fusion::gaussian_weights(f);
            const double wmax = *std::max_element(profile.weights.begin(), profile.weights.end());

            s.frames.colour = Tensor({f, 3, hw, hw});
            s.frames.depth = Tensor({f, 1, hw, hw});
            for (int fi = 0; fi < f; ++fi) {
                const double amp = profile.weights[static_cast<size_t>(fi)] / wmax;  // apex at mid-clip
                for (int y = 0; y < hw; ++y)
                    for (int x = 0; x < hw; ++x) {
                        const double dx = x - cx, dy = y - cy;
                        const double bump = std::exp(-(dx * dx + dy * dy) / (2.0 * 16.0));
                        for (int c = 0; c < 3; ++c) {
                            const double v = 0.4 + 0.4 * amp * bump + pix_noise(rng);
                            s.frames.colour[((static_cast<int64_t>(fi) * 3 + c) * hw + y) * hw + x] =
                                static_cast<float>(std::clamp(v, 0.0, 1.0));
                        }
                        const double dv = 0.3 + 0.5 * amp * bump + pix_noise(rng);
                        s.frames.depth[(static_cast<int64_t>(fi) * hw + y) * hw + x] =
                            static_cast<float>(std::clamp(dv, 0.0, 1.0));
                    }
            }

            s.signals.sample_rate = cfg.ps_rate;
            s.signals.onset_s = 0.5;
            s.signals.offset_s = 3.5;
            const double step = 0.5 * (s.label + 1) / cfg.classes;
            const double f_ecg = (1.2 + 0.4 * s.label) * (1.0 + rate_jitter);
            const double f_ppg = (0.9 + 0.3 * s.label) * (1.0 + rate_jitter);
            for (int64_t i = 0; i < ticks; ++i) {
                const double t = static_cast<double>(i) / cfg.ps_rate;
                const double drift = 0.3 * std::sin(2.0 * std::numbers::pi * 0.1 * t + phase);
                s.signals.eda.push_back(eda_base + drift + (t > 1.5 ? step : 0.0) + noise(rng));
                // raised-cosine pulse trains, one beat per period
                const double pe = std::cos(2.0 * std::numbers::pi * f_ecg * t + phase);
                const double pp = std::cos(2.0 * std::numbers::pi * f_ppg * t + phase);
                s.signals.ecg.push_back(std::pow(std::max(pe, 0.0), 3.0) + noise(rng));
                s.signals.ppg.push_back(std::pow(std::max(pp, 0.0), 2.0) + noise(rng));
            }
            d.samples.push_back(std::move(s));
        }
    }
    return d;
}

}  // namespace data
}  // namespace latmm
