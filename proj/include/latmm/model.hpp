#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "latmm/attention.hpp"
#include "latmm/config.hpp"
#include "latmm/data_io.hpp"
#include "latmm/me_branch.hpp"
#include "latmm/optim.hpp"
#include "latmm/ps_net.hpp"

namespace latmm {
namespace model {

namespace fs = std::filesystem;

struct FullModelConfig {
    // modality switches (ablation arms); colour is always on
    bool use_depth = true;
    bool use_ps = true;
    bool uniform_frame_weights = false;  // temporal fusion baseline
    bool concat_fusion = false;          // attention-fusion baseline

    me::MEConfig me_cfg;
    ps::PSNetConfig ps_cfg;
    attention::AttentionConfig fusion;  // PS-guided fusion of the two branches

    int num_classes = 3;
    AdamConfig adam;
    int epochs = 100;
    int batch_size = 8;
    uint64_t seed = 42;

    void validate() const {
        me::MEConfig mc = me_cfg;
        mc.use_depth = use_depth;
        mc.validate();
        fusion.validate();
        if (num_classes < 2) throw std::invalid_argument("model: need >= 2 classes");
        if (use_ps) {
            ps_cfg.validate();
            if (ps_cfg.num_classes != num_classes)
                throw std::invalid_argument("model: signal-branch head has " +
                                            std::to_string(ps_cfg.num_classes) + " classes, model has " +
                                            std::to_string(num_classes));
            if (!concat_fusion && fusion.d_out() != me_cfg.backbone.feature_dim)
                throw std::invalid_argument("model: fusion output dim must match the clip feature dim");
        }
        if (epochs < 0 || batch_size < 1) throw std::invalid_argument("model: bad training schedule");
    }

    static std::vector<int> parse_int_list(const std::string& s, const std::string& key) {
        std::vector<int> out;
        std::stringstream ss(s);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            try {
                out.push_back(std::stoi(tok));
            } catch (const std::exception&) {
                throw std::runtime_error("config key '" + key + "': bad integer list '" + s + "'");
            }
        }
        if (out.empty()) throw std::runtime_error("config key '" + key + "': empty list");
        return out;
    }

    static std::vector<ps::InceptionBranchSpec> parse_branches(const std::string& s, const std::string& key) {
        std::vector<ps::InceptionBranchSpec> out;
        std::stringstream ss(s);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            const auto colon = tok.find(':');
            try {
                if (colon == std::string::npos) throw std::invalid_argument("");
                out.push_back({std::stoi(tok.substr(0, colon)), std::stoi(tok.substr(colon + 1))});
            } catch (const std::exception&) {
                throw std::runtime_error("config key '" + key + "': expected kernel:out pairs, got '" + s + "'");
            }
        }
        return out;
    }

    static std::string join_branches(const std::vector<ps::InceptionBranchSpec>& bs) {
        std::string s;
        for (const auto& b : bs)
            s += (s.empty() ? "" : ",") + std::to_string(b.kernel_size) + ":" + std::to_string(b.out_channels);
        return s;
    }

    static FullModelConfig from_kv(const config::KV& kv) {
        config::Reader r(kv);
        FullModelConfig c;
        c.use_depth = r.get_bool("use_depth", c.use_depth);
        c.use_ps = r.get_bool("use_ps", c.use_ps);
        const std::string weights = r.get_string("frame_weights", "gaussian");
        if (weights == "uniform")
            c.uniform_frame_weights = true;
        else if (weights != "gaussian")
            throw std::runtime_error("config key 'frame_weights': expected gaussian|uniform, got '" + weights +
                                     "'");
        const std::string fusion = r.get_string("fusion", "guided");
        if (fusion == "concat")
            c.concat_fusion = true;
        else if (fusion != "guided")
            throw std::runtime_error("config key 'fusion': expected guided|concat, got '" + fusion + "'");
        c.num_classes = r.get_int("num_classes", c.num_classes);

        c.me_cfg.backbone.input_size = r.get_int("me_input_size", c.me_cfg.backbone.input_size);
        std::string stages = r.get_string("me_stages", "");
        if (!stages.empty()) c.me_cfg.backbone.stage_channels = parse_int_list(stages, "me_stages");
        c.me_cfg.backbone.feature_dim = r.get_int("me_feature_dim", c.me_cfg.backbone.feature_dim);
        c.me_cfg.attn.tokens = r.get_int("me_attn_tokens", c.me_cfg.attn.tokens);
        c.me_cfg.attn.d_model = r.get_int("me_attn_dmodel", c.me_cfg.attn.d_model);
        c.me_cfg.attn.heads = r.get_int("me_attn_heads", c.me_cfg.attn.heads);
        c.fusion.tokens = r.get_int("fusion_tokens", c.fusion.tokens);
        c.fusion.d_model = r.get_int("fusion_dmodel", c.fusion.d_model);
        c.fusion.heads = r.get_int("fusion_heads", c.fusion.heads);
        c.ps_cfg.input_length = r.get_int("ps_length", c.ps_cfg.input_length);
        c.ps_cfg.feature_dim = r.get_int("ps_feature_dim", c.ps_cfg.feature_dim);
        std::string grouped = r.get_string("ps_grouped", "");
        if (!grouped.empty()) c.ps_cfg.grouped_branches = parse_branches(grouped, "ps_grouped");
        std::string mixed = r.get_string("ps_mixed", "");
        if (!mixed.empty()) c.ps_cfg.mixed_branches = parse_branches(mixed, "ps_mixed");

        c.ps_cfg.num_classes = c.num_classes;
        c.adam.lr = static_cast<float>(r.get_double("lr", c.adam.lr));
        c.epochs = r.get_int("epochs", c.epochs);
        c.batch_size = r.get_int("batch_size", c.batch_size);
        c.seed = static_cast<uint64_t>(r.get_int("seed", static_cast<int>(c.seed)));
        r.reject_unknown();
        c.validate();
        return c;
    }

    config::KV to_kv() const {
        config::KV kv;
        kv["use_depth"] = use_depth ? "true" : "false";
        kv["use_ps"] = use_ps ? "true" : "false";
        kv["frame_weights"] = uniform_frame_weights ? "uniform" : "gaussian";
        kv["fusion"] = concat_fusion ? "concat" : "guided";
        kv["num_classes"] = std::to_string(num_classes);
        kv["me_input_size"] = std::to_string(me_cfg.backbone.input_size);
        std::string stages;
        for (int c : me_cfg.backbone.stage_channels) stages += (stages.empty() ? "" : ",") + std::to_string(c);
        kv["me_stages"] = stages;
        kv["me_feature_dim"] = std::to_string(me_cfg.backbone.feature_dim);
        kv["me_attn_tokens"] = std::to_string(me_cfg.attn.tokens);
        kv["me_attn_dmodel"] = std::to_string(me_cfg.attn.d_model);
        kv["me_attn_heads"] = std::to_string(me_cfg.attn.heads);
        kv["fusion_tokens"] = std::to_string(fusion.tokens);
        kv["fusion_dmodel"] = std::to_string(fusion.d_model);
        kv["fusion_heads"] = std::to_string(fusion.heads);
        kv["ps_length"] = std::to_string(ps_cfg.input_length);
        kv["ps_feature_dim"] = std::to_string(ps_cfg.feature_dim);
        kv["ps_grouped"] = join_branches(ps_cfg.grouped_branches);
        kv["ps_mixed"] = join_branches(ps_cfg.mixed_branches);
        kv["lr"] = std::to_string(adam.lr);
        kv["epochs"] = std::to_string(epochs);
        kv["batch_size"] = std::to_string(batch_size);
        kv["seed"] = std::to_string(seed);
        return kv;
    }
};

struct FullModel {
    FullModelConfig cfg;
    ParameterStore store;
};

inline FullModel build_full_model(const FullModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    FullModel m;
    m.cfg = cfg;
    m.cfg.me_cfg.use_depth = cfg.use_depth;
    m.cfg.ps_cfg.num_classes = cfg.num_classes;
    std::mt19937 rng(static_cast<uint32_t>(seed));
    me::build_me_branch(m.store, m.cfg.me_cfg, rng);
    const int64_t d_me = cfg.me_cfg.backbone.feature_dim;
    if (cfg.use_ps) {
        // signal branch parameters come from an independent stream so that
        // toggling other modalities never shifts its initialization
        std::mt19937 ps_rng(static_cast<uint32_t>(seed ^ 0x9e3779b9u));
        ps::build_ps_net(m.store, m.cfg.ps_cfg, ps_rng, "ps");
        if (cfg.concat_fusion)
            attention::build_concat_fusion(m.store, "fuse", d_me, m.cfg.ps_cfg.feature_dim, d_me, rng);
        else
            attention::build_guided_attention(m.store, "fuse", cfg.fusion, d_me, m.cfg.ps_cfg.feature_dim, rng);
    }
    m.store.add("head.w", he_uniform({cfg.num_classes, d_me}, d_me, rng));
    m.store.add("head.b", Tensor({cfg.num_classes}));
    return m;
}

struct ForwardOut {
    int logits_mm = -1;
    int logits_ps = -1;  // -1 when the signal branch is disabled
};

inline Tensor segment_for(const FullModelConfig& cfg, const data::MESample& s) {
    return data::segment_signals(s.signals, s.signals.onset_s, s.signals.offset_s, cfg.ps_cfg.input_length);
}

/// Whole assembly on one sample. `ps_seg` is the preprocessed [3×L] signal
/// window; ignored (may be empty) when the signal branch is off.
inline ForwardOut full_forward(Tape& t, FullModel& m, const data::MESample& s, const Tensor& ps_seg) {
    const FullModelConfig& cfg = m.cfg;
    const int f = static_cast<int>(s.frames.frames());
    const auto weights = cfg.uniform_frame_weights ? fusion::uniform_weights(f) : fusion::gaussian_weights(f);
    me::MEConfig mc = cfg.me_cfg;
    mc.use_depth = cfg.use_depth;
    int me_feat = me::me_forward(t, m.store, mc, s.frames, weights);

    ForwardOut out;
    int fused = me_feat;
    if (cfg.use_ps) {
        auto ps_out = ps::ps_forward(t, m.store, cfg.ps_cfg, t.leaf(ps_seg));
        out.logits_ps = ps_out.logits;
        fused = cfg.concat_fusion ? attention::concat_fusion(t, m.store, "fuse", me_feat, ps_out.features)
                                  : attention::guided_multihead(t, m.store, "fuse", me_feat, ps_out.features,
                                                                cfg.fusion);
    }
    out.logits_mm =
        ops::linear(t, fused, t.leaf_param(m.store.at("head.w")), t.leaf_param(m.store.at("head.b")));
    return out;
}

/// (L_ps + L_mm)/2 with both heads; plain L_mm when signals are off.
inline int composite_loss(Tape& t, const ForwardOut& out, int target) {
    int l_mm = ops::cross_entropy(t, out.logits_mm, {target});
    if (out.logits_ps < 0) return l_mm;
    int l_ps = ops::cross_entropy(t, out.logits_ps, {target});
    return ops::scale(t, ops::add(t, l_mm, l_ps), 0.5f);
}

struct Prediction {
    int label = 0;
    std::vector<double> probs;
};

inline Prediction predict(FullModel& m, const data::MESample& s, const Tensor& ps_seg) {
    Tape t;
    auto out = full_forward(t, m, s, ps_seg);
    const Tensor& lv = t.val(out.logits_mm);
    Prediction p;
    p.probs.resize(static_cast<size_t>(lv.size()));
    double mx = lv[0];
    for (int64_t i = 1; i < lv.size(); ++i) mx = std::max(mx, static_cast<double>(lv[i]));
    double z = 0.0;
    for (int64_t i = 0; i < lv.size(); ++i) {
        p.probs[static_cast<size_t>(i)] = std::exp(lv[i] - mx);
        z += p.probs[static_cast<size_t>(i)];
    }
    for (auto& v : p.probs) v /= z;
    for (int64_t i = 1; i < lv.size(); ++i)
        if (lv[i] > lv[p.label]) p.label = static_cast<int>(i);  // ties keep the lowest index
    return p;
}

/// Precomputed signal windows, one per dataset sample (empty when unused).
inline std::vector<Tensor> prepare_segments(const FullModelConfig& cfg, const data::Dataset& ds) {
    std::vector<Tensor> segs(ds.samples.size());
    if (!cfg.use_ps) return segs;
    for (size_t i = 0; i < ds.samples.size(); ++i) segs[i] = segment_for(cfg, ds.samples[i]);
    return segs;
}

/// Adam over seeded shuffled mini-batches; returns per-epoch mean loss.
inline std::vector<double> train(FullModel& m, const data::Dataset& ds, const std::vector<size_t>& train_idx,
                                 const std::vector<Tensor>& segs) {
    if (train_idx.empty()) throw std::invalid_argument("train: empty training split");
    Adam opt(m.store, m.cfg.adam);
    std::mt19937 rng(static_cast<uint32_t>(m.cfg.seed) + 0x5151u);
    std::vector<size_t> order = train_idx;
    std::vector<double> log;
    for (int epoch = 0; epoch < m.cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (size_t b = 0; b < order.size(); b += static_cast<size_t>(m.cfg.batch_size)) {
            const size_t end = std::min(order.size(), b + static_cast<size_t>(m.cfg.batch_size));
            m.store.zero_grads();
            for (size_t i = b; i < end; ++i) {
                const auto& s = ds.samples[order[i]];
                Tape t;
                auto out = full_forward(t, m, s, segs[order[i]]);
                int l = composite_loss(t, out, s.label);
                const float lv = t.val(l)[0];
                if (!std::isfinite(lv))
                    throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                             ", sample " + s.sample_id);
                epoch_loss += lv;
                t.backward(l);
            }
            const float inv = 1.0f / static_cast<float>(end - b);
            m.store.for_each([inv](const std::string&, Param& p) {
                for (auto& g : p.grad.data) g *= inv;
            });
            opt.step();
        }
        log.push_back(epoch_loss / static_cast<double>(order.size()));
    }
    return log;
}

inline void write_loss_log(const std::vector<double>& log, const fs::path& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write loss log: " + path.string());
    f << "epoch,mean_loss\n";
    for (size_t e = 0; e < log.size(); ++e) f << e << ',' << data::format_double(log[e]) << '\n';
}

inline void save_checkpoint(const FullModel& m, const fs::path& dir) {
    fs::create_directories(dir / "params");
    std::ofstream manifest(dir / "manifest.txt");
    if (!manifest) throw std::runtime_error("cannot write checkpoint manifest in " + dir.string());
    m.store.for_each([&](const std::string& name, const Param& p) {
        save_ten(p.value, (dir / "params" / (name + ".ten")).string());
        manifest << name << '\n';
    });
    config::write_file(m.cfg.to_kv(), (dir / "config.txt").string());
}

inline FullModel load_checkpoint(const fs::path& dir) {
    auto cfg = FullModelConfig::from_kv(config::parse_file((dir / "config.txt").string()));
    FullModel m = build_full_model(cfg, cfg.seed);
    std::ifstream manifest(dir / "manifest.txt");
    if (!manifest) throw std::runtime_error("missing checkpoint manifest in " + dir.string());
    std::string name;
    size_t n = 0;
    while (std::getline(manifest, name)) {
        if (name.empty()) continue;
        Tensor v = load_ten((dir / "params" / (name + ".ten")).string());
        Param& p = m.store.at(name);
        if (v.shape != p.value.shape)
            throw std::runtime_error("checkpoint parameter " + name + " has shape " + shape_str(v.shape) +
                                     ", expected " + shape_str(p.value.shape));
        p.value = std::move(v);
        ++n;
    }
    if (n != m.store.size())
        throw std::runtime_error("checkpoint lists " + std::to_string(n) + " parameters, model has " +
                                 std::to_string(m.store.size()));
    return m;
}

}  // namespace model
}  // namespace latmm
