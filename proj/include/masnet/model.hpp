#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "masnet/attention.hpp"

namespace masnet {

enum class FusionKind { StackPointwise, Add, Diff };
enum class Variant { VanillaSiamese, MASNet, EarlyFusion };

inline const char* to_string(FusionKind f) {
    switch (f) {
        case FusionKind::StackPointwise: return "stack";
        case FusionKind::Add: return "add";
        default: return "diff";
    }
}
inline const char* to_string(Variant v) {
    switch (v) {
        case Variant::VanillaSiamese: return "vanilla";
        case Variant::MASNet: return "masnet";
        default: return "early";
    }
}
inline const char* to_string(AttentionLevel l) {
    switch (l) {
        case AttentionLevel::Global: return "global";
        case AttentionLevel::Local: return "local";
        default: return "individual";
    }
}

struct ModelConfig {
    std::size_t n_stages = 2;
    std::vector<std::size_t> stage_channels = {8, 16};
    std::vector<std::uint8_t> attention_stage = {1, 1};  // per-stage enable, MASNet only
    AttentionLevel level = AttentionLevel::Individual;
    std::size_t window_h = 2, window_w = 2;
    std::size_t proj_dim = 0;  // 0 -> match the stage's channel width
    bool individual_literal = false;
    FusionKind fusion = FusionKind::StackPointwise;
    Variant variant = Variant::VanillaSiamese;
    bool decoder_skips = false;  // single-scale by default

    std::size_t in_channels() const { return variant == Variant::EarlyFusion ? 6 : 3; }

    std::size_t attn_d(std::size_t stage) const {
        return proj_dim == 0 ? stage_channels[stage] : proj_dim;
    }

    bool attention_enabled(std::size_t stage) const {
        return variant == Variant::MASNet && stage < attention_stage.size() && attention_stage[stage] != 0;
    }

    AttentionSpec attention_spec() const {
        return {level, window_h, window_w, individual_literal};
    }

    void validate() const {
        if (n_stages == 0 || stage_channels.size() != n_stages)
            throw std::invalid_argument("model config: need one channel width per stage");
        for (std::size_t i = 1; i < n_stages; ++i)
            if (stage_channels[i] < stage_channels[i - 1])
                throw std::invalid_argument("model config: stage channels must be non-decreasing");
        if (variant == Variant::MASNet) {
            bool any = false;
            for (std::size_t s = 0; s < n_stages; ++s) any = any || attention_enabled(s);
            if (!any) throw std::invalid_argument("model config: MASNet needs an attention-enabled stage");
        }
        if (level == AttentionLevel::Local && (window_h < 1 || window_w < 1))
            throw std::invalid_argument("model config: local window must be >= 1");
    }
};

struct ParamBreakdown {
    std::size_t encoder = 0, attention = 0, fusion = 0, decoder = 0, total = 0;
    double attention_fraction = 0.0;
};

// Exact accounting from the config alone; conv params are kh*kw*cin*cout + cout.
inline ParamBreakdown count_params(const ModelConfig& cfg) {
    cfg.validate();
    ParamBreakdown b;
    auto conv = [](std::size_t cin, std::size_t cout, std::size_t k) { return k * k * cin * cout + cout; };
    std::size_t cin = cfg.in_channels();
    for (std::size_t s = 0; s < cfg.n_stages; ++s) {
        b.encoder += conv(cin, cfg.stage_channels[s], 3);
        cin = cfg.stage_channels[s];
        if (cfg.attention_enabled(s))
            b.attention += attention_param_count(cfg.stage_channels[s], cfg.attn_d(s), cfg.level);
    }
    if (cfg.variant != Variant::EarlyFusion && cfg.fusion == FusionKind::StackPointwise) {
        if (cfg.decoder_skips)
            for (std::size_t s = 0; s < cfg.n_stages; ++s)
                b.fusion += conv(2 * cfg.stage_channels[s], cfg.stage_channels[s], 1);
        else
            b.fusion += conv(2 * cfg.stage_channels.back(), cfg.stage_channels.back(), 1);
    }
    for (std::size_t s = cfg.n_stages; s-- > 1;) b.decoder += conv(cfg.stage_channels[s], cfg.stage_channels[s - 1], 3);
    b.decoder += conv(cfg.stage_channels[0], cfg.stage_channels[0], 3);  // final full-res conv
    b.decoder += conv(cfg.stage_channels[0], 2, 1);                      // head
    b.total = b.encoder + b.attention + b.fusion + b.decoder;
    b.attention_fraction = b.total ? double(b.attention) / double(b.total) : 0.0;
    return b;
}

template <typename T>
struct Conv2dT {
    TensorT<T> w, b;
    std::size_t stride = 1, pad = 1;

    static Conv2dT init(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride,
                        std::size_t pad, Rng& rng) {
        Conv2dT c;
        const T bound = T(std::sqrt(1.0 / double(k * k * cin)));
        c.w = TensorT<T>::uniform({cout, cin, k, k}, -bound, bound, rng).set_requires_grad(true);
        c.b = TensorT<T>::uniform({cout}, -bound, bound, rng).set_requires_grad(true);
        c.stride = stride;
        c.pad = pad;
        return c;
    }

    TensorT<T> operator()(TensorT<T> x) { return conv2d(x, w, b, stride, pad); }
};

template <typename T>
struct ForwardResultT {
    TensorT<T> logits;                                // 2 x H x W
    std::vector<AttentionActivationsT<T>> acts;       // one per attention-enabled stage
    std::vector<std::size_t> act_stages;              // stage index of each entry
};

// Weight-shared siamese encoder + fusion + decoder. One parameter set serves
// both branches; the MASNet variant runs mutual attention after every enabled
// stage and feeds the exchanged maps to the next stage.
template <typename T>
class ModelT {
public:
    ModelT(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        std::size_t cin = cfg_.in_channels();
        for (std::size_t s = 0; s < cfg_.n_stages; ++s) {
            stages_.push_back(Conv2dT<T>::init(cin, cfg_.stage_channels[s], 3, 2, 1, rng));
            cin = cfg_.stage_channels[s];
            if (cfg_.attention_enabled(s))
                attn_.push_back(AttentionParamsT<T>::init(cfg_.stage_channels[s], cfg_.attn_d(s),
                                                          cfg_.attention_spec(), rng));
        }
        if (cfg_.variant != Variant::EarlyFusion && cfg_.fusion == FusionKind::StackPointwise) {
            if (cfg_.decoder_skips)
                for (std::size_t s = 0; s < cfg_.n_stages; ++s)
                    fuse_convs_.push_back(Conv2dT<T>::init(2 * cfg_.stage_channels[s], cfg_.stage_channels[s], 1, 1, 0, rng));
            else
                fuse_convs_.push_back(Conv2dT<T>::init(2 * cfg_.stage_channels.back(), cfg_.stage_channels.back(), 1, 1, 0, rng));
        }
        for (std::size_t s = cfg_.n_stages; s-- > 1;)
            dec_convs_.push_back(Conv2dT<T>::init(cfg_.stage_channels[s], cfg_.stage_channels[s - 1], 3, 1, 1, rng));
        dec_convs_.push_back(Conv2dT<T>::init(cfg_.stage_channels[0], cfg_.stage_channels[0], 3, 1, 1, rng));
        head_ = Conv2dT<T>::init(cfg_.stage_channels[0], 2, 1, 1, 0, rng);
    }

    const ModelConfig& config() const { return cfg_; }

    // Fuse two same-shape maps into one per the configured strategy.
    TensorT<T> fuse(TensorT<T> f1, TensorT<T> f2, std::size_t fuse_idx) {
        if (f1.shape() != f2.shape()) throw std::invalid_argument("fuse: shape mismatch");
        switch (cfg_.fusion) {
            case FusionKind::Add: return add(f1, f2);
            case FusionKind::Diff: return sub(f1, f2);
            case FusionKind::StackPointwise: return fuse_convs_.at(fuse_idx)(concat_channels(f1, f2));
        }
        throw std::logic_error("fuse: bad kind");
    }

    // Both encoder branches, weight-shared; returns per-stage feature maps.
    std::pair<std::vector<TensorT<T>>, std::vector<TensorT<T>>> siamese_encode(
        TensorT<T> x1, TensorT<T> x2, ForwardResultT<T>* keep_acts = nullptr) {
        check_input(x1);
        check_input(x2);
        std::vector<TensorT<T>> f1s, f2s;
        TensorT<T> a = x1, b = x2;
        std::size_t attn_idx = 0;
        for (std::size_t s = 0; s < cfg_.n_stages; ++s) {
            a = relu(stages_[s](a));
            b = relu(stages_[s](b));
            if (cfg_.attention_enabled(s)) {
                AttentionActivationsT<T> acts;
                auto [ya, yb] = mutual_attention(a, b, attn_[attn_idx], keep_acts ? &acts : nullptr);
                ++attn_idx;
                a = ya;
                b = yb;
                if (keep_acts) {
                    keep_acts->acts.push_back(std::move(acts));
                    keep_acts->act_stages.push_back(s);
                }
            }
            f1s.push_back(a);
            f2s.push_back(b);
        }
        return {f1s, f2s};
    }

    ForwardResultT<T> forward(TensorT<T> x1, TensorT<T> x2, bool keep_acts = false) {
        ForwardResultT<T> res;
        std::vector<TensorT<T>> fused(cfg_.n_stages);
        if (cfg_.variant == Variant::EarlyFusion) {
            if (x1.shape() != x2.shape() || x1.shape()[0] != 3)
                throw std::invalid_argument("forward: early fusion expects two 3-channel inputs");
            TensorT<T> x = concat_channels(x1, x2);
            check_input(x);
            for (std::size_t s = 0; s < cfg_.n_stages; ++s) {
                x = relu(stages_[s](x));
                fused[s] = x;
            }
        } else {
            auto [f1s, f2s] = siamese_encode(x1, x2, keep_acts ? &res : nullptr);
            if (cfg_.decoder_skips) {
                for (std::size_t s = 0; s < cfg_.n_stages; ++s) fused[s] = fuse(f1s[s], f2s[s], s);
            } else {
                fused[cfg_.n_stages - 1] = fuse(f1s.back(), f2s.back(), 0);
            }
        }
        res.logits = decode(fused);
        return res;
    }

    // Nearest-neighbor upsampling interleaved with 3x3 convs, back to input
    // resolution; 2-channel logits (non-change, change).
    TensorT<T> decode(const std::vector<TensorT<T>>& fused) {
        TensorT<T> x = fused.back();
        for (std::size_t i = 0; i + 1 < cfg_.n_stages; ++i) {
            x = relu(dec_convs_[i](upsample_nearest2(x)));
            if (cfg_.decoder_skips && cfg_.variant != Variant::EarlyFusion)
                x = add(x, fused[cfg_.n_stages - 2 - i]);
        }
        x = relu(dec_convs_.back()(upsample_nearest2(x)));
        return head_(x);
    }

    // Deterministic order: encoder stages, attention blocks, fusion, decoder, head.
    std::vector<TensorT<T>> parameters() {
        std::vector<TensorT<T>> ps;
        for (auto& c : stages_) { ps.push_back(c.w); ps.push_back(c.b); }
        for (auto& a : attn_)
            for (auto& p : a.parameters()) ps.push_back(p);
        for (auto& c : fuse_convs_) { ps.push_back(c.w); ps.push_back(c.b); }
        for (auto& c : dec_convs_) { ps.push_back(c.w); ps.push_back(c.b); }
        ps.push_back(head_.w);
        ps.push_back(head_.b);
        return ps;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        for (auto& p : parameters()) n += p.size();
        return n;
    }

    void zero_grad() {
        for (auto& p : parameters()) p.zero_grad();
    }

    std::vector<AttentionParamsT<T>>& attention_blocks() { return attn_; }

private:
    void check_input(const TensorT<T>& x) const {
        if (x.ndim() != 3) throw std::invalid_argument("forward: input must be CxHxW");
        const std::size_t div = std::size_t(1) << cfg_.n_stages;
        if (x.shape()[1] % div != 0 || x.shape()[2] % div != 0)
            throw std::invalid_argument("forward: spatial extent must be divisible by " + std::to_string(div));
    }

    ModelConfig cfg_;
    std::vector<Conv2dT<T>> stages_;
    std::vector<AttentionParamsT<T>> attn_;
    std::vector<Conv2dT<T>> fuse_convs_;
    std::vector<Conv2dT<T>> dec_convs_;
    Conv2dT<T> head_;
};

using Model = ModelT<float>;

// --- checkpoint format -------------------------------------------------------
//
// magic "MASN1", then little-endian (tag u32, value i64) pairs describing the
// config, a u64 parameter count, and the raw float32 parameter values in
// parameters() order.

namespace ckpt {

enum Tag : std::uint32_t {
    kNStages = 1, kStageChannel = 2, kAttnStage = 3, kLevel = 4, kWindowH = 5,
    kWindowW = 6, kProjDim = 7, kIndividualLiteral = 8, kFusion = 9, kVariant = 10,
    kDecoderSkips = 11, kUpsampleMode = 12, kEnd = 0xffff,
};

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = (v >> (8 * i)) & 0xff;
    os.write(reinterpret_cast<char*>(b), 4);
}
inline void put_i64(std::ostream& os, std::int64_t v) {
    std::uint64_t u = std::uint64_t(v);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = (u >> (8 * i)) & 0xff;
    os.write(reinterpret_cast<char*>(b), 8);
}
inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
    return v;
}
inline std::int64_t get_i64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("checkpoint: truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return std::int64_t(v);
}

}  // namespace ckpt

inline void save_checkpoint(const std::filesystem::path& path, Model& model) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot write " + path.string());
    os.write("MASN1", 5);
    const ModelConfig& c = model.config();
    auto tag = [&](std::uint32_t t, std::int64_t v) { ckpt::put_u32(os, t); ckpt::put_i64(os, v); };
    tag(ckpt::kNStages, std::int64_t(c.n_stages));
    for (std::size_t ch : c.stage_channels) tag(ckpt::kStageChannel, std::int64_t(ch));
    for (std::size_t s = 0; s < c.n_stages; ++s)
        tag(ckpt::kAttnStage, s < c.attention_stage.size() ? c.attention_stage[s] : 0);
    tag(ckpt::kLevel, std::int64_t(c.level));
    tag(ckpt::kWindowH, std::int64_t(c.window_h));
    tag(ckpt::kWindowW, std::int64_t(c.window_w));
    tag(ckpt::kProjDim, std::int64_t(c.proj_dim));
    tag(ckpt::kIndividualLiteral, c.individual_literal ? 1 : 0);
    tag(ckpt::kFusion, std::int64_t(c.fusion));
    tag(ckpt::kVariant, std::int64_t(c.variant));
    tag(ckpt::kDecoderSkips, c.decoder_skips ? 1 : 0);
    tag(ckpt::kUpsampleMode, 0);  // nearest
    tag(ckpt::kEnd, 0);
    std::uint64_t n = model.parameter_count();
    ckpt::put_u32(os, std::uint32_t(n & 0xffffffffu));
    ckpt::put_u32(os, std::uint32_t(n >> 32));
    for (auto& p : model.parameters())
        os.write(reinterpret_cast<const char*>(p.data()), std::streamsize(p.size() * sizeof(float)));
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

inline Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
    char magic[5];
    is.read(magic, 5);
    if (!is || std::string(magic, 5) != "MASN1")
        throw std::runtime_error("checkpoint: bad magic in " + path.string());
    ModelConfig c;
    c.stage_channels.clear();
    c.attention_stage.clear();
    for (;;) {
        std::uint32_t t = ckpt::get_u32(is);
        std::int64_t v = ckpt::get_i64(is);
        if (t == ckpt::kEnd) break;
        switch (t) {
            case ckpt::kNStages: c.n_stages = std::size_t(v); break;
            case ckpt::kStageChannel: c.stage_channels.push_back(std::size_t(v)); break;
            case ckpt::kAttnStage: c.attention_stage.push_back(std::uint8_t(v)); break;
            case ckpt::kLevel: c.level = AttentionLevel(v); break;
            case ckpt::kWindowH: c.window_h = std::size_t(v); break;
            case ckpt::kWindowW: c.window_w = std::size_t(v); break;
            case ckpt::kProjDim: c.proj_dim = std::size_t(v); break;
            case ckpt::kIndividualLiteral: c.individual_literal = v != 0; break;
            case ckpt::kFusion: c.fusion = FusionKind(v); break;
            case ckpt::kVariant: c.variant = Variant(v); break;
            case ckpt::kDecoderSkips: c.decoder_skips = v != 0; break;
            case ckpt::kUpsampleMode: break;
            default: throw std::runtime_error("checkpoint: unknown tag " + std::to_string(t));
        }
    }
    std::uint64_t n = std::uint64_t(ckpt::get_u32(is)) | (std::uint64_t(ckpt::get_u32(is)) << 32);
    Rng rng(0);
    Model model(c, rng);
    if (model.parameter_count() != n)
        throw std::runtime_error("checkpoint: parameter count mismatch in " + path.string());
    for (auto& p : model.parameters()) {
        is.read(reinterpret_cast<char*>(p.data()), std::streamsize(p.size() * sizeof(float)));
        if (!is) throw std::runtime_error("checkpoint: truncated parameters in " + path.string());
    }
    return model;
}

}  // namespace masnet
