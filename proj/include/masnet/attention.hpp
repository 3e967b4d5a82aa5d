#pragma once

#include <memory>

#include "masnet/ops.hpp"

namespace masnet {

// Token granularity of the attention: whole map, co-registered window, or
// single pixel.
enum class AttentionLevel { Global, Local, Individual };

struct AttentionSpec {
    AttentionLevel level = AttentionLevel::Global;
    std::size_t window_h = 0;   // Local only
    std::size_t window_w = 0;
    // Literal single-token reading of the individual level, where the softmax
    // over one spatial token is constantly 1. Default is the channel-token
    // reading (softmax over channels). Kept for comparison.
    bool individual_literal = false;
};

// One shared {Wq, Wk, Wv} serves both branches. Projections are d x C with no
// bias; an output projection (C x d) exists only when d != C.
template <typename T>
struct AttentionParamsT {
    TensorT<T> wq, wk, wv;  // d x C
    TensorT<T> wo;          // C x d, undefined when d == C
    AttentionSpec spec;
    std::size_t channels = 0;
    std::size_t d = 0;

    static AttentionParamsT init(std::size_t channels, std::size_t d, AttentionSpec spec, Rng& rng) {
        AttentionParamsT p;
        p.spec = spec;
        p.channels = channels;
        p.d = d;
        const T bound = T(std::sqrt(1.0 / double(channels)));
        p.wq = TensorT<T>::uniform({d, channels}, -bound, bound, rng).set_requires_grad(true);
        p.wk = TensorT<T>::uniform({d, channels}, -bound, bound, rng).set_requires_grad(true);
        p.wv = TensorT<T>::uniform({d, channels}, -bound, bound, rng).set_requires_grad(true);
        if (d != channels) {
            const T ob = T(std::sqrt(1.0 / double(d)));
            p.wo = TensorT<T>::uniform({channels, d}, -ob, ob, rng).set_requires_grad(true);
        }
        return p;
    }

    std::vector<TensorT<T>> parameters() {
        std::vector<TensorT<T>> ps = {wq, wk, wv};
        if (wo.defined()) ps.push_back(wo);
        return ps;
    }
};

inline std::size_t attention_param_count(std::size_t channels, std::size_t d, AttentionLevel) {
    std::size_t n = 3 * channels * d;
    if (d != channels) n += d * channels;  // output projection
    return n;
}

// Gather maps taking a channels x H x W map to per-group token matrices and
// back. Group order and within-group token order are fixed (row-major).
struct TokenLayout {
    Shape map_shape;                 // {channels, H, W}
    std::size_t tokens = 0;          // per group
    std::size_t width = 0;           // token width
    std::shared_ptr<std::vector<std::vector<std::size_t>>> maps;  // flat indices, group-major
};

// Token groups per level, on a map with `channels` channels:
//   Global        -> 1 group of H*W tokens of width channels
//   Local(h, w)   -> (H/h)*(W/w) groups of h*w tokens of width channels
//   Individual    -> H*W groups of `channels` tokens of width 1 (channel-token
//                    reading), or 1 token of width channels when literal.
inline TokenLayout token_layout(std::size_t channels, std::size_t h, std::size_t w, const AttentionSpec& spec) {
    TokenLayout lay;
    lay.map_shape = {channels, h, w};
    lay.maps = std::make_shared<std::vector<std::vector<std::size_t>>>();
    auto at = [&](std::size_t c, std::size_t y, std::size_t x) { return (c * h + y) * w + x; };
    switch (spec.level) {
        case AttentionLevel::Global: {
            lay.tokens = h * w;
            lay.width = channels;
            std::vector<std::size_t> m;
            m.reserve(h * w * channels);
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    for (std::size_t c = 0; c < channels; ++c) m.push_back(at(c, y, x));
            lay.maps->push_back(std::move(m));
            break;
        }
        case AttentionLevel::Local: {
            const std::size_t wh = spec.window_h, ww = spec.window_w;
            if (wh < 1 || ww < 1) throw std::invalid_argument("local attention: window must be >= 1");
            if (h % wh != 0 || w % ww != 0)
                throw std::invalid_argument("local attention: map " + std::to_string(h) + "x" + std::to_string(w) +
                                            " not divisible by window " + std::to_string(wh) + "x" + std::to_string(ww));
            lay.tokens = wh * ww;
            lay.width = channels;
            for (std::size_t gy = 0; gy < h / wh; ++gy)
                for (std::size_t gx = 0; gx < w / ww; ++gx) {
                    std::vector<std::size_t> m;
                    m.reserve(wh * ww * channels);
                    for (std::size_t y = 0; y < wh; ++y)
                        for (std::size_t x = 0; x < ww; ++x)
                            for (std::size_t c = 0; c < channels; ++c) m.push_back(at(c, gy * wh + y, gx * ww + x));
                    lay.maps->push_back(std::move(m));
                }
            break;
        }
        case AttentionLevel::Individual: {
            lay.tokens = spec.individual_literal ? 1 : channels;
            lay.width = spec.individual_literal ? channels : 1;
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    std::vector<std::size_t> m;
                    m.reserve(channels);
                    for (std::size_t c = 0; c < channels; ++c) m.push_back(at(c, y, x));
                    lay.maps->push_back(std::move(m));
                }
            break;
        }
    }
    return lay;
}

template <typename T>
std::vector<TensorT<T>> tokenize(TensorT<T> x, const TokenLayout& lay) {
    if (x.shape() != lay.map_shape)
        throw std::invalid_argument("tokenize: map " + shape_str(x.shape()) + " vs layout " + shape_str(lay.map_shape));
    std::vector<TensorT<T>> groups;
    groups.reserve(lay.maps->size());
    for (std::size_t g = 0; g < lay.maps->size(); ++g) {
        auto m = std::shared_ptr<const std::vector<std::size_t>>(lay.maps, &(*lay.maps)[g]);
        groups.push_back(gather(x, m, {lay.tokens, lay.width}));
    }
    return groups;
}

template <typename T>
TensorT<T> detokenize(const std::vector<TensorT<T>>& groups, const TokenLayout& lay) {
    auto maps = std::shared_ptr<const std::vector<std::vector<std::size_t>>>(lay.maps);
    return scatter_groups(groups, maps, lay.map_shape);
}

// Per-branch q/k/v maps plus retained post-softmax weights, for export and
// inspection. weights_*[g] is the softmax matrix of token group g.
template <typename T>
struct AttentionActivationsT {
    TensorT<T> q1, q2, k1, k2, v1, v2;              // d x H x W maps
    std::vector<TensorT<T>> weights1, weights2;     // attending over branch 1 / branch 2 values
    TensorT<T> value_term1, value_term2;            // pre-residual weighted values, C x H x W
    TokenLayout layout;                             // token layout on the d-channel maps
};

using AttentionParams = AttentionParamsT<float>;
using AttentionActivations = AttentionActivationsT<float>;

namespace detail {

// q/k/v as pointwise linear maps over channels: proj is d x C, x is C x H x W.
template <typename T>
TensorT<T> project_map(TensorT<T> x, TensorT<T> proj) {
    const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    TensorT<T> flat = reshape(x, {c, h * w});
    return reshape(matmul(proj, flat), {proj.shape()[0], h, w});
}

// softmax(q_other . k_own^T / sqrt(d)) . v_own per token group; returns the
// weighted-value groups and the retained softmax matrices.
template <typename T>
std::vector<TensorT<T>> attend(const std::vector<TensorT<T>>& q_other,
                               const std::vector<TensorT<T>>& k_own,
                               const std::vector<TensorT<T>>& v_own,
                               T inv_sqrt_d,
                               std::vector<TensorT<T>>& weights_out) {
    std::vector<TensorT<T>> out;
    out.reserve(q_other.size());
    weights_out.clear();
    weights_out.reserve(q_other.size());
    for (std::size_t g = 0; g < q_other.size(); ++g) {
        TensorT<T> logits = scale(matmul(q_other[g], transpose(k_own[g])), inv_sqrt_d);
        TensorT<T> w = softmax(logits, 1);  // key axis
        weights_out.push_back(w);
        out.push_back(matmul(w, v_own[g]));
    }
    return out;
}

}  // namespace detail

// Mutual-attention block: each branch is reweighted with queries from the
// other and added back to itself. Identical machinery, weights, and
// instruction order for both branches, so swapping inputs swaps outputs
// bitwise.
template <typename T>
std::pair<TensorT<T>, TensorT<T>> mutual_attention(TensorT<T> x1, TensorT<T> x2,
                                                   AttentionParamsT<T>& params,
                                                   AttentionActivationsT<T>* acts = nullptr) {
    if (x1.ndim() != 3 || x1.shape() != x2.shape())
        throw std::invalid_argument("mutual_attention: inputs must share a CxHxW shape");
    if (x1.shape()[0] != params.channels)
        throw std::invalid_argument("mutual_attention: channel width " + std::to_string(x1.shape()[0]) +
                                    " vs params " + std::to_string(params.channels));
    const std::size_t h = x1.shape()[1], w = x1.shape()[2];
    const T inv_sqrt_d = T(1.0 / std::sqrt(double(params.d)));

    TensorT<T> q1 = detail::project_map(x1, params.wq);
    TensorT<T> q2 = detail::project_map(x2, params.wq);
    TensorT<T> k1 = detail::project_map(x1, params.wk);
    TensorT<T> k2 = detail::project_map(x2, params.wk);
    TensorT<T> v1 = detail::project_map(x1, params.wv);
    TensorT<T> v2 = detail::project_map(x2, params.wv);

    TokenLayout lay = token_layout(params.d, h, w, params.spec);
    auto tq1 = tokenize(q1, lay), tq2 = tokenize(q2, lay);
    auto tk1 = tokenize(k1, lay), tk2 = tokenize(k2, lay);
    auto tv1 = tokenize(v1, lay), tv2 = tokenize(v2, lay);

    std::vector<TensorT<T>> weights1, weights2;
    auto o1 = detail::attend(tq2, tk1, tv1, inv_sqrt_d, weights1);
    auto o2 = detail::attend(tq1, tk2, tv2, inv_sqrt_d, weights2);

    TensorT<T> val1 = detokenize(o1, lay);  // d x H x W
    TensorT<T> val2 = detokenize(o2, lay);
    if (params.wo.defined()) {
        val1 = detail::project_map(val1, params.wo);
        val2 = detail::project_map(val2, params.wo);
    }
    TensorT<T> y1 = add(x1, val1);
    TensorT<T> y2 = add(x2, val2);

    if (acts) {
        acts->q1 = q1; acts->q2 = q2;
        acts->k1 = k1; acts->k2 = k2;
        acts->v1 = v1; acts->v2 = v2;
        acts->weights1 = std::move(weights1);
        acts->weights2 = std::move(weights2);
        acts->value_term1 = val1;
        acts->value_term2 = val2;
        acts->layout = lay;
    }
    return {y1, y2};
}

// Self-attention is mutual attention of a map with itself; returns the first
// branch, bitwise.
template <typename T>
TensorT<T> self_attention(TensorT<T> x, AttentionParamsT<T>& params,
                          AttentionActivationsT<T>* acts = nullptr) {
    return mutual_attention(x, x, params, acts).first;
}

}  // namespace masnet
