#pragma once

#include <memory>

#include "masnet/tensor.hpp"

// Differentiable primitives. Each op computes its forward result and, when a
// tape is active and any input requires grad, records a closure that
// accumulates into the inputs' grad buffers from the output's.

namespace masnet {

namespace detail {

template <typename T>
bool track(std::initializer_list<const TensorT<T>*> ins) {
    if (!TapeT<T>::active()) return false;
    for (const TensorT<T>* t : ins)
        if (t->requires_grad()) return true;
    return false;
}

template <typename T>
void record(TensorT<T>& out, std::function<void()> fn) {
    out.set_requires_grad(true);
    TapeT<T>::active()->record(std::move(fn));
}

}  // namespace detail

// --- elementwise -----------------------------------------------------------

enum class Elementwise { Add, Sub, Mul };

// Equal shapes, or either operand a scalar (the only broadcasts supported).
template <typename T>
TensorT<T> elementwise(Elementwise op, TensorT<T> a, TensorT<T> b) {
    const bool a_scalar = a.size() == 1, b_scalar = b.size() == 1;
    if (!a_scalar && !b_scalar && a.shape() != b.shape())
        throw std::invalid_argument("elementwise: incompatible shapes " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    const Shape& out_shape = a_scalar ? b.shape() : a.shape();
    TensorT<T> out = TensorT<T>::zeros(out_shape);
    const std::size_t n = out.size();
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        T x = pa[a_scalar ? 0 : i], y = pb[b_scalar ? 0 : i];
        po[i] = op == Elementwise::Add ? x + y : op == Elementwise::Sub ? x - y : x * y;
    }
    if (detail::track<T>({&a, &b})) {
        detail::record(out, [op, a, b, out, a_scalar, b_scalar]() mutable {
            const std::size_t n = out.size();
            const T* g = out.grad().data();
            if (a.requires_grad()) {
                T* ga = a.grad().data();
                for (std::size_t i = 0; i < n; ++i) {
                    T d = op == Elementwise::Mul ? g[i] * b.data()[b_scalar ? 0 : i] : g[i];
                    ga[a_scalar ? 0 : i] += d;
                }
            }
            if (b.requires_grad()) {
                T* gb = b.grad().data();
                for (std::size_t i = 0; i < n; ++i) {
                    T d = g[i];
                    if (op == Elementwise::Sub) d = -d;
                    else if (op == Elementwise::Mul) d = g[i] * a.data()[a_scalar ? 0 : i];
                    gb[b_scalar ? 0 : i] += d;
                }
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> add(TensorT<T> a, TensorT<T> b) { return elementwise(Elementwise::Add, a, b); }
template <typename T>
TensorT<T> sub(TensorT<T> a, TensorT<T> b) { return elementwise(Elementwise::Sub, a, b); }
template <typename T>
TensorT<T> mul(TensorT<T> a, TensorT<T> b) { return elementwise(Elementwise::Mul, a, b); }

template <typename T>
TensorT<T> scale(TensorT<T> a, T c) {
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * c;
    if (detail::track<T>({&a})) {
        detail::record(out, [a, out, c]() mutable {
            T* ga = a.grad().data();
            const T* g = out.grad().data();
            for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[i] * c;
        });
    }
    return out;
}

template <typename T>
TensorT<T> relu(TensorT<T> a) {
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
    if (detail::track<T>({&a})) {
        detail::record(out, [a, out]() mutable {
            T* ga = a.grad().data();
            const T* g = out.grad().data();
            for (std::size_t i = 0; i < a.size(); ++i)
                if (a.data()[i] > T(0)) ga[i] += g[i];
        });
    }
    return out;
}

// --- shape ------------------------------------------------------------------

template <typename T>
TensorT<T> reshape(TensorT<T> a, Shape shape) {
    if (numel(shape) != a.size())
        throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    TensorT<T> out = TensorT<T>::from(std::move(shape), a.values());
    if (detail::track<T>({&a})) {
        detail::record(out, [a, out]() mutable {
            T* ga = a.grad().data();
            const T* g = out.grad().data();
            for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[i];
        });
    }
    return out;
}

template <typename T>
TensorT<T> transpose(TensorT<T> a) {
    if (a.ndim() != 2) throw std::invalid_argument("transpose: expects 2-d, got " + shape_str(a.shape()));
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    TensorT<T> out = TensorT<T>::zeros({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.data()[j * r + i] = a.data()[i * c + j];
    if (detail::track<T>({&a})) {
        detail::record(out, [a, out, r, c]() mutable {
            T* ga = a.grad().data();
            const T* g = out.grad().data();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
        });
    }
    return out;
}

// out[i] = a[map[i]]; backward scatter-adds. The map is shared so tokenize
// layouts are built once per shape.
template <typename T>
TensorT<T> gather(TensorT<T> a, std::shared_ptr<const std::vector<std::size_t>> map, Shape out_shape) {
    if (numel(out_shape) != map->size()) throw std::invalid_argument("gather: map/shape mismatch");
    TensorT<T> out = TensorT<T>::zeros(std::move(out_shape));
    for (std::size_t i = 0; i < map->size(); ++i) out.data()[i] = a.data()[(*map)[i]];
    if (detail::track<T>({&a})) {
        detail::record(out, [a, out, map]() mutable {
            T* ga = a.grad().data();
            const T* g = out.grad().data();
            for (std::size_t i = 0; i < map->size(); ++i) ga[(*map)[i]] += g[i];
        });
    }
    return out;
}

// Inverse of a family of gathers that tile the destination: part i lands at
// maps[i]. Every destination index must be covered exactly once.
template <typename T>
TensorT<T> scatter_groups(const std::vector<TensorT<T>>& parts,
                          std::shared_ptr<const std::vector<std::vector<std::size_t>>> maps,
                          Shape out_shape) {
    TensorT<T> out = TensorT<T>::zeros(std::move(out_shape));
    bool needs_grad = false;
    for (std::size_t gidx = 0; gidx < parts.size(); ++gidx) {
        const auto& m = (*maps)[gidx];
        if (m.size() != parts[gidx].size()) throw std::invalid_argument("scatter: part/map mismatch");
        for (std::size_t i = 0; i < m.size(); ++i) out.data()[m[i]] = parts[gidx].data()[i];
        needs_grad = needs_grad || parts[gidx].requires_grad();
    }
    if (TapeT<T>::active() && needs_grad) {
        std::vector<TensorT<T>> held = parts;
        detail::record(out, [held, out, maps]() mutable {
            const T* g = out.grad().data();
            for (std::size_t gidx = 0; gidx < held.size(); ++gidx) {
                if (!held[gidx].requires_grad()) continue;
                T* gp = held[gidx].grad().data();
                const auto& m = (*maps)[gidx];
                for (std::size_t i = 0; i < m.size(); ++i) gp[i] += g[m[i]];
            }
        });
    }
    return out;
}

// Channel concatenation of two CxHxW maps.
template <typename T>
TensorT<T> concat_channels(TensorT<T> a, TensorT<T> b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.shape()[1] != b.shape()[1] || a.shape()[2] != b.shape()[2])
        throw std::invalid_argument("concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t ca = a.shape()[0], cb = b.shape()[0], hw = a.shape()[1] * a.shape()[2];
    TensorT<T> out = TensorT<T>::zeros({ca + cb, a.shape()[1], a.shape()[2]});
    std::copy(a.data(), a.data() + ca * hw, out.data());
    std::copy(b.data(), b.data() + cb * hw, out.data() + ca * hw);
    if (detail::track<T>({&a, &b})) {
        detail::record(out, [a, b, out, ca, cb, hw]() mutable {
            const T* g = out.grad().data();
            if (a.requires_grad()) {
                T* ga = a.grad().data();
                for (std::size_t i = 0; i < ca * hw; ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                T* gb = b.grad().data();
                for (std::size_t i = 0; i < cb * hw; ++i) gb[i] += g[ca * hw + i];
            }
        });
    }
    return out;
}

// --- reductions -------------------------------------------------------------

template <typename T>
TensorT<T> sum(TensorT<T> a) {
    T s = T(0);
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i];
    TensorT<T> out = TensorT<T>::scalar(s);
    if (detail::track<T>({&a})) {
        detail::record(out, [a, out]() mutable {
            T* ga = a.grad().data();
            const T g = out.grad()[0];
            for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g;
        });
    }
    return out;
}

// --- matmul -----------------------------------------------------------------

// [m x k] . [k x n]; backward dA = dC . B^T, dB = A^T . dC.
template <typename T>
TensorT<T> matmul(TensorT<T> a, TensorT<T> b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0])
        throw std::invalid_argument("matmul: " + shape_str(a.shape()) + " . " + shape_str(b.shape()));
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    TensorT<T> out = TensorT<T>::zeros({m, n});
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
            const T av = pa[i * k + l];
            if (av == T(0)) continue;
            const T* prow = pb + l * n;
            T* orow = po + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * prow[j];
        }
    if (detail::track<T>({&a, &b})) {
        detail::record(out, [a, b, out, m, k, n]() mutable {
            const T* g = out.grad().data();
            if (a.requires_grad()) {
                T* ga = a.grad().data();
                const T* pb = b.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t l = 0; l < k; ++l) {
                        T s = T(0);
                        for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * pb[l * n + j];
                        ga[i * k + l] += s;
                    }
            }
            if (b.requires_grad()) {
                T* gb = b.grad().data();
                const T* pa = a.data();
                for (std::size_t l = 0; l < k; ++l)
                    for (std::size_t i = 0; i < m; ++i) {
                        const T av = pa[i * k + l];
                        if (av == T(0)) continue;
                        for (std::size_t j = 0; j < n; ++j) gb[l * n + j] += av * g[i * n + j];
                    }
            }
        });
    }
    return out;
}

// --- softmax ----------------------------------------------------------------

// Max-subtracted softmax along `axis`.
template <typename T>
TensorT<T> softmax(TensorT<T> a, std::size_t axis) {
    if (axis >= a.ndim()) throw std::invalid_argument("softmax: axis out of range");
    const Shape& s = a.shape();
    std::size_t inner = 1, outer = 1;
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    const std::size_t len = s[axis];
    TensorT<T> out = TensorT<T>::zeros(s);
    const T* pa = a.data();
    T* po = out.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T mx = pa[base];
            for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, pa[base + i * inner]);
            T z = T(0);
            for (std::size_t i = 0; i < len; ++i) {
                T e = std::exp(pa[base + i * inner] - mx);
                po[base + i * inner] = e;
                z += e;
            }
            for (std::size_t i = 0; i < len; ++i) po[base + i * inner] /= z;
        }
    if (detail::track<T>({&a})) {
        detail::record(out, [a, out, outer, inner, len]() mutable {
            T* ga = a.grad().data();
            const T* g = out.grad().data();
            const T* y = out.data();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * len * inner + in;
                    T dot = T(0);
                    for (std::size_t i = 0; i < len; ++i) dot += g[base + i * inner] * y[base + i * inner];
                    for (std::size_t i = 0; i < len; ++i)
                        ga[base + i * inner] += y[base + i * inner] * (g[base + i * inner] - dot);
                }
        });
    }
    return out;
}

// --- conv2d -----------------------------------------------------------------

// Cross-correlation of x [Cin x H x W] with kernel [Cout x Cin x kh x kw],
// optional bias [Cout], zero padding. Odd kernel extents only.
template <typename T>
TensorT<T> conv2d(TensorT<T> x, TensorT<T> w, TensorT<T> bias, std::size_t stride, std::size_t pad) {
    if (x.ndim() != 3 || w.ndim() != 4) throw std::invalid_argument("conv2d: bad ranks");
    const std::size_t cin = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
    const std::size_t cout = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
    if (w.shape()[1] != cin) throw std::invalid_argument("conv2d: channel mismatch");
    if (kh % 2 == 0 || kw % 2 == 0) throw std::invalid_argument("conv2d: kernel extents must be odd");
    if (bias.defined() && (bias.ndim() != 1 || bias.shape()[0] != cout))
        throw std::invalid_argument("conv2d: bad bias shape");
    if (h + 2 * pad < kh || wd + 2 * pad < kw) throw std::invalid_argument("conv2d: non-positive output extent");
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::size_t ow = (wd + 2 * pad - kw) / stride + 1;

    TensorT<T> out = TensorT<T>::zeros({cout, oh, ow});
    const T* px = x.data();
    const T* pw = w.data();
    T* po = out.data();
    for (std::size_t co = 0; co < cout; ++co) {
        const T b = bias.defined() ? bias.data()[co] : T(0);
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                T acc = b;
                const std::ptrdiff_t y0 = std::ptrdiff_t(oy * stride) - std::ptrdiff_t(pad);
                const std::ptrdiff_t x0 = std::ptrdiff_t(ox * stride) - std::ptrdiff_t(pad);
                for (std::size_t ci = 0; ci < cin; ++ci)
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const std::ptrdiff_t iy = y0 + std::ptrdiff_t(ky);
                        if (iy < 0 || iy >= std::ptrdiff_t(h)) continue;
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const std::ptrdiff_t ix = x0 + std::ptrdiff_t(kx);
                            if (ix < 0 || ix >= std::ptrdiff_t(wd)) continue;
                            acc += px[(ci * h + std::size_t(iy)) * wd + std::size_t(ix)] *
                                   pw[((co * cin + ci) * kh + ky) * kw + kx];
                        }
                    }
                po[(co * oh + oy) * ow + ox] = acc;
            }
    }
    const bool needs = bias.defined() ? detail::track<T>({&x, &w, &bias}) : detail::track<T>({&x, &w});
    if (needs) {
        detail::record(out, [x, w, bias, out, cin, h, wd, cout, kh, kw, oh, ow, stride, pad]() mutable {
            const T* g = out.grad().data();
            T* gx = x.requires_grad() ? x.grad().data() : nullptr;
            T* gw = w.requires_grad() ? w.grad().data() : nullptr;
            T* gb = (bias.defined() && bias.requires_grad()) ? bias.grad().data() : nullptr;
            const T* px = x.data();
            const T* pw = w.data();
            for (std::size_t co = 0; co < cout; ++co)
                for (std::size_t oy = 0; oy < oh; ++oy)
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const T go = g[(co * oh + oy) * ow + ox];
                        if (go == T(0)) continue;
                        if (gb) gb[co] += go;
                        const std::ptrdiff_t y0 = std::ptrdiff_t(oy * stride) - std::ptrdiff_t(pad);
                        const std::ptrdiff_t x0 = std::ptrdiff_t(ox * stride) - std::ptrdiff_t(pad);
                        for (std::size_t ci = 0; ci < cin; ++ci)
                            for (std::size_t ky = 0; ky < kh; ++ky) {
                                const std::ptrdiff_t iy = y0 + std::ptrdiff_t(ky);
                                if (iy < 0 || iy >= std::ptrdiff_t(h)) continue;
                                for (std::size_t kx = 0; kx < kw; ++kx) {
                                    const std::ptrdiff_t ix = x0 + std::ptrdiff_t(kx);
                                    if (ix < 0 || ix >= std::ptrdiff_t(wd)) continue;
                                    const std::size_t xi = (ci * h + std::size_t(iy)) * wd + std::size_t(ix);
                                    const std::size_t wi = ((co * cin + ci) * kh + ky) * kw + kx;
                                    if (gx) gx[xi] += go * pw[wi];
                                    if (gw) gw[wi] += go * px[xi];
                                }
                            }
                    }
        });
    }
    return out;
}

// --- upsampling --------------------------------------------------------------

// Nearest-neighbor x2 on a CxHxW map.
template <typename T>
TensorT<T> upsample_nearest2(TensorT<T> x) {
    if (x.ndim() != 3) throw std::invalid_argument("upsample: expects 3-d");
    const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    TensorT<T> out = TensorT<T>::zeros({c, 2 * h, 2 * w});
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = 0; y < 2 * h; ++y)
            for (std::size_t xx = 0; xx < 2 * w; ++xx)
                out.data()[(ci * 2 * h + y) * 2 * w + xx] = x.data()[(ci * h + y / 2) * w + xx / 2];
    if (detail::track<T>({&x})) {
        detail::record(out, [x, out, c, h, w]() mutable {
            T* gx = x.grad().data();
            const T* g = out.grad().data();
            for (std::size_t ci = 0; ci < c; ++ci)
                for (std::size_t y = 0; y < 2 * h; ++y)
                    for (std::size_t xx = 0; xx < 2 * w; ++xx)
                        gx[(ci * h + y / 2) * w + xx / 2] += g[(ci * 2 * h + y) * 2 * w + xx];
        });
    }
    return out;
}

// --- gradient checking --------------------------------------------------------

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool pass = false;
};

// Central finite differences against tape gradients, one coordinate at a
// time. Meant for the 64-bit stack; f must rebuild the computation from the
// current values of `inputs` on every call.
// `denom_floor` bounds the relative-error denominator from below; raise it
// (with a larger eps) for deep graphs whose smallest true gradients sit near
// the cancellation noise of central differences.
inline GradCheckReport grad_check(const std::function<Tensor64()>& f,
                                  std::vector<Tensor64> inputs,
                                  double eps = 1e-5, double tolerance = 1e-4,
                                  double denom_floor = 1e-12) {
    std::vector<std::vector<double>> analytic;
    {
        for (auto& in : inputs) {
            in.set_requires_grad(true);
            in.zero_grad();
        }
        Tape64 tape;
        Tensor64 y = f();
        if (y.size() != 1) throw std::invalid_argument("grad_check: f must be scalar-valued");
        tape.backward(y);
        for (auto& in : inputs) analytic.push_back(in.grad());
    }
    GradCheckReport rep;
    NoGradT<double> off;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        Tensor64& in = inputs[t];
        for (std::size_t i = 0; i < in.size(); ++i) {
            const double saved = in.data()[i];
            in.data()[i] = saved + eps;
            const double fp = f().item();
            in.data()[i] = saved - eps;
            const double fm = f().item();
            in.data()[i] = saved;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[t][i];
            const double denom = std::max({std::fabs(a), std::fabs(numeric), denom_floor});
            rep.max_rel_err = std::max(rep.max_rel_err, std::fabs(a - numeric) / denom);
        }
    }
    rep.pass = rep.max_rel_err < tolerance;
    return rep;
}

}  // namespace masnet
