#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "absolutenet/gemm.hpp"
#include "absolutenet/rng.hpp"
#include "absolutenet/tape.hpp"
#include "absolutenet/tensor.hpp"

namespace absnet {

enum class Padding { valid, same };

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    require(same_shape(a.shape(), b.shape()), std::string(op) + ": shape mismatch " +
                                                  shape_str(a.shape()) + " vs " +
                                                  shape_str(b.shape()));
}

/// Leading extents folded into one: (..., F) -> (positions, F).
inline std::int64_t leading_positions(const Shape& s, int trailing) {
    std::int64_t n = 1;
    for (std::size_t i = 0; i + trailing < s.size(); ++i) n *= s[i];
    return n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise primitives
// ---------------------------------------------------------------------------

template <typename T>
Value<T> add(Value<T> a, Value<T> b) {
    detail::require_same_shape("add", a.tensor(), b.tensor());
    Tensor<T> out = a.tensor();
    const Tensor<T>& bt = b.tensor();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] += bt[i];
    return a.tape().record(std::move(out), {a.id(), b.id()},
                           [ia = a.id(), ib = b.id()](const Tensor<T>& g, Tape<T>& t) {
                               t.accumulate(ia, g);
                               t.accumulate(ib, g);
                           });
}

template <typename T>
Value<T> sub(Value<T> a, Value<T> b) {
    detail::require_same_shape("sub", a.tensor(), b.tensor());
    Tensor<T> out = a.tensor();
    const Tensor<T>& bt = b.tensor();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] -= bt[i];
    return a.tape().record(std::move(out), {a.id(), b.id()},
                           [ia = a.id(), ib = b.id()](const Tensor<T>& g, Tape<T>& t) {
                               t.accumulate(ia, g);
                               if (!t.requires_grad(ib)) return;
                               Tensor<T>& db = t.grad_buffer(ib);
                               for (std::int64_t i = 0; i < g.size(); ++i) db[i] -= g[i];
                           });
}

template <typename T>
Value<T> mul(Value<T> a, Value<T> b) {
    detail::require_same_shape("mul", a.tensor(), b.tensor());
    Tensor<T> out = a.tensor();
    const Tensor<T>& bt = b.tensor();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= bt[i];
    return a.tape().record(std::move(out), {a.id(), b.id()},
                           [ia = a.id(), ib = b.id()](const Tensor<T>& g, Tape<T>& t) {
                               if (t.requires_grad(ia)) {
                                   const Tensor<T>& bv = t.value(ib);
                                   Tensor<T>& da = t.grad_buffer(ia);
                                   for (std::int64_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
                               }
                               if (t.requires_grad(ib)) {
                                   const Tensor<T>& av = t.value(ia);
                                   Tensor<T>& db = t.grad_buffer(ib);
                                   for (std::int64_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
                               }
                           });
}

template <typename T>
Value<T> scalar_mul(Value<T> a, T c) {
    Tensor<T> out = a.tensor();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= c;
    return a.tape().record(std::move(out), {a.id()},
                           [ia = a.id(), c](const Tensor<T>& g, Tape<T>& t) {
                               Tensor<T>& da = t.grad_buffer(ia);
                               for (std::int64_t i = 0; i < g.size(); ++i) da[i] += c * g[i];
                           });
}

template <typename T>
Value<T> square(Value<T> a) {
    Tensor<T> out = a.tensor();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= out[i];
    return a.tape().record(std::move(out), {a.id()},
                           [ia = a.id()](const Tensor<T>& g, Tape<T>& t) {
                               const Tensor<T>& x = t.value(ia);
                               Tensor<T>& da = t.grad_buffer(ia);
                               for (std::int64_t i = 0; i < g.size(); ++i)
                                   da[i] += T{2} * x[i] * g[i];
                           });
}

/// |x|; subgradient at 0 is 0.
template <typename T>
Value<T> abs(Value<T> a) {
    Tensor<T> out = a.tensor();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = out[i] < T{} ? -out[i] : out[i];
    return a.tape().record(std::move(out), {a.id()},
                           [ia = a.id()](const Tensor<T>& g, Tape<T>& t) {
                               const Tensor<T>& x = t.value(ia);
                               Tensor<T>& da = t.grad_buffer(ia);
                               for (std::int64_t i = 0; i < g.size(); ++i) {
                                   const T s = x[i] > T{} ? T{1} : (x[i] < T{} ? T{-1} : T{});
                                   da[i] += s * g[i];
                               }
                           });
}

/// ln(|x| + eps); gradient sign(x) / (|x| + eps) with sign(0) = 0. The eps
/// guard keeps the log activation finite on silent inputs.
template <typename T>
Value<T> log_abs_eps(Value<T> a, T eps = T{1e-7}) {
    Tensor<T> out = a.tensor();
    for (std::int64_t i = 0; i < out.size(); ++i)
        out[i] = std::log((out[i] < T{} ? -out[i] : out[i]) + eps);
    return a.tape().record(std::move(out), {a.id()},
                           [ia = a.id(), eps](const Tensor<T>& g, Tape<T>& t) {
                               const Tensor<T>& x = t.value(ia);
                               Tensor<T>& da = t.grad_buffer(ia);
                               for (std::int64_t i = 0; i < g.size(); ++i) {
                                   const T ax = x[i] < T{} ? -x[i] : x[i];
                                   const T s = x[i] > T{} ? T{1} : (x[i] < T{} ? T{-1} : T{});
                                   da[i] += s / (ax + eps) * g[i];
                               }
                           });
}

template <typename T>
Value<T> exp(Value<T> a) {
    Tensor<T> out = a.tensor();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
    return a.tape().record(std::move(out), {a.id()},
                           [ia = a.id()](const Tensor<T>& g, Tape<T>& t) {
                               const Tensor<T>& x = t.value(ia);
                               Tensor<T>& da = t.grad_buffer(ia);
                               for (std::int64_t i = 0; i < g.size(); ++i)
                                   da[i] += std::exp(x[i]) * g[i];
                           });
}

/// ln(x); caller guarantees x > 0.
template <typename T>
Value<T> log(Value<T> a) {
    Tensor<T> out = a.tensor();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::log(out[i]);
    return a.tape().record(std::move(out), {a.id()},
                           [ia = a.id()](const Tensor<T>& g, Tape<T>& t) {
                               const Tensor<T>& x = t.value(ia);
                               Tensor<T>& da = t.grad_buffer(ia);
                               for (std::int64_t i = 0; i < g.size(); ++i) da[i] += g[i] / x[i];
                           });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Value<T> sum(Value<T> a) {
    T s{};
    const Tensor<T>& x = a.tensor();
    for (std::int64_t i = 0; i < x.size(); ++i) s += x[i];
    return a.tape().record(Tensor<T>::scalar(s), {a.id()},
                           [ia = a.id()](const Tensor<T>& g, Tape<T>& t) {
                               Tensor<T>& da = t.grad_buffer(ia);
                               for (std::int64_t i = 0; i < da.size(); ++i) da[i] += g[0];
                           });
}

template <typename T>
Value<T> mean(Value<T> a) {
    const Tensor<T>& x = a.tensor();
    T s{};
    for (std::int64_t i = 0; i < x.size(); ++i) s += x[i];
    const T n = static_cast<T>(x.size());
    return a.tape().record(Tensor<T>::scalar(s / n), {a.id()},
                           [ia = a.id(), n](const Tensor<T>& g, Tape<T>& t) {
                               Tensor<T>& da = t.grad_buffer(ia);
                               const T gi = g[0] / n;
                               for (std::int64_t i = 0; i < da.size(); ++i) da[i] += gi;
                           });
}

/// Population variance over all elements.
template <typename T>
Value<T> variance(Value<T> a) {
    const Tensor<T>& x = a.tensor();
    const T n = static_cast<T>(x.size());
    T mu{};
    for (std::int64_t i = 0; i < x.size(); ++i) mu += x[i];
    mu /= n;
    T var{};
    for (std::int64_t i = 0; i < x.size(); ++i) var += (x[i] - mu) * (x[i] - mu);
    var /= n;
    return a.tape().record(Tensor<T>::scalar(var), {a.id()},
                           [ia = a.id(), mu, n](const Tensor<T>& g, Tape<T>& t) {
                               const Tensor<T>& x = t.value(ia);
                               Tensor<T>& da = t.grad_buffer(ia);
                               const T k = T{2} / n * g[0];
                               for (std::int64_t i = 0; i < da.size(); ++i)
                                   da[i] += k * (x[i] - mu);
                           });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Value<T> reshape(Value<T> a, Shape shape) {
    Tensor<T> out = a.tensor().reshaped(std::move(shape));
    return a.tape().record(std::move(out), {a.id()},
                           [ia = a.id()](const Tensor<T>& g, Tape<T>& t) {
                               if (!t.requires_grad(ia)) return;
                               t.accumulate(ia, g.reshaped(t.value(ia).shape()));
                           });
}

/// General axis permutation; `perm[d]` names the source axis for output axis d.
template <typename T>
Value<T> transpose(Value<T> a, std::vector<std::int64_t> perm) {
    const Tensor<T>& x = a.tensor();
    const auto r = static_cast<std::size_t>(x.rank());
    detail::require(perm.size() == r, "transpose: permutation rank mismatch");
    std::vector<bool> seen(r, false);
    Shape out_shape(r);
    for (std::size_t d = 0; d < r; ++d) {
        detail::require(perm[d] >= 0 && perm[d] < static_cast<std::int64_t>(r) &&
                            !seen[static_cast<std::size_t>(perm[d])],
                        "transpose: invalid permutation");
        seen[static_cast<std::size_t>(perm[d])] = true;
        out_shape[d] = x.shape()[static_cast<std::size_t>(perm[d])];
    }

    auto permute = [](const Tensor<T>& src, const std::vector<std::int64_t>& p, Shape dst_shape) {
        const auto rk = static_cast<std::size_t>(src.rank());
        std::vector<std::int64_t> src_strides(rk, 1);
        for (std::size_t d = rk - 1; d > 0; --d)
            src_strides[d - 1] = src_strides[d] * src.shape()[d];
        Tensor<T> dst(std::move(dst_shape));
        std::vector<std::int64_t> idx(rk, 0);
        for (std::int64_t flat = 0; flat < dst.size(); ++flat) {
            std::int64_t src_flat = 0;
            for (std::size_t d = 0; d < rk; ++d)
                src_flat += idx[d] * src_strides[static_cast<std::size_t>(p[d])];
            dst[flat] = src[src_flat];
            for (std::size_t d = rk; d-- > 0;) {
                if (++idx[d] < dst.shape()[d]) break;
                idx[d] = 0;
            }
        }
        return dst;
    };

    Tensor<T> out = permute(x, perm, out_shape);
    std::vector<std::int64_t> inv(r);
    for (std::size_t d = 0; d < r; ++d) inv[static_cast<std::size_t>(perm[d])] = d;
    return a.tape().record(std::move(out), {a.id()},
                           [ia = a.id(), inv, permute](const Tensor<T>& g, Tape<T>& t) {
                               if (!t.requires_grad(ia)) return;
                               t.accumulate(ia, permute(g, inv, t.value(ia).shape()));
                           });
}

/// Concatenate two tensors along `axis`; all other extents must agree.
template <typename T>
Value<T> concat(Value<T> a, Value<T> b, std::int64_t axis) {
    const Tensor<T>& x = a.tensor();
    const Tensor<T>& y = b.tensor();
    detail::require(x.rank() == y.rank(), "concat: rank mismatch " + shape_str(x.shape()) +
                                              " vs " + shape_str(y.shape()));
    detail::require(axis >= 0 && axis < x.rank(),
                    "concat: axis " + std::to_string(axis) + " out of range for rank " +
                        std::to_string(x.rank()));
    for (std::int64_t d = 0; d < x.rank(); ++d)
        detail::require(d == axis || x.shape()[static_cast<std::size_t>(d)] ==
                                         y.shape()[static_cast<std::size_t>(d)],
                        "concat: non-concatenated extents differ, " + shape_str(x.shape()) +
                            " vs " + shape_str(y.shape()));

    Shape out_shape = x.shape();
    out_shape[static_cast<std::size_t>(axis)] += y.shape()[static_cast<std::size_t>(axis)];

    // Views as (outer, axis extent, inner).
    std::int64_t outer = 1, inner = 1;
    for (std::int64_t d = 0; d < axis; ++d) outer *= x.shape()[static_cast<std::size_t>(d)];
    for (std::int64_t d = axis + 1; d < x.rank(); ++d)
        inner *= x.shape()[static_cast<std::size_t>(d)];
    const std::int64_t ax = x.shape()[static_cast<std::size_t>(axis)];
    const std::int64_t ay = y.shape()[static_cast<std::size_t>(axis)];

    Tensor<T> out(out_shape);
    for (std::int64_t o = 0; o < outer; ++o) {
        T* dst = out.data() + o * (ax + ay) * inner;
        const T* sx = x.data() + o * ax * inner;
        const T* sy = y.data() + o * ay * inner;
        for (std::int64_t i = 0; i < ax * inner; ++i) dst[i] = sx[i];
        for (std::int64_t i = 0; i < ay * inner; ++i) dst[ax * inner + i] = sy[i];
    }
    return a.tape().record(
        std::move(out), {a.id(), b.id()},
        [ia = a.id(), ib = b.id(), outer, inner, ax, ay](const Tensor<T>& g, Tape<T>& t) {
            if (t.requires_grad(ia)) {
                Tensor<T>& da = t.grad_buffer(ia);
                for (std::int64_t o = 0; o < outer; ++o) {
                    const T* src = g.data() + o * (ax + ay) * inner;
                    T* dst = da.data() + o * ax * inner;
                    for (std::int64_t i = 0; i < ax * inner; ++i) dst[i] += src[i];
                }
            }
            if (t.requires_grad(ib)) {
                Tensor<T>& db = t.grad_buffer(ib);
                for (std::int64_t o = 0; o < outer; ++o) {
                    const T* src = g.data() + o * (ax + ay) * inner + ax * inner;
                    T* dst = db.data() + o * ay * inner;
                    for (std::int64_t i = 0; i < ay * inner; ++i) dst[i] += src[i];
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// (M,K) x (K,N) -> (M,N).
template <typename T>
Value<T> matmul(Value<T> a, Value<T> b) {
    const Tensor<T>& x = a.tensor();
    const Tensor<T>& w = b.tensor();
    detail::require(x.rank() == 2 && w.rank() == 2, "matmul: expects rank-2 operands, got " +
                                                        shape_str(x.shape()) + " and " +
                                                        shape_str(w.shape()));
    detail::require(x.extent(1) == w.extent(0), "matmul: inner extents differ, " +
                                                    shape_str(x.shape()) + " x " +
                                                    shape_str(w.shape()));
    const std::int64_t M = x.extent(0), K = x.extent(1), N = w.extent(1);
    Tensor<T> out({M, N});
    detail::gemm_nn(x.data(), w.data(), out.data(), M, K, N);
    return a.tape().record(std::move(out), {a.id(), b.id()},
                           [ia = a.id(), ib = b.id(), M, K, N](const Tensor<T>& g, Tape<T>& t) {
                               if (t.requires_grad(ia)) {
                                   Tensor<T>& da = t.grad_buffer(ia);
                                   detail::gemm_nt(g.data(), t.value(ib).data(), da.data(), M, N,
                                                   K, true);
                               }
                               if (t.requires_grad(ib)) {
                                   Tensor<T>& db = t.grad_buffer(ib);
                                   detail::gemm_tn(t.value(ia).data(), g.data(), db.data(), K, M,
                                                   N, true);
                               }
                           });
}

/// (..., K) x (K, N) -> (..., N); the leading axes are carried through. This
/// is both the pointwise (1x1) convolution and the dense layer's linear map.
template <typename T>
Value<T> last_axis_matmul(Value<T> a, Value<T> w) {
    const Tensor<T>& x = a.tensor();
    const Tensor<T>& wt = w.tensor();
    detail::require(wt.rank() == 2, "last_axis_matmul: weight must be rank 2, got " +
                                        shape_str(wt.shape()));
    detail::require(x.rank() >= 1 && x.shape().back() == wt.extent(0),
                    "last_axis_matmul: trailing extent of " + shape_str(x.shape()) +
                        " does not match weight " + shape_str(wt.shape()));
    const std::int64_t K = wt.extent(0), N = wt.extent(1);
    const std::int64_t M = x.size() / K;
    Shape out_shape = x.shape();
    out_shape.back() = N;
    Tensor<T> out(out_shape);
    detail::gemm_nn(x.data(), wt.data(), out.data(), M, K, N);
    return a.tape().record(std::move(out), {a.id(), w.id()},
                           [ia = a.id(), ib = w.id(), M, K, N](const Tensor<T>& g, Tape<T>& t) {
                               if (t.requires_grad(ia)) {
                                   Tensor<T>& da = t.grad_buffer(ia);
                                   detail::gemm_nt(g.data(), t.value(ib).data(), da.data(), M, N,
                                                   K, true);
                               }
                               if (t.requires_grad(ib)) {
                                   Tensor<T>& db = t.grad_buffer(ib);
                                   detail::gemm_tn(t.value(ia).data(), g.data(), db.data(), K, M,
                                                   N, true);
                               }
                           });
}

/// (..., F) + (F): broadcast add over the last axis (bias).
template <typename T>
Value<T> bias_add(Value<T> a, Value<T> b) {
    const Tensor<T>& x = a.tensor();
    const Tensor<T>& bias = b.tensor();
    detail::require(bias.rank() == 1 && x.rank() >= 1 && x.shape().back() == bias.extent(0),
                    "bias_add: bias " + shape_str(bias.shape()) + " does not match " +
                        shape_str(x.shape()));
    const std::int64_t F = bias.extent(0);
    const std::int64_t P = x.size() / F;
    Tensor<T> out = x;
    for (std::int64_t p = 0; p < P; ++p)
        for (std::int64_t f = 0; f < F; ++f) out[p * F + f] += bias[f];
    return a.tape().record(std::move(out), {a.id(), b.id()},
                           [ia = a.id(), ib = b.id(), P, F](const Tensor<T>& g, Tape<T>& t) {
                               t.accumulate(ia, g);
                               if (!t.requires_grad(ib)) return;
                               Tensor<T>& db = t.grad_buffer(ib);
                               for (std::int64_t p = 0; p < P; ++p)
                                   for (std::int64_t f = 0; f < F; ++f) db[f] += g[p * F + f];
                           });
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

namespace detail {

struct ConvGeom {
    std::int64_t batch, in_h, in_w, cin;   // input  (N, H, W, Cin)
    std::int64_t kh, kw, cout;             // kernel (kh, kw, Cin, Cout)
    std::int64_t out_h, out_w;             // output (N, OH, OW, Cout)
    std::int64_t pad_top, pad_left;
    bool batched;                          // false: rank-3 input, N == 1 implied
};

/// Shared shape logic for conv2d / depthwise. "same" pads zeros split evenly
/// with the extra element trailing.
inline ConvGeom conv_geometry(const char* op, const Shape& in, std::int64_t kh, std::int64_t kw,
                              std::int64_t kcin, std::int64_t cout, Padding padding) {
    ConvGeom geo{};
    geo.batched = in.size() == 4;
    require(in.size() == 3 || in.size() == 4,
            std::string(op) + ": input must be (ch, t, C) or (N, ch, t, C), got " + shape_str(in));
    const std::size_t off = geo.batched ? 1 : 0;
    geo.batch = geo.batched ? in[0] : 1;
    geo.in_h = in[off + 0];
    geo.in_w = in[off + 1];
    geo.cin = in[off + 2];
    geo.kh = kh;
    geo.kw = kw;
    geo.cout = cout;
    require(geo.cin == kcin, std::string(op) + ": input feature count " +
                                 std::to_string(geo.cin) + " does not match kernel " +
                                 std::to_string(kcin));
    if (padding == Padding::valid) {
        require(kh <= geo.in_h && kw <= geo.in_w,
                std::string(op) + ": kernel (" + std::to_string(kh) + ", " + std::to_string(kw) +
                    ") exceeds input " + shape_str(in) + " under valid padding");
        geo.out_h = geo.in_h - kh + 1;
        geo.out_w = geo.in_w - kw + 1;
        geo.pad_top = 0;
        geo.pad_left = 0;
    } else {
        geo.out_h = geo.in_h;
        geo.out_w = geo.in_w;
        geo.pad_top = (kh - 1) / 2;
        geo.pad_left = (kw - 1) / 2;
    }
    return geo;
}

inline Shape conv_out_shape(const ConvGeom& g, std::int64_t feat) {
    return g.batched ? Shape{g.batch, g.out_h, g.out_w, feat} : Shape{g.out_h, g.out_w, feat};
}

/// Gather padded input patches into a (N*OH*OW, kh*kw*Cin) matrix.
template <typename T>
Tensor<T> im2col(const Tensor<T>& x, const ConvGeom& g) {
    const std::int64_t cols = g.kh * g.kw * g.cin;
    Tensor<T> col({g.batch * g.out_h * g.out_w, cols});
    T* dst = col.data();
    const T* src = x.data();
    for (std::int64_t n = 0; n < g.batch; ++n) {
        const T* xn = src + n * g.in_h * g.in_w * g.cin;
        for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
            for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
                for (std::int64_t m = 0; m < g.kh; ++m) {
                    const std::int64_t h = oh + m - g.pad_top;
                    for (std::int64_t kn = 0; kn < g.kw; ++kn) {
                        const std::int64_t w = ow + kn - g.pad_left;
                        if (h < 0 || h >= g.in_h || w < 0 || w >= g.in_w) {
                            for (std::int64_t c = 0; c < g.cin; ++c) *dst++ = T{};
                        } else {
                            const T* p = xn + (h * g.in_w + w) * g.cin;
                            for (std::int64_t c = 0; c < g.cin; ++c) *dst++ = p[c];
                        }
                    }
                }
            }
        }
    }
    return col;
}

/// Scatter-add of a column-gradient matrix back onto the input layout.
template <typename T>
void col2im_add(const Tensor<T>& dcol, const ConvGeom& g, Tensor<T>& dx) {
    const T* src = dcol.data();
    for (std::int64_t n = 0; n < g.batch; ++n) {
        T* xn = dx.data() + n * g.in_h * g.in_w * g.cin;
        for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
            for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
                for (std::int64_t m = 0; m < g.kh; ++m) {
                    const std::int64_t h = oh + m - g.pad_top;
                    for (std::int64_t kn = 0; kn < g.kw; ++kn) {
                        const std::int64_t w = ow + kn - g.pad_left;
                        if (h < 0 || h >= g.in_h || w < 0 || w >= g.in_w) {
                            src += g.cin;
                        } else {
                            T* p = xn + (h * g.in_w + w) * g.cin;
                            for (std::int64_t c = 0; c < g.cin; ++c) p[c] += *src++;
                        }
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// 2D convolution, no bias. Input (ch, t, C_in) or (N, ch, t, C_in); kernel
/// (k_ch, k_t, C_in, C_out). Runs as im2col plus one GEMM.
template <typename T>
Value<T> conv2d(Value<T> input, Value<T> kernel, Padding padding) {
    const Tensor<T>& x = input.tensor();
    const Tensor<T>& k = kernel.tensor();
    detail::require(k.rank() == 4, "conv2d: kernel must be (k_ch, k_t, C_in, C_out), got " +
                                       shape_str(k.shape()));
    const auto geo = detail::conv_geometry("conv2d", x.shape(), k.extent(0), k.extent(1),
                                           k.extent(2), k.extent(3), padding);

    Tensor<T> col = detail::im2col(x, geo);
    const std::int64_t rows = geo.batch * geo.out_h * geo.out_w;
    const std::int64_t cols = geo.kh * geo.kw * geo.cin;
    Tensor<T> out(detail::conv_out_shape(geo, geo.cout));
    detail::gemm_nn(col.data(), k.data(), out.data(), rows, cols, geo.cout);

    return input.tape().record(
        std::move(out), {input.id(), kernel.id()},
        [ix = input.id(), ik = kernel.id(), geo, rows, cols,
         col = std::move(col)](const Tensor<T>& g, Tape<T>& t) {
            if (t.requires_grad(ik)) {
                Tensor<T>& dk = t.grad_buffer(ik);
                detail::gemm_tn(col.data(), g.data(), dk.data(), cols, rows, geo.cout, true);
            }
            if (t.requires_grad(ix)) {
                Tensor<T> dcol({rows, cols});
                detail::gemm_nt(g.data(), t.value(ik).data(), dcol.data(), rows, geo.cout, cols);
                detail::col2im_add(dcol, geo, t.grad_buffer(ix));
            }
        });
}

/// Depthwise 2D convolution: one (k_ch, k_t) kernel per input feature layer.
/// Kernel shape (k_ch, k_t, C); output feature count equals C.
template <typename T>
Value<T> depthwise_conv2d(Value<T> input, Value<T> kernel, Padding padding) {
    const Tensor<T>& x = input.tensor();
    const Tensor<T>& k = kernel.tensor();
    detail::require(k.rank() == 3, "depthwise_conv2d: kernel must be (k_ch, k_t, C), got " +
                                       shape_str(k.shape()));
    const auto geo = detail::conv_geometry("depthwise_conv2d", x.shape(), k.extent(0),
                                           k.extent(1), k.extent(2), k.extent(2), padding);

    Tensor<T> out(detail::conv_out_shape(geo, geo.cin));
    const std::int64_t C = geo.cin;
    for (std::int64_t n = 0; n < geo.batch; ++n) {
        const T* xn = x.data() + n * geo.in_h * geo.in_w * C;
        T* yn = out.data() + n * geo.out_h * geo.out_w * C;
        for (std::int64_t oh = 0; oh < geo.out_h; ++oh)
            for (std::int64_t ow = 0; ow < geo.out_w; ++ow) {
                T* y = yn + (oh * geo.out_w + ow) * C;
                for (std::int64_t m = 0; m < geo.kh; ++m) {
                    const std::int64_t h = oh + m - geo.pad_top;
                    if (h < 0 || h >= geo.in_h) continue;
                    for (std::int64_t kn = 0; kn < geo.kw; ++kn) {
                        const std::int64_t w = ow + kn - geo.pad_left;
                        if (w < 0 || w >= geo.in_w) continue;
                        const T* xp = xn + (h * geo.in_w + w) * C;
                        const T* kp = k.data() + (m * geo.kw + kn) * C;
                        for (std::int64_t c = 0; c < C; ++c) y[c] += xp[c] * kp[c];
                    }
                }
            }
    }

    return input.tape().record(
        std::move(out), {input.id(), kernel.id()},
        [ix = input.id(), ik = kernel.id(), geo](const Tensor<T>& g, Tape<T>& t) {
            const std::int64_t C = geo.cin;
            const Tensor<T>& x = t.value(ix);
            const Tensor<T>& k = t.value(ik);
            const bool need_dx = t.requires_grad(ix);
            const bool need_dk = t.requires_grad(ik);
            Tensor<T>* dx = need_dx ? &t.grad_buffer(ix) : nullptr;
            Tensor<T>* dk = need_dk ? &t.grad_buffer(ik) : nullptr;
            for (std::int64_t n = 0; n < geo.batch; ++n) {
                const std::int64_t xoff = n * geo.in_h * geo.in_w * C;
                const T* gn = g.data() + n * geo.out_h * geo.out_w * C;
                for (std::int64_t oh = 0; oh < geo.out_h; ++oh)
                    for (std::int64_t ow = 0; ow < geo.out_w; ++ow) {
                        const T* gp = gn + (oh * geo.out_w + ow) * C;
                        for (std::int64_t m = 0; m < geo.kh; ++m) {
                            const std::int64_t h = oh + m - geo.pad_top;
                            if (h < 0 || h >= geo.in_h) continue;
                            for (std::int64_t kn = 0; kn < geo.kw; ++kn) {
                                const std::int64_t w = ow + kn - geo.pad_left;
                                if (w < 0 || w >= geo.in_w) continue;
                                const std::int64_t xi = xoff + (h * geo.in_w + w) * C;
                                const std::int64_t ki = (m * geo.kw + kn) * C;
                                if (need_dk)
                                    for (std::int64_t c = 0; c < C; ++c)
                                        (*dk)[ki + c] += x[xi + c] * gp[c];
                                if (need_dx)
                                    for (std::int64_t c = 0; c < C; ++c)
                                        (*dx)[xi + c] += k[ki + c] * gp[c];
                            }
                        }
                    }
            }
        });
}

/// Depthwise followed by pointwise (1x1) feature mixing. Parameter count is
/// k_ch*k_t*C_in + C_in*C_out, no bias.
template <typename T>
Value<T> separable_conv2d(Value<T> input, Value<T> depthwise, Value<T> pointwise,
                          Padding padding) {
    detail::require(pointwise.tensor().rank() == 2,
                    "separable_conv2d: pointwise weights must be (C_in, C_out), got " +
                        shape_str(pointwise.tensor().shape()));
    Value<T> mid = depthwise_conv2d(input, depthwise, padding);
    return last_axis_matmul(mid, pointwise);
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

/// Average pooling along the temporal axis (next-to-last), window P stride S,
/// no padding: (..., t, F) -> (..., floor((t-P)/S)+1, F).
template <typename T>
Value<T> avg_pool(Value<T> input, std::int64_t pool, std::int64_t stride) {
    const Tensor<T>& x = input.tensor();
    detail::require(x.rank() >= 2, "avg_pool: input rank must be >= 2, got " +
                                       shape_str(x.shape()));
    detail::require(pool >= 1 && stride >= 1, "avg_pool: pool and stride must be positive");
    const std::int64_t F = x.shape().back();
    const std::int64_t tlen = x.shape()[static_cast<std::size_t>(x.rank() - 2)];
    detail::require(pool <= tlen, "avg_pool: window " + std::to_string(pool) +
                                      " exceeds temporal extent " + std::to_string(tlen));
    const std::int64_t out_t = (tlen - pool) / stride + 1;
    const std::int64_t lead = x.size() / (tlen * F);

    Shape out_shape = x.shape();
    out_shape[static_cast<std::size_t>(x.rank() - 2)] = out_t;
    Tensor<T> out(out_shape);
    const T inv = T{1} / static_cast<T>(pool);
    for (std::int64_t l = 0; l < lead; ++l) {
        const T* xl = x.data() + l * tlen * F;
        T* yl = out.data() + l * out_t * F;
        for (std::int64_t ot = 0; ot < out_t; ++ot) {
            T* y = yl + ot * F;
            for (std::int64_t j = 0; j < pool; ++j) {
                const T* xp = xl + (ot * stride + j) * F;
                for (std::int64_t f = 0; f < F; ++f) y[f] += xp[f];
            }
            for (std::int64_t f = 0; f < F; ++f) y[f] *= inv;
        }
    }
    return input.tape().record(std::move(out), {input.id()},
                               [ix = input.id(), pool, stride, out_t, tlen, F,
                                lead](const Tensor<T>& g, Tape<T>& t) {
                                   if (!t.requires_grad(ix)) return;
                                   Tensor<T>& dx = t.grad_buffer(ix);
                                   const T inv = T{1} / static_cast<T>(pool);
                                   for (std::int64_t l = 0; l < lead; ++l) {
                                       T* dxl = dx.data() + l * tlen * F;
                                       const T* gl = g.data() + l * out_t * F;
                                       for (std::int64_t ot = 0; ot < out_t; ++ot) {
                                           const T* gp = gl + ot * F;
                                           for (std::int64_t j = 0; j < pool; ++j) {
                                               T* dp = dxl + (ot * stride + j) * F;
                                               for (std::int64_t f = 0; f < F; ++f)
                                                   dp[f] += gp[f] * inv;
                                           }
                                       }
                                   }
                               });
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Layer normalization over the final (feature) axis only; 2F parameters.
template <typename T>
Value<T> layer_norm(Value<T> input, Value<T> gamma, Value<T> beta, T eps = T{1e-5}) {
    const Tensor<T>& x = input.tensor();
    const Tensor<T>& gm = gamma.tensor();
    const Tensor<T>& bt = beta.tensor();
    const std::int64_t F = x.shape().back();
    detail::require(gm.rank() == 1 && gm.extent(0) == F && bt.rank() == 1 && bt.extent(0) == F,
                    "layer_norm: gamma/beta must be (" + std::to_string(F) + ",), got " +
                        shape_str(gm.shape()) + " and " + shape_str(bt.shape()));
    const std::int64_t P = x.size() / F;

    Tensor<T> xhat(x.shape());
    std::vector<T> inv_std(static_cast<std::size_t>(P));
    Tensor<T> out(x.shape());
    for (std::int64_t p = 0; p < P; ++p) {
        const T* xp = x.data() + p * F;
        T mu{};
        for (std::int64_t f = 0; f < F; ++f) mu += xp[f];
        mu /= static_cast<T>(F);
        T var{};
        for (std::int64_t f = 0; f < F; ++f) var += (xp[f] - mu) * (xp[f] - mu);
        var /= static_cast<T>(F);
        const T is = T{1} / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(p)] = is;
        T* xh = xhat.data() + p * F;
        T* y = out.data() + p * F;
        for (std::int64_t f = 0; f < F; ++f) {
            xh[f] = (xp[f] - mu) * is;
            y[f] = gm[f] * xh[f] + bt[f];
        }
    }

    return input.tape().record(
        std::move(out), {input.id(), gamma.id(), beta.id()},
        [ix = input.id(), ig = gamma.id(), ib = beta.id(), P, F, xhat = std::move(xhat),
         inv_std = std::move(inv_std)](const Tensor<T>& g, Tape<T>& t) {
            const Tensor<T>& gm = t.value(ig);
            if (t.requires_grad(ig)) {
                Tensor<T>& dg = t.grad_buffer(ig);
                for (std::int64_t p = 0; p < P; ++p)
                    for (std::int64_t f = 0; f < F; ++f)
                        dg[f] += g[p * F + f] * xhat[p * F + f];
            }
            if (t.requires_grad(ib)) {
                Tensor<T>& db = t.grad_buffer(ib);
                for (std::int64_t p = 0; p < P; ++p)
                    for (std::int64_t f = 0; f < F; ++f) db[f] += g[p * F + f];
            }
            if (t.requires_grad(ix)) {
                Tensor<T>& dx = t.grad_buffer(ix);
                const T invF = T{1} / static_cast<T>(F);
                for (std::int64_t p = 0; p < P; ++p) {
                    T mean_dxh{}, mean_dxh_xh{};
                    for (std::int64_t f = 0; f < F; ++f) {
                        const T dxh = g[p * F + f] * gm[f];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xhat[p * F + f];
                    }
                    mean_dxh *= invF;
                    mean_dxh_xh *= invF;
                    const T is = inv_std[static_cast<std::size_t>(p)];
                    for (std::int64_t f = 0; f < F; ++f) {
                        const T dxh = g[p * F + f] * gm[f];
                        dx[p * F + f] += is * (dxh - mean_dxh - xhat[p * F + f] * mean_dxh_xh);
                    }
                }
            }
        });
}

/// Batch normalization, training path: normalizes each feature over every
/// other axis with batch statistics (population variance) and reports those
/// statistics so the layer can update its moving averages.
template <typename T>
Value<T> batch_norm_train(Value<T> input, Value<T> gamma, Value<T> beta, T eps,
                          Tensor<T>* batch_mean_out, Tensor<T>* batch_var_out) {
    const Tensor<T>& x = input.tensor();
    const std::int64_t F = x.shape().back();
    const Tensor<T>& gm = gamma.tensor();
    const Tensor<T>& bt = beta.tensor();
    detail::require(gm.rank() == 1 && gm.extent(0) == F && bt.rank() == 1 && bt.extent(0) == F,
                    "batch_norm: gamma/beta must be (" + std::to_string(F) + ",)");
    const std::int64_t P = x.size() / F;
    detail::require(P >= 2, "batch_norm: needs at least 2 positions per feature in train mode");

    Tensor<T> mean({F});
    Tensor<T> var({F});
    for (std::int64_t p = 0; p < P; ++p)
        for (std::int64_t f = 0; f < F; ++f) mean[f] += x[p * F + f];
    for (std::int64_t f = 0; f < F; ++f) mean[f] /= static_cast<T>(P);
    for (std::int64_t p = 0; p < P; ++p)
        for (std::int64_t f = 0; f < F; ++f) {
            const T d = x[p * F + f] - mean[f];
            var[f] += d * d;
        }
    for (std::int64_t f = 0; f < F; ++f) var[f] /= static_cast<T>(P);

    Tensor<T> xhat(x.shape());
    std::vector<T> inv_std(static_cast<std::size_t>(F));
    for (std::int64_t f = 0; f < F; ++f)
        inv_std[static_cast<std::size_t>(f)] = T{1} / std::sqrt(var[f] + eps);
    Tensor<T> out(x.shape());
    for (std::int64_t p = 0; p < P; ++p)
        for (std::int64_t f = 0; f < F; ++f) {
            const T xh = (x[p * F + f] - mean[f]) * inv_std[static_cast<std::size_t>(f)];
            xhat[p * F + f] = xh;
            out[p * F + f] = gm[f] * xh + bt[f];
        }
    if (batch_mean_out) *batch_mean_out = mean;
    if (batch_var_out) *batch_var_out = var;

    return input.tape().record(
        std::move(out), {input.id(), gamma.id(), beta.id()},
        [ix = input.id(), ig = gamma.id(), ib = beta.id(), P, F, xhat = std::move(xhat),
         inv_std = std::move(inv_std)](const Tensor<T>& g, Tape<T>& t) {
            const Tensor<T>& gm = t.value(ig);
            if (t.requires_grad(ig)) {
                Tensor<T>& dg = t.grad_buffer(ig);
                for (std::int64_t p = 0; p < P; ++p)
                    for (std::int64_t f = 0; f < F; ++f)
                        dg[f] += g[p * F + f] * xhat[p * F + f];
            }
            if (t.requires_grad(ib)) {
                Tensor<T>& db = t.grad_buffer(ib);
                for (std::int64_t p = 0; p < P; ++p)
                    for (std::int64_t f = 0; f < F; ++f) db[f] += g[p * F + f];
            }
            if (t.requires_grad(ix)) {
                Tensor<T>& dx = t.grad_buffer(ix);
                std::vector<T> mean_dxh(static_cast<std::size_t>(F), T{});
                std::vector<T> mean_dxh_xh(static_cast<std::size_t>(F), T{});
                for (std::int64_t p = 0; p < P; ++p)
                    for (std::int64_t f = 0; f < F; ++f) {
                        const T dxh = g[p * F + f] * gm[f];
                        mean_dxh[static_cast<std::size_t>(f)] += dxh;
                        mean_dxh_xh[static_cast<std::size_t>(f)] += dxh * xhat[p * F + f];
                    }
                const T invP = T{1} / static_cast<T>(P);
                for (std::int64_t f = 0; f < F; ++f) {
                    mean_dxh[static_cast<std::size_t>(f)] *= invP;
                    mean_dxh_xh[static_cast<std::size_t>(f)] *= invP;
                }
                for (std::int64_t p = 0; p < P; ++p)
                    for (std::int64_t f = 0; f < F; ++f) {
                        const T dxh = g[p * F + f] * gm[f];
                        dx[p * F + f] +=
                            inv_std[static_cast<std::size_t>(f)] *
                            (dxh - mean_dxh[static_cast<std::size_t>(f)] -
                             xhat[p * F + f] * mean_dxh_xh[static_cast<std::size_t>(f)]);
                    }
            }
        });
}

/// Batch normalization, inference path: a fixed affine map built from the
/// moving statistics.
template <typename T>
Value<T> batch_norm_infer(Value<T> input, Value<T> gamma, Value<T> beta,
                          const Tensor<T>& moving_mean, const Tensor<T>& moving_var, T eps) {
    const Tensor<T>& x = input.tensor();
    const std::int64_t F = x.shape().back();
    detail::require(moving_mean.size() == F && moving_var.size() == F,
                    "batch_norm: moving statistics must have " + std::to_string(F) + " entries");
    const Tensor<T>& gm = gamma.tensor();
    const Tensor<T>& bt = beta.tensor();
    const std::int64_t P = x.size() / F;

    std::vector<T> inv_std(static_cast<std::size_t>(F));
    for (std::int64_t f = 0; f < F; ++f)
        inv_std[static_cast<std::size_t>(f)] = T{1} / std::sqrt(moving_var[f] + eps);
    Tensor<T> out(x.shape());
    for (std::int64_t p = 0; p < P; ++p)
        for (std::int64_t f = 0; f < F; ++f)
            out[p * F + f] = (x[p * F + f] - moving_mean[f]) *
                                 inv_std[static_cast<std::size_t>(f)] * gm[f] +
                             bt[f];

    return input.tape().record(
        std::move(out), {input.id(), gamma.id(), beta.id()},
        [ix = input.id(), ig = gamma.id(), ib = beta.id(), P, F, mean = moving_mean,
         inv_std = std::move(inv_std)](const Tensor<T>& g, Tape<T>& t) {
            const Tensor<T>& gm = t.value(ig);
            const Tensor<T>& x = t.value(ix);
            if (t.requires_grad(ix)) {
                Tensor<T>& dx = t.grad_buffer(ix);
                for (std::int64_t p = 0; p < P; ++p)
                    for (std::int64_t f = 0; f < F; ++f)
                        dx[p * F + f] +=
                            g[p * F + f] * gm[f] * inv_std[static_cast<std::size_t>(f)];
            }
            if (t.requires_grad(ig)) {
                Tensor<T>& dg = t.grad_buffer(ig);
                for (std::int64_t p = 0; p < P; ++p)
                    for (std::int64_t f = 0; f < F; ++f)
                        dg[f] += g[p * F + f] * (x[p * F + f] - mean[f]) *
                                 inv_std[static_cast<std::size_t>(f)];
            }
            if (t.requires_grad(ib)) {
                Tensor<T>& db = t.grad_buffer(ib);
                for (std::int64_t p = 0; p < P; ++p)
                    for (std::int64_t f = 0; f < F; ++f) db[f] += g[p * F + f];
            }
        });
}

// ---------------------------------------------------------------------------
// Dropout / softmax / loss
// ---------------------------------------------------------------------------

/// Inverted dropout: zero with probability `rate`, scale survivors by
/// 1/(1-rate). The mask is drawn at record time, so replaying the tape reuses
/// it. Inference mode is handled by not recording this op at all.
template <typename T>
Value<T> dropout(Value<T> input, double rate, Rng& rng) {
    detail::require(rate >= 0.0 && rate < 1.0,
                    "dropout: rate must be in [0, 1), got " + std::to_string(rate));
    const Tensor<T>& x = input.tensor();
    if (rate == 0.0) return input;
    Tensor<T> mask(x.shape());
    const T scale = static_cast<T>(1.0 / (1.0 - rate));
    for (std::int64_t i = 0; i < mask.size(); ++i)
        mask[i] = rng.uniform() < rate ? T{} : scale;
    Tensor<T> out(x.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
    return input.tape().record(std::move(out), {input.id()},
                               [ix = input.id(), mask = std::move(mask)](const Tensor<T>& g,
                                                                         Tape<T>& t) {
                                   if (!t.requires_grad(ix)) return;
                                   Tensor<T>& dx = t.grad_buffer(ix);
                                   for (std::int64_t i = 0; i < g.size(); ++i)
                                       dx[i] += g[i] * mask[i];
                               });
}

/// Softmax along the last axis, stabilized by max subtraction.
template <typename T>
Value<T> softmax(Value<T> input) {
    const Tensor<T>& x = input.tensor();
    const std::int64_t K = x.shape().back();
    const std::int64_t R = x.size() / K;
    Tensor<T> out(x.shape());
    for (std::int64_t r = 0; r < R; ++r) {
        const T* xr = x.data() + r * K;
        T* yr = out.data() + r * K;
        T mx = xr[0];
        for (std::int64_t k = 1; k < K; ++k) mx = xr[k] > mx ? xr[k] : mx;
        T denom{};
        for (std::int64_t k = 0; k < K; ++k) {
            yr[k] = std::exp(xr[k] - mx);
            denom += yr[k];
        }
        for (std::int64_t k = 0; k < K; ++k) yr[k] /= denom;
    }
    Tensor<T> saved = out;
    return input.tape().record(
        std::move(out), {input.id()},
        [ix = input.id(), K, R, y = std::move(saved)](const Tensor<T>& g, Tape<T>& t) {
            if (!t.requires_grad(ix)) return;
            Tensor<T>& dx = t.grad_buffer(ix);
            for (std::int64_t r = 0; r < R; ++r) {
                const T* gr = g.data() + r * K;
                const T* yr = y.data() + r * K;
                T dot{};
                for (std::int64_t k = 0; k < K; ++k) dot += gr[k] * yr[k];
                T* dr = dx.data() + r * K;
                for (std::int64_t k = 0; k < K; ++k) dr[k] += yr[k] * (gr[k] - dot);
            }
        });
}

/// Mean cross-entropy from pre-softmax scores via log-sum-exp; labels index
/// the true class per row.
template <typename T>
Value<T> cross_entropy_logits(Value<T> logits, std::span<const int> labels) {
    const Tensor<T>& z = logits.tensor();
    detail::require(z.rank() == 2, "cross_entropy: logits must be (N, K), got " +
                                       shape_str(z.shape()));
    const std::int64_t N = z.extent(0), K = z.extent(1);
    detail::require(static_cast<std::int64_t>(labels.size()) == N,
                    "cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(N) + " rows");
    Tensor<T> probs({N, K});
    T loss{};
    for (std::int64_t i = 0; i < N; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        detail::require(y >= 0 && y < K, "cross_entropy: label " + std::to_string(y) +
                                             " out of range [0, " + std::to_string(K) + ")");
        const T* zi = z.data() + i * K;
        T mx = zi[0];
        for (std::int64_t k = 1; k < K; ++k) mx = zi[k] > mx ? zi[k] : mx;
        T denom{};
        T* pi = probs.data() + i * K;
        for (std::int64_t k = 0; k < K; ++k) {
            pi[k] = std::exp(zi[k] - mx);
            denom += pi[k];
        }
        for (std::int64_t k = 0; k < K; ++k) pi[k] /= denom;
        loss += mx + std::log(denom) - zi[y];
    }
    loss /= static_cast<T>(N);
    std::vector<int> ylab(labels.begin(), labels.end());
    return logits.tape().record(
        Tensor<T>::scalar(loss), {logits.id()},
        [iz = logits.id(), N, K, probs = std::move(probs),
         ylab = std::move(ylab)](const Tensor<T>& g, Tape<T>& t) {
            if (!t.requires_grad(iz)) return;
            Tensor<T>& dz = t.grad_buffer(iz);
            const T s = g[0] / static_cast<T>(N);
            for (std::int64_t i = 0; i < N; ++i)
                for (std::int64_t k = 0; k < K; ++k) {
                    const T onehot = (k == ylab[static_cast<std::size_t>(i)]) ? T{1} : T{};
                    dz[i * K + k] += s * (probs[i * K + k] - onehot);
                }
        });
}

}  // namespace absnet
