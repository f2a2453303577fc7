#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "voxgan/tensor.hpp"

/// Differentiable operations. Every op takes the tape first; outputs are recorded only when
/// some input is on the tape.
namespace voxgan::op {

namespace detail {

/// Numpy-style right-aligned broadcast of two operands.
struct BroadcastPlan {
    Shape out;
    std::vector<std::size_t> sa, sb;  // per-output-axis strides into a / b, 0 when broadcast
};

inline std::vector<std::size_t> row_major_strides(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

inline std::vector<std::size_t> aligned_strides(const Shape& src, const Shape& out) {
    const auto src_st = row_major_strides(src);
    std::vector<std::size_t> st(out.size(), 0);
    const std::size_t off = out.size() - src.size();
    for (std::size_t j = 0; j < src.size(); ++j)
        st[off + j] = (src[j] == 1 && out[off + j] != 1) ? 0 : src_st[j];
    return st;
}

inline BroadcastPlan broadcast_plan(const Shape& a, const Shape& b, const std::string& op) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i + a.size() >= r ? a[i + a.size() - r] : 1;
        const std::size_t db = i + b.size() >= r ? b[i + b.size() - r] : 1;
        if (da != db && da != 1 && db != 1) throw ShapeError(op, a, b);
        out[i] = std::max(da, db);
    }
    return {out, aligned_strides(a, out), aligned_strides(b, out)};
}

/// Calls f(out_index, a_index, b_index) over the broadcast output in row-major order.
template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
    const std::size_t n = shape_numel(p.out);
    const std::size_t r = p.out.size();
    if (r == 0) {
        f(std::size_t{0}, std::size_t{0}, std::size_t{0});
        return;
    }
    std::vector<std::size_t> idx(r, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t io = 0; io < n; ++io) {
        f(io, ia, ib);
        for (std::size_t ax = r; ax-- > 0;) {
            ++idx[ax];
            ia += p.sa[ax];
            ib += p.sb[ax];
            if (idx[ax] < p.out[ax]) break;
            ia -= p.sa[ax] * idx[ax];
            ib -= p.sb[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

template <class Fwd, class Dx>
Tensor unary(Tape& tape, const Tensor& x, Fwd fwd, Dx dydx) {
    std::vector<double> out(x.numel());
    const auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xd[i]);
    Tensor y(x.shape(), std::move(out));
    Tensor xs = x.detached(), ys = y.detached();
    return tape.record(y, {&x}, [xs, ys, dydx](const Tensor& g, const std::vector<bool>&) {
        std::vector<double> gx(xs.numel());
        const auto gd = g.data(), xd = xs.data(), yd = ys.data();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = gd[i] * dydx(xd[i], yd[i]);
        return std::vector<Tensor>{Tensor(xs.shape(), std::move(gx))};
    });
}

struct ConvGeom {
    std::size_t n = 0, cin = 0, cout = 0;
    std::array<std::size_t, 3> in{1, 1, 1}, out{1, 1, 1}, k{1, 1, 1}, s{1, 1, 1};
    std::array<std::ptrdiff_t, 3> p{0, 0, 0};

    std::size_t in_vol() const { return in[0] * in[1] * in[2]; }
    std::size_t out_vol() const { return out[0] * out[1] * out[2]; }
    std::size_t k_vol() const { return k[0] * k[1] * k[2]; }
};

/// Enumerates (input, weight, output) flat-index triples of a direct convolution.
template <class F>
void conv_visit(const ConvGeom& g, F&& f) {
    const std::size_t iv = g.in_vol(), kv = g.k_vol();
    std::size_t yi = 0;
    for (std::size_t n = 0; n < g.n; ++n)
        for (std::size_t co = 0; co < g.cout; ++co)
            for (std::size_t o0 = 0; o0 < g.out[0]; ++o0)
                for (std::size_t o1 = 0; o1 < g.out[1]; ++o1)
                    for (std::size_t o2 = 0; o2 < g.out[2]; ++o2, ++yi)
                        for (std::size_t ci = 0; ci < g.cin; ++ci) {
                            const std::size_t xb = (n * g.cin + ci) * iv;
                            const std::size_t wb = (co * g.cin + ci) * kv;
                            for (std::size_t k0 = 0; k0 < g.k[0]; ++k0) {
                                const auto i0 = static_cast<std::ptrdiff_t>(o0 * g.s[0] + k0) - g.p[0];
                                if (i0 < 0 || i0 >= static_cast<std::ptrdiff_t>(g.in[0])) continue;
                                for (std::size_t k1 = 0; k1 < g.k[1]; ++k1) {
                                    const auto i1 = static_cast<std::ptrdiff_t>(o1 * g.s[1] + k1) - g.p[1];
                                    if (i1 < 0 || i1 >= static_cast<std::ptrdiff_t>(g.in[1])) continue;
                                    const std::size_t xrow = xb + (i0 * g.in[1] + i1) * g.in[2];
                                    const std::size_t wrow = wb + (k0 * g.k[1] + k1) * g.k[2];
                                    for (std::size_t k2 = 0; k2 < g.k[2]; ++k2) {
                                        const auto i2 = static_cast<std::ptrdiff_t>(o2 * g.s[2] + k2) - g.p[2];
                                        if (i2 < 0 || i2 >= static_cast<std::ptrdiff_t>(g.in[2])) continue;
                                        f(xrow + static_cast<std::size_t>(i2), wrow + k2, yi);
                                    }
                                }
                            }
                        }
}

/// Enumerates (input, weight, output) triples of a transposed convolution (scatter form).
/// Weight layout is (in_channels, out_channels, kernel...).
template <class F>
void conv_transpose_visit(const ConvGeom& g, F&& f) {
    const std::size_t ov = g.out_vol(), kv = g.k_vol();
    std::size_t xi = 0;
    for (std::size_t n = 0; n < g.n; ++n)
        for (std::size_t ci = 0; ci < g.cin; ++ci)
            for (std::size_t i0 = 0; i0 < g.in[0]; ++i0)
                for (std::size_t i1 = 0; i1 < g.in[1]; ++i1)
                    for (std::size_t i2 = 0; i2 < g.in[2]; ++i2, ++xi)
                        for (std::size_t co = 0; co < g.cout; ++co) {
                            const std::size_t yb = (n * g.cout + co) * ov;
                            const std::size_t wb = (ci * g.cout + co) * kv;
                            for (std::size_t k0 = 0; k0 < g.k[0]; ++k0) {
                                const auto o0 = static_cast<std::ptrdiff_t>(i0 * g.s[0] + k0) - g.p[0];
                                if (o0 < 0 || o0 >= static_cast<std::ptrdiff_t>(g.out[0])) continue;
                                for (std::size_t k1 = 0; k1 < g.k[1]; ++k1) {
                                    const auto o1 = static_cast<std::ptrdiff_t>(i1 * g.s[1] + k1) - g.p[1];
                                    if (o1 < 0 || o1 >= static_cast<std::ptrdiff_t>(g.out[1])) continue;
                                    const std::size_t yrow = yb + (o0 * g.out[1] + o1) * g.out[2];
                                    const std::size_t wrow = wb + (k0 * g.k[1] + k1) * g.k[2];
                                    for (std::size_t k2 = 0; k2 < g.k[2]; ++k2) {
                                        const auto o2 = static_cast<std::ptrdiff_t>(i2 * g.s[2] + k2) - g.p[2];
                                        if (o2 < 0 || o2 >= static_cast<std::ptrdiff_t>(g.out[2])) continue;
                                        f(xi, wrow + k2, yrow + static_cast<std::size_t>(o2));
                                    }
                                }
                            }
                        }
}

inline ConvGeom conv_geometry(const std::string& name, const Tensor& x, const Tensor& w, std::size_t spatial,
                              std::size_t stride, std::size_t pad, bool transposed) {
    if (stride == 0) throw ShapeError(name + ": stride must be positive");
    if (x.rank() != spatial + 2) throw ShapeError(name + ": input must have rank " + std::to_string(spatial + 2) +
                                                  ", got shape " + shape_str(x.shape()));
    if (w.rank() != spatial + 2) throw ShapeError(name + ": kernel must have rank " + std::to_string(spatial + 2) +
                                                  ", got shape " + shape_str(w.shape()));
    ConvGeom g;
    g.n = x.dim(0);
    g.cin = x.dim(1);
    const std::size_t w_in = transposed ? w.dim(0) : w.dim(1);
    g.cout = transposed ? w.dim(1) : w.dim(0);
    if (w_in != g.cin) {
        Shape expected = w.shape();
        (transposed ? expected[0] : expected[1]) = g.cin;
        throw ShapeError(name + " kernel", expected, w.shape());
    }
    const std::size_t off = 3 - spatial;
    for (std::size_t d = 0; d < spatial; ++d) {
        const std::size_t in = x.dim(2 + d), k = w.dim(2 + d);
        g.in[off + d] = in;
        g.k[off + d] = k;
        g.s[off + d] = stride;
        g.p[off + d] = static_cast<std::ptrdiff_t>(pad);
        std::ptrdiff_t out = 0;
        if (transposed) {
            out = static_cast<std::ptrdiff_t>((in - 1) * stride + k) - 2 * static_cast<std::ptrdiff_t>(pad);
        } else {
            const auto span = static_cast<std::ptrdiff_t>(in + 2 * pad) - static_cast<std::ptrdiff_t>(k);
            out = span < 0 ? 0 : span / static_cast<std::ptrdiff_t>(stride) + 1;
        }
        if (out <= 0)
            throw ShapeError(name + ": kernel " + shape_str(w.shape()) + " does not fit input " + shape_str(x.shape()));
        g.out[off + d] = static_cast<std::size_t>(out);
    }
    return g;
}

inline Tensor conv_impl(Tape& tape, const std::string& name, const Tensor& x, const Tensor& w, const Tensor* bias,
                        std::size_t spatial, std::size_t stride, std::size_t pad, bool transposed) {
    const ConvGeom g = conv_geometry(name, x, w, spatial, stride, pad, transposed);
    if (bias && bias->shape() != Shape{g.cout}) throw ShapeError(name + " bias", Shape{g.cout}, bias->shape());

    Shape out_shape{g.n, g.cout};
    for (std::size_t d = 3 - spatial; d < 3; ++d) out_shape.push_back(g.out[d]);
    std::vector<double> y(shape_numel(out_shape), 0.0);
    if (bias) {
        const auto b = bias->data();
        const std::size_t ov = g.out_vol();
        for (std::size_t n = 0; n < g.n; ++n)
            for (std::size_t co = 0; co < g.cout; ++co)
                std::fill_n(y.begin() + static_cast<std::ptrdiff_t>((n * g.cout + co) * ov), ov, b[co]);
    }
    const double* xd = x.data().data();
    const double* wd = w.data().data();
    double* yd = y.data();
    auto fwd = [&](std::size_t xi, std::size_t wi, std::size_t yi) { yd[yi] += xd[xi] * wd[wi]; };
    if (transposed) conv_transpose_visit(g, fwd);
    else conv_visit(g, fwd);

    Tensor out(out_shape, std::move(y));
    std::vector<const Tensor*> inputs{&x, &w};
    if (bias) inputs.push_back(bias);
    Tensor xs = x.detached(), ws = w.detached();
    const bool has_bias = bias != nullptr;
    return tape.record(out, inputs, [g, xs, ws, has_bias, transposed](const Tensor& gy, const std::vector<bool>& need) {
        std::vector<double> gx(need[0] ? xs.numel() : 0, 0.0), gw(need[1] ? ws.numel() : 0, 0.0);
        const double* gd = gy.data().data();
        const double* xd = xs.data().data();
        const double* wd = ws.data().data();
        auto bwd = [&](std::size_t xi, std::size_t wi, std::size_t yi) {
            const double gv = gd[yi];
            if (!gx.empty()) gx[xi] += gv * wd[wi];
            if (!gw.empty()) gw[wi] += gv * xd[xi];
        };
        if (transposed) conv_transpose_visit(g, bwd);
        else conv_visit(g, bwd);
        std::vector<Tensor> res;
        res.push_back(need[0] ? Tensor(xs.shape(), std::move(gx)) : Tensor());
        res.push_back(need[1] ? Tensor(ws.shape(), std::move(gw)) : Tensor());
        if (has_bias) {
            std::vector<double> gb(g.cout, 0.0);
            const std::size_t ov = g.out_vol();
            for (std::size_t n = 0; n < g.n; ++n)
                for (std::size_t co = 0; co < g.cout; ++co) {
                    const double* row = gd + (n * g.cout + co) * ov;
                    for (std::size_t i = 0; i < ov; ++i) gb[co] += row[i];
                }
            res.push_back(Tensor({g.cout}, std::move(gb)));
        }
        return res;
    });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic with numpy-style broadcasting.

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    const auto plan = detail::broadcast_plan(a.shape(), b.shape(), "add");
    std::vector<double> y(shape_numel(plan.out));
    const auto ad = a.data(), bd = b.data();
    detail::for_each_broadcast(plan, [&](std::size_t io, std::size_t ia, std::size_t ib) { y[io] = ad[ia] + bd[ib]; });
    Shape as = a.shape(), bs = b.shape();
    return tape.record(Tensor(plan.out, std::move(y)), {&a, &b},
                       [plan, as, bs](const Tensor& g, const std::vector<bool>& need) {
                           std::vector<double> ga(need[0] ? shape_numel(as) : 0, 0.0);
                           std::vector<double> gb(need[1] ? shape_numel(bs) : 0, 0.0);
                           const auto gd = g.data();
                           detail::for_each_broadcast(plan, [&](std::size_t io, std::size_t ia, std::size_t ib) {
                               if (!ga.empty()) ga[ia] += gd[io];
                               if (!gb.empty()) gb[ib] += gd[io];
                           });
                           return std::vector<Tensor>{need[0] ? Tensor(as, std::move(ga)) : Tensor(),
                                                      need[1] ? Tensor(bs, std::move(gb)) : Tensor()};
                       });
}

inline Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
    const auto plan = detail::broadcast_plan(a.shape(), b.shape(), "sub");
    std::vector<double> y(shape_numel(plan.out));
    const auto ad = a.data(), bd = b.data();
    detail::for_each_broadcast(plan, [&](std::size_t io, std::size_t ia, std::size_t ib) { y[io] = ad[ia] - bd[ib]; });
    Shape as = a.shape(), bs = b.shape();
    return tape.record(Tensor(plan.out, std::move(y)), {&a, &b},
                       [plan, as, bs](const Tensor& g, const std::vector<bool>& need) {
                           std::vector<double> ga(need[0] ? shape_numel(as) : 0, 0.0);
                           std::vector<double> gb(need[1] ? shape_numel(bs) : 0, 0.0);
                           const auto gd = g.data();
                           detail::for_each_broadcast(plan, [&](std::size_t io, std::size_t ia, std::size_t ib) {
                               if (!ga.empty()) ga[ia] += gd[io];
                               if (!gb.empty()) gb[ib] -= gd[io];
                           });
                           return std::vector<Tensor>{need[0] ? Tensor(as, std::move(ga)) : Tensor(),
                                                      need[1] ? Tensor(bs, std::move(gb)) : Tensor()};
                       });
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    const auto plan = detail::broadcast_plan(a.shape(), b.shape(), "mul");
    std::vector<double> y(shape_numel(plan.out));
    const auto ad = a.data(), bd = b.data();
    detail::for_each_broadcast(plan, [&](std::size_t io, std::size_t ia, std::size_t ib) { y[io] = ad[ia] * bd[ib]; });
    Tensor as = a.detached(), bs = b.detached();
    return tape.record(Tensor(plan.out, std::move(y)), {&a, &b},
                       [plan, as, bs](const Tensor& g, const std::vector<bool>& need) {
                           std::vector<double> ga(need[0] ? as.numel() : 0, 0.0);
                           std::vector<double> gb(need[1] ? bs.numel() : 0, 0.0);
                           const auto gd = g.data(), ad = as.data(), bd = bs.data();
                           detail::for_each_broadcast(plan, [&](std::size_t io, std::size_t ia, std::size_t ib) {
                               if (!ga.empty()) ga[ia] += gd[io] * bd[ib];
                               if (!gb.empty()) gb[ib] += gd[io] * ad[ia];
                           });
                           return std::vector<Tensor>{need[0] ? Tensor(as.shape(), std::move(ga)) : Tensor(),
                                                      need[1] ? Tensor(bs.shape(), std::move(gb)) : Tensor()};
                       });
}

inline Tensor div(Tape& tape, const Tensor& a, const Tensor& b) {
    const auto plan = detail::broadcast_plan(a.shape(), b.shape(), "div");
    std::vector<double> y(shape_numel(plan.out));
    const auto ad = a.data(), bd = b.data();
    detail::for_each_broadcast(plan, [&](std::size_t io, std::size_t ia, std::size_t ib) { y[io] = ad[ia] / bd[ib]; });
    Tensor as = a.detached(), bs = b.detached();
    return tape.record(Tensor(plan.out, std::move(y)), {&a, &b},
                       [plan, as, bs](const Tensor& g, const std::vector<bool>& need) {
                           std::vector<double> ga(need[0] ? as.numel() : 0, 0.0);
                           std::vector<double> gb(need[1] ? bs.numel() : 0, 0.0);
                           const auto gd = g.data(), ad = as.data(), bd = bs.data();
                           detail::for_each_broadcast(plan, [&](std::size_t io, std::size_t ia, std::size_t ib) {
                               if (!ga.empty()) ga[ia] += gd[io] / bd[ib];
                               if (!gb.empty()) gb[ib] -= gd[io] * ad[ia] / (bd[ib] * bd[ib]);
                           });
                           return std::vector<Tensor>{need[0] ? Tensor(as.shape(), std::move(ga)) : Tensor(),
                                                      need[1] ? Tensor(bs.shape(), std::move(gb)) : Tensor()};
                       });
}

/// x * s for a constant s. Each output element is exactly the IEEE product x[i] * s.
inline Tensor scale(Tape& tape, const Tensor& x, double s) {
    return detail::unary(tape, x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(Tape& tape, const Tensor& x, double c) {
    return detail::unary(tape, x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

// ---------------------------------------------------------------------------
// Activations.

inline Tensor relu(Tape& tape, const Tensor& x) {
    return detail::unary(tape, x, [](double v) { return v > 0.0 ? v : 0.0; },
                         [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor leaky_relu(Tape& tape, const Tensor& x, double slope) {
    return detail::unary(tape, x, [slope](double v) { return v > 0.0 ? v : slope * v; },
                         [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

inline Tensor tanh(Tape& tape, const Tensor& x) {
    return detail::unary(tape, x, [](double v) { return std::tanh(v); },
                         [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(Tape& tape, const Tensor& x) {
    return detail::unary(tape, x,
                         [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
                         [](double, double y) { return y * (1.0 - y); });
}

// ---------------------------------------------------------------------------
// Reductions.

inline Tensor sum(Tape& tape, const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    Shape xs = x.shape();
    return tape.record(Tensor::scalar(s), {&x}, [xs](const Tensor& g, const std::vector<bool>&) {
        return std::vector<Tensor>{Tensor::full(xs, g.item())};
    });
}

inline Tensor mean(Tape& tape, const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    const double n = static_cast<double>(x.numel());
    Shape xs = x.shape();
    return tape.record(Tensor::scalar(s / n), {&x}, [xs, n](const Tensor& g, const std::vector<bool>&) {
        return std::vector<Tensor>{Tensor::full(xs, g.item() / n)};
    });
}

/// (N, C, spatial...) -> (N, C), mean over spatial axes.
inline Tensor global_avg_pool(Tape& tape, const Tensor& x) {
    if (x.rank() < 3) throw ShapeError("global_avg_pool: input needs rank >= 3, got " + shape_str(x.shape()));
    const std::size_t nc = x.dim(0) * x.dim(1);
    const std::size_t sp = x.numel() / nc;
    std::vector<double> y(nc, 0.0);
    const auto xd = x.data();
    for (std::size_t i = 0; i < nc; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < sp; ++j) s += xd[i * sp + j];
        y[i] = s / static_cast<double>(sp);
    }
    Shape xs = x.shape();
    return tape.record(Tensor({x.dim(0), x.dim(1)}, std::move(y)), {&x},
                       [xs, nc, sp](const Tensor& g, const std::vector<bool>&) {
                           std::vector<double> gx(nc * sp);
                           const auto gd = g.data();
                           for (std::size_t i = 0; i < nc; ++i)
                               std::fill_n(gx.begin() + static_cast<std::ptrdiff_t>(i * sp), sp,
                                           gd[i] / static_cast<double>(sp));
                           return std::vector<Tensor>{Tensor(xs, std::move(gx))};
                       });
}

/// Per-(sample, channel) normalization to zero mean, unit variance (biased variance + eps).
inline Tensor instance_norm(Tape& tape, const Tensor& x, std::size_t channels, double eps = 1e-5) {
    if (x.rank() < 3 || x.dim(1) != channels) {
        Shape expected = x.shape();
        if (expected.size() >= 2) expected[1] = channels;
        throw ShapeError("instance_norm", expected, x.shape());
    }
    const std::size_t nc = x.dim(0) * channels;
    const std::size_t sp = x.numel() / nc;
    const auto xd = x.data();
    std::vector<double> y(x.numel()), inv_std(nc);
    for (std::size_t i = 0; i < nc; ++i) {
        const double* row = xd.data() + i * sp;
        double m = 0.0;
        for (std::size_t j = 0; j < sp; ++j) m += row[j];
        m /= static_cast<double>(sp);
        double v = 0.0;
        for (std::size_t j = 0; j < sp; ++j) v += (row[j] - m) * (row[j] - m);
        v /= static_cast<double>(sp);
        inv_std[i] = 1.0 / std::sqrt(v + eps);
        for (std::size_t j = 0; j < sp; ++j) y[i * sp + j] = (row[j] - m) * inv_std[i];
    }
    Tensor out(x.shape(), std::move(y));
    Tensor ys = out.detached();
    return tape.record(out, {&x}, [ys, inv_std, nc, sp](const Tensor& g, const std::vector<bool>&) {
        std::vector<double> gx(ys.numel());
        const auto gd = g.data(), yd = ys.data();
        for (std::size_t i = 0; i < nc; ++i) {
            double mg = 0.0, mgy = 0.0;
            for (std::size_t j = 0; j < sp; ++j) {
                mg += gd[i * sp + j];
                mgy += gd[i * sp + j] * yd[i * sp + j];
            }
            mg /= static_cast<double>(sp);
            mgy /= static_cast<double>(sp);
            for (std::size_t j = 0; j < sp; ++j)
                gx[i * sp + j] = inv_std[i] * (gd[i * sp + j] - mg - yd[i * sp + j] * mgy);
        }
        return std::vector<Tensor>{Tensor(ys.shape(), std::move(gx))};
    });
}

// ---------------------------------------------------------------------------
// Linear algebra.

/// (m, k) x (k, n) -> (m, n).
inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul", Shape{a.rank() == 2 ? a.dim(1) : 0, b.rank() == 2 ? b.dim(1) : 0}, b.shape());
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> y(m * n, 0.0);
    const auto ad = a.data(), bd = b.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ad[i * k + p];
            for (std::size_t j = 0; j < n; ++j) y[i * n + j] += av * bd[p * n + j];
        }
    Tensor as = a.detached(), bs = b.detached();
    return tape.record(Tensor({m, n}, std::move(y)), {&a, &b},
                       [as, bs, m, k, n](const Tensor& g, const std::vector<bool>& need) {
                           const auto gd = g.data(), ad = as.data(), bd = bs.data();
                           std::vector<Tensor> res(2);
                           if (need[0]) {
                               std::vector<double> ga(m * k, 0.0);
                               for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t p = 0; p < k; ++p) {
                                       double s = 0.0;
                                       for (std::size_t j = 0; j < n; ++j) s += gd[i * n + j] * bd[p * n + j];
                                       ga[i * k + p] = s;
                                   }
                               res[0] = Tensor({m, k}, std::move(ga));
                           }
                           if (need[1]) {
                               std::vector<double> gb(k * n, 0.0);
                               for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t p = 0; p < k; ++p) {
                                       const double av = ad[i * k + p];
                                       for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * gd[i * n + j];
                                   }
                               res[1] = Tensor({k, n}, std::move(gb));
                           }
                           return res;
                       });
}

/// x (N, in) with weight (out, in) and optional bias (out) -> (N, out).
inline Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor* bias = nullptr) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
        throw ShapeError("linear", Shape{w.rank() == 2 ? w.dim(0) : 0, x.rank() == 2 ? x.dim(1) : 0}, w.shape());
    const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
    if (bias && bias->shape() != Shape{out}) throw ShapeError("linear bias", Shape{out}, bias->shape());
    std::vector<double> y(n * out);
    const auto xd = x.data(), wd = w.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out; ++o) {
            double s = bias ? (*bias)[o] : 0.0;
            for (std::size_t p = 0; p < in; ++p) s += xd[i * in + p] * wd[o * in + p];
            y[i * out + o] = s;
        }
    std::vector<const Tensor*> inputs{&x, &w};
    if (bias) inputs.push_back(bias);
    Tensor xs = x.detached(), ws = w.detached();
    const bool has_bias = bias != nullptr;
    return tape.record(Tensor({n, out}, std::move(y)), inputs,
                       [xs, ws, n, in, out, has_bias](const Tensor& g, const std::vector<bool>& need) {
                           const auto gd = g.data(), xd = xs.data(), wd = ws.data();
                           std::vector<Tensor> res(has_bias ? 3 : 2);
                           if (need[0]) {
                               std::vector<double> gx(n * in, 0.0);
                               for (std::size_t i = 0; i < n; ++i)
                                   for (std::size_t o = 0; o < out; ++o) {
                                       const double gv = gd[i * out + o];
                                       for (std::size_t p = 0; p < in; ++p) gx[i * in + p] += gv * wd[o * in + p];
                                   }
                               res[0] = Tensor({n, in}, std::move(gx));
                           }
                           if (need[1]) {
                               std::vector<double> gw(out * in, 0.0);
                               for (std::size_t i = 0; i < n; ++i)
                                   for (std::size_t o = 0; o < out; ++o) {
                                       const double gv = gd[i * out + o];
                                       for (std::size_t p = 0; p < in; ++p) gw[o * in + p] += gv * xd[i * in + p];
                                   }
                               res[1] = Tensor({out, in}, std::move(gw));
                           }
                           if (has_bias && need[2]) {
                               std::vector<double> gb(out, 0.0);
                               for (std::size_t i = 0; i < n; ++i)
                                   for (std::size_t o = 0; o < out; ++o) gb[o] += gd[i * out + o];
                               res[2] = Tensor({out}, std::move(gb));
                           }
                           return res;
                       });
}

inline Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& bias) {
    return linear(tape, x, w, &bias);
}

// ---------------------------------------------------------------------------
// Layout.

inline Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) throw ShapeError("reshape", x.shape(), shape);
    std::vector<double> v(x.data().begin(), x.data().end());
    Shape xs = x.shape();
    return tape.record(Tensor(std::move(shape), std::move(v)), {&x}, [xs](const Tensor& g, const std::vector<bool>&) {
        return std::vector<Tensor>{Tensor(xs, std::vector<double>(g.data().begin(), g.data().end()))};
    });
}

/// Reorders axes: output axis i is input axis perm[i].
inline Tensor permute(Tape& tape, const Tensor& x, const std::vector<std::size_t>& perm) {
    const std::size_t r = x.rank();
    std::vector<bool> seen(r, false);
    if (perm.size() != r) throw ShapeError("permute: permutation length " + std::to_string(perm.size()) +
                                           " does not match rank " + std::to_string(r));
    for (auto p : perm) {
        if (p >= r || seen[p]) throw ShapeError("permute: invalid permutation");
        seen[p] = true;
    }
    Shape out(r);
    const auto in_st = detail::row_major_strides(x.shape());
    std::vector<std::size_t> st(r);
    for (std::size_t i = 0; i < r; ++i) {
        out[i] = x.dim(perm[i]);
        st[i] = in_st[perm[i]];
    }
    // Gather via a broadcast plan whose "a" strides walk the permuted input.
    detail::BroadcastPlan plan{out, st, std::vector<std::size_t>(r, 0)};
    std::vector<double> y(x.numel());
    const auto xd = x.data();
    detail::for_each_broadcast(plan, [&](std::size_t io, std::size_t ia, std::size_t) { y[io] = xd[ia]; });
    Shape xs = x.shape();
    return tape.record(Tensor(out, std::move(y)), {&x}, [plan, xs](const Tensor& g, const std::vector<bool>&) {
        std::vector<double> gx(shape_numel(xs));
        const auto gd = g.data();
        detail::for_each_broadcast(plan, [&](std::size_t io, std::size_t ia, std::size_t) { gx[ia] = gd[io]; });
        return std::vector<Tensor>{Tensor(xs, std::move(gx))};
    });
}

/// Repeats x along broadcastable axes to `shape`.
inline Tensor broadcast_to(Tape& tape, const Tensor& x, const Shape& shape) {
    const auto plan = detail::broadcast_plan(x.shape(), shape, "broadcast_to");
    if (plan.out != shape) throw ShapeError("broadcast_to", shape, x.shape());
    std::vector<double> y(shape_numel(shape));
    const auto xd = x.data();
    detail::for_each_broadcast(plan, [&](std::size_t io, std::size_t ia, std::size_t) { y[io] = xd[ia]; });
    Shape xs = x.shape();
    return tape.record(Tensor(shape, std::move(y)), {&x}, [plan, xs](const Tensor& g, const std::vector<bool>&) {
        std::vector<double> gx(shape_numel(xs), 0.0);
        const auto gd = g.data();
        detail::for_each_broadcast(plan, [&](std::size_t io, std::size_t ia, std::size_t) { gx[ia] += gd[io]; });
        return std::vector<Tensor>{Tensor(xs, std::move(gx))};
    });
}

inline Tensor concat(Tape& tape, const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& ref = parts[0].shape();
    if (axis >= ref.size()) throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(ref));
    Shape out = ref;
    out[axis] = 0;
    for (const auto& p : parts) {
        Shape expected = ref;
        expected[axis] = p.rank() == ref.size() ? p.dim(axis) : 0;
        if (p.shape() != expected) throw ShapeError("concat", expected, p.shape());
        out[axis] += p.dim(axis);
    }
    const std::size_t outer = shape_numel(Shape(ref.begin(), ref.begin() + static_cast<std::ptrdiff_t>(axis)));
    const std::size_t inner = shape_numel(Shape(ref.begin() + static_cast<std::ptrdiff_t>(axis) + 1, ref.end()));
    std::vector<std::size_t> widths;
    for (const auto& p : parts) widths.push_back(p.dim(axis) * inner);
    const std::size_t row = out[axis] * inner;
    std::vector<double> y(shape_numel(out));
    std::size_t col = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto pd = parts[k].data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(o * widths[k]), widths[k],
                        y.begin() + static_cast<std::ptrdiff_t>(o * row + col));
        col += widths[k];
    }
    std::vector<const Tensor*> inputs;
    std::vector<Shape> shapes;
    for (const auto& p : parts) {
        inputs.push_back(&p);
        shapes.push_back(p.shape());
    }
    return tape.record(Tensor(out, std::move(y)), inputs,
                       [shapes, widths, outer, row](const Tensor& g, const std::vector<bool>& need) {
                           std::vector<Tensor> res(shapes.size());
                           const auto gd = g.data();
                           std::size_t c = 0;
                           for (std::size_t k = 0; k < shapes.size(); ++k) {
                               if (need[k]) {
                                   std::vector<double> gk(outer * widths[k]);
                                   for (std::size_t o = 0; o < outer; ++o)
                                       std::copy_n(gd.begin() + static_cast<std::ptrdiff_t>(o * row + c), widths[k],
                                                   gk.begin() + static_cast<std::ptrdiff_t>(o * widths[k]));
                                   res[k] = Tensor(shapes[k], std::move(gk));
                               }
                               c += widths[k];
                           }
                           return res;
                       });
}

/// Extent-`length` window starting at `start` along `axis`.
inline Tensor slice(Tape& tape, const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
    if (axis >= x.rank() || start + length > x.dim(axis) || length == 0)
        throw ShapeError("slice: window [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") on axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
    const Shape& xs = x.shape();
    const std::size_t outer = shape_numel(Shape(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(axis)));
    const std::size_t inner = shape_numel(Shape(xs.begin() + static_cast<std::ptrdiff_t>(axis) + 1, xs.end()));
    Shape out = xs;
    out[axis] = length;
    const std::size_t in_row = xs[axis] * inner, out_row = length * inner, off = start * inner;
    std::vector<double> y(shape_numel(out));
    const auto xd = x.data();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(o * in_row + off), out_row,
                    y.begin() + static_cast<std::ptrdiff_t>(o * out_row));
    return tape.record(Tensor(out, std::move(y)), {&x},
                       [xs, outer, in_row, out_row, off](const Tensor& g, const std::vector<bool>&) {
                           std::vector<double> gx(shape_numel(xs), 0.0);
                           const auto gd = g.data();
                           for (std::size_t o = 0; o < outer; ++o)
                               std::copy_n(gd.begin() + static_cast<std::ptrdiff_t>(o * out_row), out_row,
                                           gx.begin() + static_cast<std::ptrdiff_t>(o * in_row + off));
                           return std::vector<Tensor>{Tensor(xs, std::move(gx))};
                       });
}

// ---------------------------------------------------------------------------
// Convolutions. Kernels: (out, in, k...) for direct, (in, out, k...) for transposed.
// Output extent: floor((in + 2 pad - k) / stride) + 1, transposed (in - 1) stride - 2 pad + k.

struct ConvOptions {
    std::size_t stride = 1;
    std::size_t pad = 0;
};

inline Tensor conv1d(Tape& t, const Tensor& x, const Tensor& w, const Tensor* b = nullptr, ConvOptions o = {}) {
    return detail::conv_impl(t, "conv1d", x, w, b, 1, o.stride, o.pad, false);
}
inline Tensor conv2d(Tape& t, const Tensor& x, const Tensor& w, const Tensor* b = nullptr, ConvOptions o = {}) {
    return detail::conv_impl(t, "conv2d", x, w, b, 2, o.stride, o.pad, false);
}
inline Tensor conv3d(Tape& t, const Tensor& x, const Tensor& w, const Tensor* b = nullptr, ConvOptions o = {}) {
    return detail::conv_impl(t, "conv3d", x, w, b, 3, o.stride, o.pad, false);
}
inline Tensor conv_transpose1d(Tape& t, const Tensor& x, const Tensor& w, const Tensor* b = nullptr, ConvOptions o = {}) {
    return detail::conv_impl(t, "conv_transpose1d", x, w, b, 1, o.stride, o.pad, true);
}
inline Tensor conv_transpose2d(Tape& t, const Tensor& x, const Tensor& w, const Tensor* b = nullptr, ConvOptions o = {}) {
    return detail::conv_impl(t, "conv_transpose2d", x, w, b, 2, o.stride, o.pad, true);
}
inline Tensor conv_transpose3d(Tape& t, const Tensor& x, const Tensor& w, const Tensor* b = nullptr, ConvOptions o = {}) {
    return detail::conv_impl(t, "conv_transpose3d", x, w, b, 3, o.stride, o.pad, true);
}

// ---------------------------------------------------------------------------
// Name-based dispatch, for callers that build graphs from data.

struct OpAttrs {
    std::size_t stride = 1;
    std::size_t pad = 0;
    std::size_t axis = 0;
    std::size_t start = 0;
    std::size_t length = 0;
    std::size_t channels = 0;
    double slope = 0.2;
    double eps = 1e-5;
    double value = 1.0;
    Shape shape;
    std::vector<std::size_t> perm;
};

inline Tensor forward_op(Tape& tape, std::string_view kind, std::span<const Tensor> in, const OpAttrs& at = {}) {
    auto need = [&](std::size_t lo, std::size_t hi) {
        if (in.size() < lo || in.size() > hi)
            throw ShapeError(std::string(kind) + ": expected " + std::to_string(lo) + ".." + std::to_string(hi) +
                             " inputs, got " + std::to_string(in.size()));
    };
    const ConvOptions co{at.stride, at.pad};
    const Tensor* bias = in.size() > 2 ? &in[2] : nullptr;
    if (kind == "add") return need(2, 2), add(tape, in[0], in[1]);
    if (kind == "sub") return need(2, 2), sub(tape, in[0], in[1]);
    if (kind == "mul") return need(2, 2), mul(tape, in[0], in[1]);
    if (kind == "div") return need(2, 2), div(tape, in[0], in[1]);
    if (kind == "scale") return need(1, 1), scale(tape, in[0], at.value);
    if (kind == "matmul") return need(2, 2), matmul(tape, in[0], in[1]);
    if (kind == "linear") return need(2, 3), linear(tape, in[0], in[1], bias);
    if (kind == "reshape") return need(1, 1), reshape(tape, in[0], at.shape);
    if (kind == "permute") return need(1, 1), permute(tape, in[0], at.perm);
    if (kind == "broadcast_to") return need(1, 1), broadcast_to(tape, in[0], at.shape);
    if (kind == "concat") return need(1, SIZE_MAX), concat(tape, std::vector<Tensor>(in.begin(), in.end()), at.axis);
    if (kind == "slice") return need(1, 1), slice(tape, in[0], at.axis, at.start, at.length);
    if (kind == "relu") return need(1, 1), relu(tape, in[0]);
    if (kind == "leaky_relu") return need(1, 1), leaky_relu(tape, in[0], at.slope);
    if (kind == "tanh") return need(1, 1), op::tanh(tape, in[0]);
    if (kind == "sigmoid") return need(1, 1), sigmoid(tape, in[0]);
    if (kind == "mean") return need(1, 1), mean(tape, in[0]);
    if (kind == "sum") return need(1, 1), sum(tape, in[0]);
    if (kind == "conv1d") return need(2, 3), conv1d(tape, in[0], in[1], bias, co);
    if (kind == "conv2d") return need(2, 3), conv2d(tape, in[0], in[1], bias, co);
    if (kind == "conv3d") return need(2, 3), conv3d(tape, in[0], in[1], bias, co);
    if (kind == "conv_transpose1d" || kind == "conv1d_transpose")
        return need(2, 3), conv_transpose1d(tape, in[0], in[1], bias, co);
    if (kind == "conv_transpose2d") return need(2, 3), conv_transpose2d(tape, in[0], in[1], bias, co);
    if (kind == "conv_transpose3d") return need(2, 3), conv_transpose3d(tape, in[0], in[1], bias, co);
    if (kind == "instance_norm") return need(1, 1), instance_norm(tape, in[0], at.channels, at.eps);
    if (kind == "global_avg_pool") return need(1, 1), global_avg_pool(tape, in[0]);
    throw std::invalid_argument("unknown op kind: " + std::string(kind));
}

}  // namespace voxgan::op
