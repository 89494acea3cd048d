#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "swm/autodiff/graph.hpp"

namespace swm::ad {

/// Window geometry shared by convolution and its transpose. The "wide" side is
/// the convolution input (C channels, H x W); the "narrow" side is its output
/// (F channels, OH x OW). Kernels are laid out [F, C, kh, kw].
struct ConvGeometry {
    std::size_t n = 0, c = 0, f = 0;
    std::size_t h = 0, w = 0;
    std::size_t oh = 0, ow = 0;
    std::size_t kh = 0, kw = 0;
    std::size_t stride = 1, pad = 0;
};

namespace kernels {

// Valid narrow-side range [lo, hi) along one axis for kernel offset k.
inline void narrow_range(std::size_t k, std::size_t stride, std::size_t pad, std::size_t wide, std::size_t narrow,
                         std::size_t& lo, std::size_t& hi) {
    const long kk = static_cast<long>(k), p = static_cast<long>(pad), s = static_cast<long>(stride);
    long first = 0;
    if (p > kk) first = (p - kk + s - 1) / s;
    long last = (static_cast<long>(wide) - 1 + p - kk);
    last = last < 0 ? -1 : last / s;
    lo = static_cast<std::size_t>(std::max(0L, first));
    hi = static_cast<std::size_t>(std::clamp(last + 1, 0L, static_cast<long>(narrow)));
    if (hi < lo) hi = lo;
}

/// narrow[n,f,o] += sum_{c,k} wide[n,c,i(o,k)] * kernel[f,c,k]
template <class T>
void correlate(const ConvGeometry& g, const T* wide, const T* kernel, T* narrow) {
    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t f = 0; f < g.f; ++f) {
            T* out = narrow + (n * g.f + f) * g.oh * g.ow;
            for (std::size_t c = 0; c < g.c; ++c) {
                const T* in = wide + (n * g.c + c) * g.h * g.w;
                const T* ker = kernel + (f * g.c + c) * g.kh * g.kw;
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    std::size_t oy0, oy1;
                    narrow_range(ky, g.stride, g.pad, g.h, g.oh, oy0, oy1);
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                        std::size_t ox0, ox1;
                        narrow_range(kx, g.stride, g.pad, g.w, g.ow, ox0, ox1);
                        const T wv = ker[ky * g.kw + kx];
                        for (std::size_t oy = oy0; oy < oy1; ++oy) {
                            const T* row = in + (oy * g.stride + ky - g.pad) * g.w;
                            T* orow = out + oy * g.ow;
                            for (std::size_t ox = ox0; ox < ox1; ++ox) orow[ox] += wv * row[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// wide[n,c,i(o,k)] += narrow[n,f,o] * kernel[f,c,k]
template <class T>
void scatter(const ConvGeometry& g, const T* narrow, const T* kernel, T* wide) {
    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t f = 0; f < g.f; ++f) {
            const T* src = narrow + (n * g.f + f) * g.oh * g.ow;
            for (std::size_t c = 0; c < g.c; ++c) {
                T* dst = wide + (n * g.c + c) * g.h * g.w;
                const T* ker = kernel + (f * g.c + c) * g.kh * g.kw;
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    std::size_t oy0, oy1;
                    narrow_range(ky, g.stride, g.pad, g.h, g.oh, oy0, oy1);
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                        std::size_t ox0, ox1;
                        narrow_range(kx, g.stride, g.pad, g.w, g.ow, ox0, ox1);
                        const T wv = ker[ky * g.kw + kx];
                        for (std::size_t oy = oy0; oy < oy1; ++oy) {
                            T* row = dst + (oy * g.stride + ky - g.pad) * g.w;
                            const T* srow = src + oy * g.ow;
                            for (std::size_t ox = ox0; ox < ox1; ++ox) row[ox * g.stride + kx - g.pad] += wv * srow[ox];
                        }
                    }
                }
            }
        }
    }
}

/// dkernel[f,c,k] += sum_{n,o} wide[n,c,i(o,k)] * narrow[n,f,o]
template <class T>
void kernel_grad(const ConvGeometry& g, const T* wide, const T* narrow, T* dkernel) {
    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t f = 0; f < g.f; ++f) {
            const T* nar = narrow + (n * g.f + f) * g.oh * g.ow;
            for (std::size_t c = 0; c < g.c; ++c) {
                const T* in = wide + (n * g.c + c) * g.h * g.w;
                T* dk = dkernel + (f * g.c + c) * g.kh * g.kw;
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    std::size_t oy0, oy1;
                    narrow_range(ky, g.stride, g.pad, g.h, g.oh, oy0, oy1);
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                        std::size_t ox0, ox1;
                        narrow_range(kx, g.stride, g.pad, g.w, g.ow, ox0, ox1);
                        T acc = 0;
                        for (std::size_t oy = oy0; oy < oy1; ++oy) {
                            const T* row = in + (oy * g.stride + ky - g.pad) * g.w;
                            const T* nrow = nar + oy * g.ow;
                            for (std::size_t ox = ox0; ox < ox1; ++ox) acc += row[ox * g.stride + kx - g.pad] * nrow[ox];
                        }
                        dk[ky * g.kw + kx] += acc;
                    }
                }
            }
        }
    }
}

/// out[n,ch,:] += bias[ch]
template <class T>
void add_bias(T* out, const T* bias, std::size_t n, std::size_t channels, std::size_t plane) {
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < channels; ++ch) {
            T* p = out + (i * channels + ch) * plane;
            for (std::size_t k = 0; k < plane; ++k) p[k] += bias[ch];
        }
    }
}

template <class T>
void bias_grad(const T* dout, T* dbias, std::size_t n, std::size_t channels, std::size_t plane) {
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < channels; ++ch) {
            const T* p = dout + (i * channels + ch) * plane;
            T acc = 0;
            for (std::size_t k = 0; k < plane; ++k) acc += p[k];
            dbias[ch] += acc;
        }
    }
}

} // namespace kernels

namespace detail {

template <class T>
void check_same_graph(const Var<T>& a, const Var<T>& b) {
    if (a.graph != b.graph) fail(ErrorCode::InvalidArgument, "operands recorded on different graphs");
}

template <class T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
    check_same_graph(a, b);
    if (a.shape() != b.shape()) {
        fail(ErrorCode::ShapeMismatch, std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
}

inline std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad, const char* axis) {
    const long span = static_cast<long>(in + 2 * pad) - static_cast<long>(k);
    if (stride == 0 || span < 0 || span % static_cast<long>(stride) != 0) {
        fail(ErrorCode::ShapeMismatch, std::string("conv2d: non-integral output ") + axis + " for input " + std::to_string(in) +
                                           ", kernel " + std::to_string(k) + ", stride " + std::to_string(stride) +
                                           ", padding " + std::to_string(pad));
    }
    return static_cast<std::size_t>(span) / stride + 1;
}

} // namespace detail

/// 2-D cross-correlation (no kernel flip) with zero padding.
/// input [N,C,H,W], kernel [F,C,kh,kw], bias [F] -> [N,F,H',W'].
template <class T>
Var<T> conv2d(Var<T> input, Var<T> kernel, Var<T> bias, std::size_t stride, std::size_t pad) {
    detail::check_same_graph(input, kernel);
    detail::check_same_graph(input, bias);
    const auto& xs = input.shape();
    const auto& ks = kernel.shape();
    if (xs.size() != 4 || ks.size() != 4) fail(ErrorCode::ShapeMismatch, "conv2d: input and kernel must be rank 4");
    if (xs[1] != ks[1]) {
        fail(ErrorCode::ShapeMismatch, "conv2d: input has " + std::to_string(xs[1]) + " channels, kernel expects " + std::to_string(ks[1]));
    }
    if (bias.shape() != Shape{ks[0]}) fail(ErrorCode::ShapeMismatch, "conv2d: bias must have shape [F]");
    ConvGeometry g{xs[0], xs[1], ks[0], xs[2], xs[3], 0, 0, ks[2], ks[3], stride, pad};
    g.oh = detail::conv_out(g.h, g.kh, stride, pad, "height");
    g.ow = detail::conv_out(g.w, g.kw, stride, pad, "width");

    Tensor<T> out({g.n, g.f, g.oh, g.ow});
    kernels::add_bias(out.data.data(), bias.value().data.data(), g.n, g.f, g.oh * g.ow);
    kernels::correlate(g, input.value().data.data(), kernel.value().data.data(), out.data.data());

    Graph<T>& graph = *input.graph;
    const bool ng = graph.needs_grad(input.id) || graph.needs_grad(kernel.id) || graph.needs_grad(bias.id);
    const std::size_t xi = input.id, ki = kernel.id, bi = bias.id;
    return graph.record(std::move(out), ng, [g, xi, ki, bi](Graph<T>& gr, std::size_t self) {
        const T* dy = gr.grad(self).data();
        if (gr.needs_grad(xi)) kernels::scatter(g, dy, gr.value(ki).data.data(), gr.grad(xi).data());
        if (gr.needs_grad(ki)) kernels::kernel_grad(g, gr.value(xi).data.data(), dy, gr.grad(ki).data());
        if (gr.needs_grad(bi)) kernels::bias_grad(dy, gr.grad(bi).data(), g.n, g.f, g.oh * g.ow);
    });
}

/// Adjoint of conv2d with respect to its input: input [N,F,H,W], kernel [F,C,kh,kw],
/// bias [C] -> [N,C,(H-1)s-2p+kh, (W-1)s-2p+kw].
template <class T>
Var<T> conv2d_transpose(Var<T> input, Var<T> kernel, Var<T> bias, std::size_t stride, std::size_t pad) {
    detail::check_same_graph(input, kernel);
    detail::check_same_graph(input, bias);
    const auto& xs = input.shape();
    const auto& ks = kernel.shape();
    if (xs.size() != 4 || ks.size() != 4) fail(ErrorCode::ShapeMismatch, "conv2d_transpose: input and kernel must be rank 4");
    if (xs[1] != ks[0]) fail(ErrorCode::ShapeMismatch, "conv2d_transpose: input channels do not match kernel dim 0");
    if (bias.shape() != Shape{ks[1]}) fail(ErrorCode::ShapeMismatch, "conv2d_transpose: bias must have shape [C]");
    if (stride == 0) fail(ErrorCode::ShapeMismatch, "conv2d_transpose: stride must be positive");
    const long oh = (static_cast<long>(xs[2]) - 1) * static_cast<long>(stride) - 2 * static_cast<long>(pad) + static_cast<long>(ks[2]);
    const long ow = (static_cast<long>(xs[3]) - 1) * static_cast<long>(stride) - 2 * static_cast<long>(pad) + static_cast<long>(ks[3]);
    if (oh <= 0 || ow <= 0) fail(ErrorCode::ShapeMismatch, "conv2d_transpose: padding leaves no output");
    ConvGeometry g{xs[0], ks[1], ks[0], static_cast<std::size_t>(oh), static_cast<std::size_t>(ow), xs[2], xs[3], ks[2], ks[3], stride, pad};

    Tensor<T> out({g.n, g.c, g.h, g.w});
    kernels::add_bias(out.data.data(), bias.value().data.data(), g.n, g.c, g.h * g.w);
    kernels::scatter(g, input.value().data.data(), kernel.value().data.data(), out.data.data());

    Graph<T>& graph = *input.graph;
    const bool ng = graph.needs_grad(input.id) || graph.needs_grad(kernel.id) || graph.needs_grad(bias.id);
    const std::size_t xi = input.id, ki = kernel.id, bi = bias.id;
    return graph.record(std::move(out), ng, [g, xi, ki, bi](Graph<T>& gr, std::size_t self) {
        const T* dy = gr.grad(self).data();
        if (gr.needs_grad(xi)) kernels::correlate(g, dy, gr.value(ki).data.data(), gr.grad(xi).data());
        if (gr.needs_grad(ki)) kernels::kernel_grad(g, dy, gr.value(xi).data.data(), gr.grad(ki).data());
        if (gr.needs_grad(bi)) kernels::bias_grad(dy, gr.grad(bi).data(), g.n, g.c, g.h * g.w);
    });
}

namespace detail {

// Elementwise unary op with a derivative expressed through input x and output y.
template <class T, class Fwd, class Deriv>
Var<T> unary(Var<T> x, Fwd fwd, Deriv deriv) {
    Graph<T>& graph = *x.graph;
    const Tensor<T>& xv = x.value();
    Tensor<T> out(xv.shape);
    for (std::size_t i = 0; i < xv.size(); ++i) out.data[i] = fwd(xv.data[i]);
    const std::size_t xi = x.id;
    return graph.record(std::move(out), graph.needs_grad(xi), [xi, deriv](Graph<T>& gr, std::size_t self) {
        const auto& dy = gr.grad(self);
        const auto& xv = gr.value(xi).data;
        const auto& yv = gr.value(self).data;
        auto& dx = gr.grad(xi);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * deriv(xv[i], yv[i]);
    });
}

} // namespace detail

template <class T>
Var<T> leaky_relu(Var<T> x, T alpha) {
    for (const auto& v : x.value().data) x.graph->mix_kink(v > T(0));
    return detail::unary(
        x, [alpha](T v) { return v > T(0) ? v : alpha * v; },
        [alpha](T v, T) { return v > T(0) ? T(1) : alpha; });
}

template <class T>
Var<T> relu(Var<T> x) {
    return leaky_relu(x, T(0));
}

template <class T>
Var<T> sigmoid(Var<T> x) {
    return detail::unary(
        x,
        [](T v) {
            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> scale(Var<T> x, T factor) {
    return detail::unary(x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

namespace detail {

template <class T, class Fwd, class DA, class DB>
Var<T> binary(Var<T> a, Var<T> b, const char* name, Fwd fwd, DA da, DB db) {
    check_same_shape(a, b, name);
    Graph<T>& graph = *a.graph;
    Tensor<T> out(a.shape());
    const auto& av = a.value().data;
    const auto& bv = b.value().data;
    for (std::size_t i = 0; i < av.size(); ++i) out.data[i] = fwd(av[i], bv[i]);
    const std::size_t ai = a.id, bi = b.id;
    const bool ng = graph.needs_grad(ai) || graph.needs_grad(bi);
    return graph.record(std::move(out), ng, [ai, bi, da, db](Graph<T>& gr, std::size_t self) {
        const auto& dy = gr.grad(self);
        const auto& av = gr.value(ai).data;
        const auto& bv = gr.value(bi).data;
        if (gr.needs_grad(ai)) {
            auto& g = gr.grad(ai);
            for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] * da(av[i], bv[i]);
        }
        if (gr.needs_grad(bi)) {
            auto& g = gr.grad(bi);
            for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] * db(av[i], bv[i]);
        }
    });
}

} // namespace detail

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    return detail::binary(a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
    return detail::binary(a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
    return detail::binary(a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

namespace detail {
/// Neumaier-compensated accumulation in double.
struct CompensatedSum {
    double s = 0, c = 0;
    void add(double v) {
        const double t = s + v;
        c += std::fabs(s) >= std::fabs(v) ? (s - t) + v : (v - t) + s;
        s = t;
    }
    double value() const { return s + c; }
};
} // namespace detail

template <class T>
Var<T> sum(Var<T> x) {
    Graph<T>& graph = *x.graph;
    detail::CompensatedSum cs;
    for (const auto& v : x.value().data) cs.add(v);
    const T acc = static_cast<T>(cs.value());
    const std::size_t xi = x.id;
    return graph.record(Tensor<T>(Shape{1}, std::vector<T>{acc}), graph.needs_grad(xi), [xi](Graph<T>& gr, std::size_t self) {
        const T d = gr.grad(self)[0];
        for (auto& g : gr.grad(xi)) g += d;
    });
}

/// Mean of squared differences over all elements.
template <class T>
Var<T> mse_loss(Var<T> pred, Var<T> target) {
    detail::check_same_shape(pred, target, "mse_loss");
    Graph<T>& graph = *pred.graph;
    const auto& p = pred.value().data;
    const auto& t = target.value().data;
    detail::CompensatedSum cs;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
        cs.add(d * d);
    }
    const T count = static_cast<T>(p.size());
    const std::size_t pi = pred.id, ti = target.id;
    const bool ng = graph.needs_grad(pi) || graph.needs_grad(ti);
    return graph.record(Tensor<T>(Shape{1}, std::vector<T>{static_cast<T>(cs.value() / static_cast<double>(p.size()))}), ng, [pi, ti, count](Graph<T>& gr, std::size_t self) {
        const T d = gr.grad(self)[0] * T(2) / count;
        const auto& p = gr.value(pi).data;
        const auto& t = gr.value(ti).data;
        if (gr.needs_grad(pi)) {
            auto& g = gr.grad(pi);
            for (std::size_t i = 0; i < p.size(); ++i) g[i] += d * (p[i] - t[i]);
        }
        if (gr.needs_grad(ti)) {
            auto& g = gr.grad(ti);
            for (std::size_t i = 0; i < p.size(); ++i) g[i] -= d * (p[i] - t[i]);
        }
    });
}

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
    if (numel(shape) != x.value().size()) {
        fail(ErrorCode::ShapeMismatch, "reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    Graph<T>& graph = *x.graph;
    Tensor<T> out(std::move(shape), x.value().data);
    const std::size_t xi = x.id;
    return graph.record(std::move(out), graph.needs_grad(xi), [xi](Graph<T>& gr, std::size_t self) {
        const auto& dy = gr.grad(self);
        auto& dx = gr.grad(xi);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    });
}

/// Fully connected layer: x [N,in], weight [out,in], bias [out] -> [N,out].
template <class T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
    detail::check_same_graph(x, weight);
    detail::check_same_graph(x, bias);
    const auto& xs = x.shape();
    const auto& ws = weight.shape();
    if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1] || bias.shape() != Shape{ws[0]}) {
        fail(ErrorCode::ShapeMismatch, "linear: x " + shape_str(xs) + ", weight " + shape_str(ws) + ", bias " + shape_str(bias.shape()));
    }
    const std::size_t n = xs[0], in = xs[1], outd = ws[0];
    Tensor<T> out({n, outd});
    const auto& xv = x.value().data;
    const auto& wv = weight.value().data;
    const auto& bv = bias.value().data;
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t o = 0; o < outd; ++o) {
            T acc = bv[o];
            const T* xr = xv.data() + r * in;
            const T* wr = wv.data() + o * in;
            for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
            out.data[r * outd + o] = acc;
        }
    }
    Graph<T>& graph = *x.graph;
    const std::size_t xi = x.id, wi = weight.id, bi = bias.id;
    const bool ng = graph.needs_grad(xi) || graph.needs_grad(wi) || graph.needs_grad(bi);
    return graph.record(std::move(out), ng, [=](Graph<T>& gr, std::size_t self) {
        const auto& dy = gr.grad(self);
        const auto& xv = gr.value(xi).data;
        const auto& wv = gr.value(wi).data;
        if (gr.needs_grad(xi)) {
            auto& dx = gr.grad(xi);
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t o = 0; o < outd; ++o) {
                    const T d = dy[r * outd + o];
                    const T* wr = wv.data() + o * in;
                    T* dxr = dx.data() + r * in;
                    for (std::size_t i = 0; i < in; ++i) dxr[i] += d * wr[i];
                }
            }
        }
        if (gr.needs_grad(wi)) {
            auto& dw = gr.grad(wi);
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t o = 0; o < outd; ++o) {
                    const T d = dy[r * outd + o];
                    const T* xr = xv.data() + r * in;
                    T* dwr = dw.data() + o * in;
                    for (std::size_t i = 0; i < in; ++i) dwr[i] += d * xr[i];
                }
            }
        }
        if (gr.needs_grad(bi)) {
            auto& db = gr.grad(bi);
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t o = 0; o < outd; ++o) db[o] += dy[r * outd + o];
            }
        }
    });
}

/// Same value, no gradient flow.
template <class T>
Var<T> stop_gradient(Var<T> x) {
    return x.graph->constant(x.value());
}

/// Forward value of `quantized`; backward hands the incoming gradient to
/// `continuous` unchanged and nothing to `quantized`.
template <class T>
Var<T> straight_through(Var<T> continuous, Var<T> quantized) {
    detail::check_same_shape(continuous, quantized, "straight_through");
    Graph<T>& graph = *continuous.graph;
    const std::size_t ci = continuous.id;
    return graph.record(quantized.value(), graph.needs_grad(ci), [ci](Graph<T>& gr, std::size_t self) {
        const auto& dy = gr.grad(self);
        auto& dc = gr.grad(ci);
        for (std::size_t i = 0; i < dy.size(); ++i) dc[i] += dy[i];
    });
}

/// Builds [N,D,gh,gw] from codebook rows: out[n,:,y,x] = table[index[n,y,x], :].
template <class T>
Var<T> gather_codes(Var<T> table, std::span<const std::size_t> index, std::size_t n, std::size_t gh, std::size_t gw) {
    const auto& ts = table.shape();
    if (ts.size() != 2 || index.size() != n * gh * gw) fail(ErrorCode::ShapeMismatch, "gather_codes: bad table or index size");
    const std::size_t k = ts[0], d = ts[1], plane = gh * gw;
    for (auto i : index) {
        if (i >= k) fail(ErrorCode::OutOfBounds, "gather_codes: code index " + std::to_string(i) + " >= " + std::to_string(k));
    }
    Tensor<T> out({n, d, gh, gw});
    const auto& tv = table.value().data;
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t cell = 0; cell < plane; ++cell) {
            const std::size_t row = index[b * plane + cell];
            for (std::size_t j = 0; j < d; ++j) out.data[(b * d + j) * plane + cell] = tv[row * d + j];
        }
    }
    Graph<T>& graph = *table.graph;
    const std::size_t ti = table.id;
    std::vector<std::size_t> idx(index.begin(), index.end());
    return graph.record(std::move(out), graph.needs_grad(ti), [ti, idx = std::move(idx), n, d, plane](Graph<T>& gr, std::size_t self) {
        const auto& dy = gr.grad(self);
        auto& dt = gr.grad(ti);
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t cell = 0; cell < plane; ++cell) {
                const std::size_t row = idx[b * plane + cell];
                for (std::size_t j = 0; j < d; ++j) dt[row * d + j] += dy[(b * d + j) * plane + cell];
            }
        }
    });
}

} // namespace swm::ad
