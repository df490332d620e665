#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "tdaa/graph.hpp"
#include "tdaa/threads.hpp"

namespace tdaa {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const RowMat<T>>;

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
int add(GraphT<T>& g, int a, int b) {
    const auto &av = g.value(a), &bv = g.value(b);
    if (!av.same_shape(bv))
        throw ShapeError("add: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    TensorT<T> y(av.shape);
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = av.data[i] + bv.data[i];
    return g.node(std::move(y), {a, b}, [a, b](GraphT<T>& g, int self) {
        const auto& go = g.grad(self);
        for (int in : {a, b}) {
            if (!g.requires_grad(in)) continue;
            auto& gi = g.grad_buf(in);
            for (size_t i = 0; i < go.data.size(); ++i) gi.data[i] += go.data[i];
        }
    });
}

template <typename T>
int sub(GraphT<T>& g, int a, int b) {
    const auto &av = g.value(a), &bv = g.value(b);
    if (!av.same_shape(bv))
        throw ShapeError("sub: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    TensorT<T> y(av.shape);
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = av.data[i] - bv.data[i];
    return g.node(std::move(y), {a, b}, [a, b](GraphT<T>& g, int self) {
        const auto& go = g.grad(self);
        if (g.requires_grad(a)) {
            auto& ga = g.grad_buf(a);
            for (size_t i = 0; i < go.data.size(); ++i) ga.data[i] += go.data[i];
        }
        if (g.requires_grad(b)) {
            auto& gb = g.grad_buf(b);
            for (size_t i = 0; i < go.data.size(); ++i) gb.data[i] -= go.data[i];
        }
    });
}

template <typename T>
int mul(GraphT<T>& g, int a, int b) {
    const auto &av = g.value(a), &bv = g.value(b);
    if (!av.same_shape(bv))
        throw ShapeError("mul: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    TensorT<T> y(av.shape);
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = av.data[i] * bv.data[i];
    return g.node(std::move(y), {a, b}, [a, b](GraphT<T>& g, int self) {
        const auto& go = g.grad(self);
        const auto &av = g.value(a), &bv = g.value(b);
        if (g.requires_grad(a)) {
            auto& ga = g.grad_buf(a);
            for (size_t i = 0; i < go.data.size(); ++i) ga.data[i] += go.data[i] * bv.data[i];
        }
        if (g.requires_grad(b)) {
            auto& gb = g.grad_buf(b);
            for (size_t i = 0; i < go.data.size(); ++i) gb.data[i] += go.data[i] * av.data[i];
        }
    });
}

template <typename T>
int scale(GraphT<T>& g, int a, T c) {
    const auto& av = g.value(a);
    TensorT<T> y(av.shape);
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = av.data[i] * c;
    return g.node(std::move(y), {a}, [a, c](GraphT<T>& g, int self) {
        if (!g.requires_grad(a)) return;
        const auto& go = g.grad(self);
        auto& ga = g.grad_buf(a);
        for (size_t i = 0; i < go.data.size(); ++i) ga.data[i] += go.data[i] * c;
    });
}

template <typename T>
int add_const(GraphT<T>& g, int a, T c) {
    const auto& av = g.value(a);
    TensorT<T> y(av.shape);
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = av.data[i] + c;
    return g.node(std::move(y), {a}, [a](GraphT<T>& g, int self) {
        if (!g.requires_grad(a)) return;
        const auto& go = g.grad(self);
        auto& ga = g.grad_buf(a);
        for (size_t i = 0; i < go.data.size(); ++i) ga.data[i] += go.data[i];
    });
}

// a[N, rest...] + b[rest...], b broadcast along the leading axis.
template <typename T>
int add_bcast0(GraphT<T>& g, int a, int b) {
    const auto &av = g.value(a), &bv = g.value(b);
    if (av.ndim() < 2 ||
        !std::equal(av.shape.begin() + 1, av.shape.end(), bv.shape.begin(), bv.shape.end()))
        throw ShapeError("add_bcast0: trailing shape of " + shape_str(av.shape) +
                         " must equal " + shape_str(bv.shape));
    const int64_t n = av.dim(0), k = bv.numel();
    TensorT<T> y(av.shape);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < k; ++j) y.data[i * k + j] = av.data[i * k + j] + bv.data[j];
    return g.node(std::move(y), {a, b}, [a, b, n, k](GraphT<T>& g, int self) {
        const auto& go = g.grad(self);
        if (g.requires_grad(a)) {
            auto& ga = g.grad_buf(a);
            for (size_t i = 0; i < go.data.size(); ++i) ga.data[i] += go.data[i];
        }
        if (g.requires_grad(b)) {
            auto& gb = g.grad_buf(b);
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < k; ++j) gb.data[j] += go.data[i * k + j];
        }
    });
}

// ---------------------------------------------------------------------------
// nonlinearities
// ---------------------------------------------------------------------------

template <typename T>
int relu(GraphT<T>& g, int x) {
    const auto& xv = g.value(x);
    TensorT<T> y(xv.shape);
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = xv.data[i] > T(0) ? xv.data[i] : T(0);
    return g.node(std::move(y), {x}, [x](GraphT<T>& g, int self) {
        if (!g.requires_grad(x)) return;
        const auto& go = g.grad(self);
        const auto& xv = g.value(x);
        auto& gx = g.grad_buf(x);
        for (size_t i = 0; i < go.data.size(); ++i)
            if (xv.data[i] > T(0)) gx.data[i] += go.data[i];
    });
}

template <typename T>
int tanh_op(GraphT<T>& g, int x) {
    const auto& xv = g.value(x);
    TensorT<T> y(xv.shape);
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = std::tanh(xv.data[i]);
    return g.node(std::move(y), {x}, [x](GraphT<T>& g, int self) {
        if (!g.requires_grad(x)) return;
        const auto& go = g.grad(self);
        const auto& yv = g.value(self);
        auto& gx = g.grad_buf(x);
        for (size_t i = 0; i < go.data.size(); ++i)
            gx.data[i] += go.data[i] * (T(1) - yv.data[i] * yv.data[i]);
    });
}

// Clamp with straight-through gradient: 1 on the open interval (lo, hi), 0
// outside and at the boundary.
template <typename T>
int clamp_st(GraphT<T>& g, int x, T lo, T hi) {
    if (!(lo < hi)) throw ValueError("clamp_st: lo must be < hi");
    const auto& xv = g.value(x);
    TensorT<T> y(xv.shape);
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = std::min(std::max(xv.data[i], lo), hi);
    return g.node(std::move(y), {x}, [x, lo, hi](GraphT<T>& g, int self) {
        if (!g.requires_grad(x)) return;
        const auto& go = g.grad(self);
        const auto& xv = g.value(x);
        auto& gx = g.grad_buf(x);
        for (size_t i = 0; i < go.data.size(); ++i)
            if (xv.data[i] > lo && xv.data[i] < hi) gx.data[i] += go.data[i];
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
int sum_all(GraphT<T>& g, int x) {
    const auto& xv = g.value(x);
    T s = 0;
    for (T v : xv.data) s += v;
    return g.node(TensorT<T>::scalar(s), {x}, [x](GraphT<T>& g, int self) {
        if (!g.requires_grad(x)) return;
        const T go = g.grad(self).data[0];
        auto& gx = g.grad_buf(x);
        for (auto& v : gx.data) v += go;
    });
}

template <typename T>
int mean_all(GraphT<T>& g, int x) {
    const auto& xv = g.value(x);
    T s = 0;
    for (T v : xv.data) s += v;
    const T inv = T(1) / static_cast<T>(xv.numel());
    return g.node(TensorT<T>::scalar(s * inv), {x}, [x, inv](GraphT<T>& g, int self) {
        if (!g.requires_grad(x)) return;
        const T go = g.grad(self).data[0] * inv;
        auto& gx = g.grad_buf(x);
        for (auto& v : gx.data) v += go;
    });
}

// ---------------------------------------------------------------------------
// linear algebra (gemm is delegated to Eigen; everything around it is ours)
// ---------------------------------------------------------------------------

template <typename T>
int matmul(GraphT<T>& g, int a, int b) {
    const auto &av = g.value(a), &bv = g.value(b);
    if (av.ndim() != 2 || bv.ndim() != 2)
        throw ShapeError("matmul: expected 2-d operands, got " + shape_str(av.shape) + " and " +
                         shape_str(bv.shape));
    if (av.dim(1) != bv.dim(0))
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(av.shape) + " x " +
                         shape_str(bv.shape));
    const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    TensorT<T> y({m, n});
    MatMap<T>(y.data.data(), m, n).noalias() =
        CMatMap<T>(av.data.data(), m, k) * CMatMap<T>(bv.data.data(), k, n);
    return g.node(std::move(y), {a, b}, [a, b, m, k, n](GraphT<T>& g, int self) {
        CMatMap<T> go(g.grad(self).data.data(), m, n);
        if (g.requires_grad(a)) {
            MatMap<T> ga(g.grad_buf(a).data.data(), m, k);
            ga.noalias() += go * CMatMap<T>(g.value(b).data.data(), k, n).transpose();
        }
        if (g.requires_grad(b)) {
            MatMap<T> gb(g.grad_buf(b).data.data(), k, n);
            gb.noalias() += CMatMap<T>(g.value(a).data.data(), m, k).transpose() * go;
        }
    });
}

// y = x * W^T + bias, with x[N,I], W[O,I], bias[O].
template <typename T>
int linear(GraphT<T>& g, int x, int w, int b) {
    const auto &xv = g.value(x), &wv = g.value(w), &bv = g.value(b);
    if (xv.ndim() != 2 || wv.ndim() != 2 || bv.ndim() != 1)
        throw ShapeError("linear: expected x[N,I], W[O,I], b[O]");
    if (xv.dim(1) != wv.dim(1) || wv.dim(0) != bv.dim(0))
        throw ShapeError("linear: incompatible shapes x=" + shape_str(xv.shape) +
                         " W=" + shape_str(wv.shape) + " b=" + shape_str(bv.shape));
    const int n = xv.dim(0), in = xv.dim(1), out = wv.dim(0);
    TensorT<T> y({n, out});
    MatMap<T>(y.data.data(), n, out).noalias() =
        CMatMap<T>(xv.data.data(), n, in) * CMatMap<T>(wv.data.data(), out, in).transpose();
    for (int i = 0; i < n; ++i)
        for (int o = 0; o < out; ++o) y.data[static_cast<size_t>(i) * out + o] += bv.data[o];
    return g.node(std::move(y), {x, w, b}, [x, w, b, n, in, out](GraphT<T>& g, int self) {
        CMatMap<T> go(g.grad(self).data.data(), n, out);
        if (g.requires_grad(x)) {
            MatMap<T> gx(g.grad_buf(x).data.data(), n, in);
            gx.noalias() += go * CMatMap<T>(g.value(w).data.data(), out, in);
        }
        if (g.requires_grad(w)) {
            MatMap<T> gw(g.grad_buf(w).data.data(), out, in);
            gw.noalias() += go.transpose() * CMatMap<T>(g.value(x).data.data(), n, in);
        }
        if (g.requires_grad(b)) {
            auto& gb = g.grad_buf(b);
            const auto& god = g.grad(self).data;
            for (int i = 0; i < n; ++i)
                for (int o = 0; o < out; ++o) gb.data[o] += god[static_cast<size_t>(i) * out + o];
        }
    });
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr int kConvChunk = 8;  // images per task; fixed so results are
                                      // independent of the worker count

struct ConvDims {
    int n, c, h, w, o, kh, kw, stride, pad, hout, wout;
    int64_t ckk() const { return static_cast<int64_t>(c) * kh * kw; }
    int64_t hw() const { return static_cast<int64_t>(hout) * wout; }
};

template <typename T>
ConvDims conv_dims(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, int stride,
                   int pad) {
    if (x.ndim() != 4) throw ShapeError("conv2d: input must be [N,C,H,W], got " + shape_str(x.shape));
    if (w.ndim() != 4) throw ShapeError("conv2d: kernel must be [O,C,kh,kw], got " + shape_str(w.shape));
    if (b.ndim() != 1 || b.dim(0) != w.dim(0))
        throw ShapeError("conv2d: bias must be [O]=" + std::to_string(w.dim(0)) + ", got " +
                         shape_str(b.shape));
    if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
    if (pad < 0) throw ValueError("conv2d: pad must be >= 0");
    ConvDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3),
               w.dim(0), w.dim(2), w.dim(3), stride, pad, 0, 0};
    if (w.dim(1) != d.c)
        throw ShapeError("conv2d: channel axis mismatch, input C=" + std::to_string(d.c) +
                         " vs kernel C=" + std::to_string(w.dim(1)));
    if (d.kh > d.h + 2 * pad || d.kw > d.w + 2 * pad)
        throw ShapeError("conv2d: kernel " + std::to_string(d.kh) + "x" + std::to_string(d.kw) +
                         " exceeds padded input " + std::to_string(d.h + 2 * pad) + "x" +
                         std::to_string(d.w + 2 * pad));
    d.hout = (d.h + 2 * pad - d.kh) / stride + 1;
    d.wout = (d.w + 2 * pad - d.kw) / stride + 1;
    return d;
}

// Column layout: row (c*kh+ki)*kw+kj, column oh*wout+ow.
template <typename T>
void im2col(const T* img, const ConvDims& d, T* col) {
    for (int c = 0; c < d.c; ++c) {
        const T* plane = img + static_cast<int64_t>(c) * d.h * d.w;
        for (int ki = 0; ki < d.kh; ++ki)
            for (int kj = 0; kj < d.kw; ++kj) {
                T* row = col + ((static_cast<int64_t>(c) * d.kh + ki) * d.kw + kj) * d.hw();
                for (int oh = 0; oh < d.hout; ++oh) {
                    const int ih = oh * d.stride + ki - d.pad;
                    T* out = row + static_cast<int64_t>(oh) * d.wout;
                    if (ih < 0 || ih >= d.h) {
                        std::fill(out, out + d.wout, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<int64_t>(ih) * d.w;
                    for (int ow = 0; ow < d.wout; ++ow) {
                        const int iw = ow * d.stride + kj - d.pad;
                        out[ow] = (iw >= 0 && iw < d.w) ? src[iw] : T(0);
                    }
                }
            }
    }
}

template <typename T>
void col2im_add(const T* col, const ConvDims& d, T* img) {
    for (int c = 0; c < d.c; ++c) {
        T* plane = img + static_cast<int64_t>(c) * d.h * d.w;
        for (int ki = 0; ki < d.kh; ++ki)
            for (int kj = 0; kj < d.kw; ++kj) {
                const T* row = col + ((static_cast<int64_t>(c) * d.kh + ki) * d.kw + kj) * d.hw();
                for (int oh = 0; oh < d.hout; ++oh) {
                    const int ih = oh * d.stride + ki - d.pad;
                    if (ih < 0 || ih >= d.h) continue;
                    T* dst = plane + static_cast<int64_t>(ih) * d.w;
                    const T* src = row + static_cast<int64_t>(oh) * d.wout;
                    for (int ow = 0; ow < d.wout; ++ow) {
                        const int iw = ow * d.stride + kj - d.pad;
                        if (iw >= 0 && iw < d.w) dst[iw] += src[ow];
                    }
                }
            }
    }
}

}  // namespace detail

// Direct cross-correlation with zero padding;
// out[n,o,oh,ow] = bias[o] + sum_{c,ki,kj} x[n,c,oh*s+ki-p,ow*s+kj-p] * w[o,c,ki,kj].
template <typename T>
int conv2d(GraphT<T>& g, int x, int w, int b, int stride, int pad) {
    using namespace detail;
    const ConvDims d = conv_dims(g.value(x), g.value(w), g.value(b), stride, pad);
    const auto &xv = g.value(x), &wv = g.value(w), &bv = g.value(b);
    TensorT<T> y({d.n, d.o, d.hout, d.wout});
    const int nchunks = (d.n + kConvChunk - 1) / kConvChunk;
    parallel_for(nchunks, [&](int ci) {
        std::vector<T> col(static_cast<size_t>(d.ckk() * d.hw()));
        CMatMap<T> wm(wv.data.data(), d.o, static_cast<int>(d.ckk()));
        const int n0 = ci * kConvChunk, n1 = std::min(d.n, n0 + kConvChunk);
        for (int n = n0; n < n1; ++n) {
            im2col(xv.data.data() + static_cast<int64_t>(n) * d.c * d.h * d.w, d, col.data());
            MatMap<T> out(y.data.data() + static_cast<int64_t>(n) * d.o * d.hw(), d.o,
                          static_cast<int>(d.hw()));
            out.noalias() = wm * CMatMap<T>(col.data(), static_cast<int>(d.ckk()),
                                            static_cast<int>(d.hw()));
            for (int o = 0; o < d.o; ++o) out.row(o).array() += bv.data[o];
        }
    });
    return g.node(std::move(y), {x, w, b}, [x, w, b, d](GraphT<T>& g, int self) {
        using namespace detail;
        const auto& go = g.grad(self);
        const int nchunks = (d.n + kConvChunk - 1) / kConvChunk;
        if (g.requires_grad(x)) {
            auto& gx = g.grad_buf(x);
            const auto& wv = g.value(w);
            parallel_for(nchunks, [&](int ci) {
                std::vector<T> dcol(static_cast<size_t>(d.ckk() * d.hw()));
                CMatMap<T> wm(wv.data.data(), d.o, static_cast<int>(d.ckk()));
                const int n0 = ci * kConvChunk, n1 = std::min(d.n, n0 + kConvChunk);
                for (int n = n0; n < n1; ++n) {
                    CMatMap<T> dy(go.data.data() + static_cast<int64_t>(n) * d.o * d.hw(), d.o,
                                  static_cast<int>(d.hw()));
                    MatMap<T>(dcol.data(), static_cast<int>(d.ckk()), static_cast<int>(d.hw()))
                        .noalias() = wm.transpose() * dy;
                    col2im_add(dcol.data(), d,
                               gx.data.data() + static_cast<int64_t>(n) * d.c * d.h * d.w);
                }
            });
        }
        if (g.requires_grad(w) || g.requires_grad(b)) {
            const auto& xv = g.value(x);
            std::vector<std::vector<T>> wparts(nchunks), bparts(nchunks);
            parallel_for(nchunks, [&](int ci) {
                wparts[ci].assign(static_cast<size_t>(d.o * d.ckk()), T(0));
                bparts[ci].assign(static_cast<size_t>(d.o), T(0));
                std::vector<T> col(static_cast<size_t>(d.ckk() * d.hw()));
                MatMap<T> wp(wparts[ci].data(), d.o, static_cast<int>(d.ckk()));
                const int n0 = ci * kConvChunk, n1 = std::min(d.n, n0 + kConvChunk);
                for (int n = n0; n < n1; ++n) {
                    CMatMap<T> dy(go.data.data() + static_cast<int64_t>(n) * d.o * d.hw(), d.o,
                                  static_cast<int>(d.hw()));
                    im2col(xv.data.data() + static_cast<int64_t>(n) * d.c * d.h * d.w, d, col.data());
                    wp.noalias() += dy * CMatMap<T>(col.data(), static_cast<int>(d.ckk()),
                                                    static_cast<int>(d.hw())).transpose();
                    for (int o = 0; o < d.o; ++o) bparts[ci][o] += dy.row(o).sum();
                }
            });
            // Reduce in chunk order so the sum is independent of scheduling.
            if (g.requires_grad(w)) {
                auto& gw = g.grad_buf(w);
                for (int ci = 0; ci < nchunks; ++ci)
                    for (size_t i = 0; i < gw.data.size(); ++i) gw.data[i] += wparts[ci][i];
            }
            if (g.requires_grad(b)) {
                auto& gb = g.grad_buf(b);
                for (int ci = 0; ci < nchunks; ++ci)
                    for (int o = 0; o < d.o; ++o) gb.data[o] += bparts[ci][o];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// spatial ops
// ---------------------------------------------------------------------------

template <typename T>
int global_avg_pool(GraphT<T>& g, int x) {
    const auto& xv = g.value(x);
    if (xv.ndim() != 4) throw ShapeError("global_avg_pool: input must be [N,C,H,W]");
    const int n = xv.dim(0), c = xv.dim(1);
    const int64_t hw = static_cast<int64_t>(xv.dim(2)) * xv.dim(3);
    const T inv = T(1) / static_cast<T>(hw);
    TensorT<T> y({n, c});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
            const T* p = xv.data.data() + (static_cast<int64_t>(i) * c + j) * hw;
            T s = 0;
            for (int64_t k = 0; k < hw; ++k) s += p[k];
            y.data[static_cast<size_t>(i) * c + j] = s * inv;
        }
    return g.node(std::move(y), {x}, [x, n, c, hw, inv](GraphT<T>& g, int self) {
        if (!g.requires_grad(x)) return;
        const auto& go = g.grad(self);
        auto& gx = g.grad_buf(x);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) {
                const T v = go.data[static_cast<size_t>(i) * c + j] * inv;
                T* p = gx.data.data() + (static_cast<int64_t>(i) * c + j) * hw;
                for (int64_t k = 0; k < hw; ++k) p[k] += v;
            }
    });
}

template <typename T>
int upsample2x_nearest(GraphT<T>& g, int x) {
    const auto& xv = g.value(x);
    if (xv.ndim() != 4) throw ShapeError("upsample2x_nearest: input must be [N,C,H,W]");
    const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    TensorT<T> y({n, c, 2 * h, 2 * w});
    for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p) {
        const T* in = xv.data.data() + p * h * w;
        T* out = y.data.data() + p * 4 * h * w;
        for (int i = 0; i < 2 * h; ++i)
            for (int j = 0; j < 2 * w; ++j)
                out[static_cast<int64_t>(i) * 2 * w + j] = in[static_cast<int64_t>(i / 2) * w + j / 2];
    }
    return g.node(std::move(y), {x}, [x, n, c, h, w](GraphT<T>& g, int self) {
        if (!g.requires_grad(x)) return;
        const auto& go = g.grad(self);
        auto& gx = g.grad_buf(x);
        for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p) {
            T* gin = gx.data.data() + p * h * w;
            const T* gout = go.data.data() + p * 4 * h * w;
            for (int i = 0; i < 2 * h; ++i)
                for (int j = 0; j < 2 * w; ++j)
                    gin[static_cast<int64_t>(i / 2) * w + j / 2] +=
                        gout[static_cast<int64_t>(i) * 2 * w + j];
        }
    });
}

// ---------------------------------------------------------------------------
// shape plumbing
// ---------------------------------------------------------------------------

template <typename T>
int reshape(GraphT<T>& g, int x, std::vector<int> shape) {
    const auto& xv = g.value(x);
    TensorT<T> y(std::move(shape), xv.data);
    if (y.numel() != xv.numel())
        throw ShapeError("reshape: element count changes from " + shape_str(xv.shape) + " to " +
                         shape_str(y.shape));
    return g.node(std::move(y), {x}, [x](GraphT<T>& g, int self) {
        if (!g.requires_grad(x)) return;
        const auto& go = g.grad(self);
        auto& gx = g.grad_buf(x);
        for (size_t i = 0; i < go.data.size(); ++i) gx.data[i] += go.data[i];
    });
}

template <typename T>
int concat_rows(GraphT<T>& g, int a, int b) {
    const auto &av = g.value(a), &bv = g.value(b);
    if (av.ndim() != 2 || bv.ndim() != 2 || av.dim(1) != bv.dim(1))
        throw ShapeError("concat_rows: need [Na,D] and [Nb,D], got " + shape_str(av.shape) +
                         " and " + shape_str(bv.shape));
    TensorT<T> y({av.dim(0) + bv.dim(0), av.dim(1)});
    std::copy(av.data.begin(), av.data.end(), y.data.begin());
    std::copy(bv.data.begin(), bv.data.end(), y.data.begin() + av.numel());
    return g.node(std::move(y), {a, b}, [a, b](GraphT<T>& g, int self) {
        const auto& go = g.grad(self);
        const int64_t na = g.value(a).numel();
        if (g.requires_grad(a)) {
            auto& ga = g.grad_buf(a);
            for (int64_t i = 0; i < na; ++i) ga.data[i] += go.data[i];
        }
        if (g.requires_grad(b)) {
            auto& gb = g.grad_buf(b);
            for (size_t i = na; i < go.data.size(); ++i) gb.data[i - na] += go.data[i];
        }
    });
}

template <typename T>
int concat_cols(GraphT<T>& g, int a, int b) {
    const auto &av = g.value(a), &bv = g.value(b);
    if (av.ndim() != 2 || bv.ndim() != 2 || av.dim(0) != bv.dim(0))
        throw ShapeError("concat_cols: need [N,A] and [N,B], got " + shape_str(av.shape) + " and " +
                         shape_str(bv.shape));
    const int n = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
    TensorT<T> y({n, ca + cb});
    for (int i = 0; i < n; ++i) {
        std::copy_n(av.data.begin() + static_cast<int64_t>(i) * ca, ca,
                    y.data.begin() + static_cast<int64_t>(i) * (ca + cb));
        std::copy_n(bv.data.begin() + static_cast<int64_t>(i) * cb, cb,
                    y.data.begin() + static_cast<int64_t>(i) * (ca + cb) + ca);
    }
    return g.node(std::move(y), {a, b}, [a, b, n, ca, cb](GraphT<T>& g, int self) {
        const auto& go = g.grad(self);
        for (int i = 0; i < n; ++i) {
            if (g.requires_grad(a)) {
                auto& ga = g.grad_buf(a);
                for (int j = 0; j < ca; ++j)
                    ga.data[static_cast<int64_t>(i) * ca + j] +=
                        go.data[static_cast<int64_t>(i) * (ca + cb) + j];
            }
            if (g.requires_grad(b)) {
                auto& gb = g.grad_buf(b);
                for (int j = 0; j < cb; ++j)
                    gb.data[static_cast<int64_t>(i) * cb + j] +=
                        go.data[static_cast<int64_t>(i) * (ca + cb) + ca + j];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// norms and similarities
// ---------------------------------------------------------------------------

// Per-row euclidean norm, [N,D] -> [N]. Zero rows get zero gradient.
template <typename T>
int row_l2norm(GraphT<T>& g, int x) {
    const auto& xv = g.value(x);
    if (xv.ndim() != 2) throw ShapeError("row_l2norm: input must be [N,D]");
    const int n = xv.dim(0), d = xv.dim(1);
    TensorT<T> y({n});
    for (int i = 0; i < n; ++i) {
        T s = 0;
        const T* p = xv.data.data() + static_cast<int64_t>(i) * d;
        for (int j = 0; j < d; ++j) s += p[j] * p[j];
        y.data[i] = std::sqrt(s);
    }
    return g.node(std::move(y), {x}, [x, n, d](GraphT<T>& g, int self) {
        if (!g.requires_grad(x)) return;
        const auto& go = g.grad(self);
        const auto& xv = g.value(x);
        const auto& yv = g.value(self);
        auto& gx = g.grad_buf(x);
        for (int i = 0; i < n; ++i) {
            if (yv.data[i] == T(0)) continue;
            const T s = go.data[i] / yv.data[i];
            const T* p = xv.data.data() + static_cast<int64_t>(i) * d;
            T* q = gx.data.data() + static_cast<int64_t>(i) * d;
            for (int j = 0; j < d; ++j) q[j] += s * p[j];
        }
    });
}

// x[N,D] minus a constant row vector v[D].
template <typename T>
int sub_row_const(GraphT<T>& g, int x, const TensorT<T>& v) {
    const auto& xv = g.value(x);
    if (xv.ndim() != 2 || v.numel() != xv.dim(1))
        throw ShapeError("sub_row_const: need x[N,D] and v with D elements, got " +
                         shape_str(xv.shape) + " and " + shape_str(v.shape));
    check_finite(v, "sub_row_const");
    const int n = xv.dim(0), d = xv.dim(1);
    TensorT<T> y(xv.shape);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            y.data[static_cast<int64_t>(i) * d + j] = xv.data[static_cast<int64_t>(i) * d + j] - v.data[j];
    return g.node(std::move(y), {x}, [x](GraphT<T>& g, int self) {
        if (!g.requires_grad(x)) return;
        const auto& go = g.grad(self);
        auto& gx = g.grad_buf(x);
        for (size_t i = 0; i < go.data.size(); ++i) gx.data[i] += go.data[i];
    });
}

// Row-wise L2 normalization. Zero rows are a contract violation.
template <typename T>
int normalize_rows(GraphT<T>& g, int x) {
    const auto& xv = g.value(x);
    if (xv.ndim() != 2) throw ShapeError("normalize_rows: input must be [N,D]");
    const int n = xv.dim(0), d = xv.dim(1);
    TensorT<T> y(xv.shape);
    std::vector<T> norms(n);
    for (int i = 0; i < n; ++i) {
        T s = 0;
        const T* p = xv.data.data() + static_cast<int64_t>(i) * d;
        for (int j = 0; j < d; ++j) s += p[j] * p[j];
        norms[i] = std::sqrt(s);
        if (norms[i] == T(0))
            throw ValueError("normalize_rows: row " + std::to_string(i) + " is the zero vector");
        for (int j = 0; j < d; ++j) y.data[static_cast<int64_t>(i) * d + j] = p[j] / norms[i];
    }
    return g.node(std::move(y), {x}, [x, n, d, norms](GraphT<T>& g, int self) {
        if (!g.requires_grad(x)) return;
        const auto& go = g.grad(self);
        const auto& yv = g.value(self);
        auto& gx = g.grad_buf(x);
        for (int i = 0; i < n; ++i) {
            const T* gy = go.data.data() + static_cast<int64_t>(i) * d;
            const T* u = yv.data.data() + static_cast<int64_t>(i) * d;
            T dot = 0;
            for (int j = 0; j < d; ++j) dot += gy[j] * u[j];
            T* q = gx.data.data() + static_cast<int64_t>(i) * d;
            for (int j = 0; j < d; ++j) q[j] += (gy[j] - dot * u[j]) / norms[i];
        }
    });
}

// S = X X^T for X[N,D]; used for pairwise similarity matrices.
template <typename T>
int gram_rows(GraphT<T>& g, int x) {
    const auto& xv = g.value(x);
    if (xv.ndim() != 2) throw ShapeError("gram_rows: input must be [N,D]");
    const int n = xv.dim(0), d = xv.dim(1);
    TensorT<T> y({n, n});
    CMatMap<T> xm(xv.data.data(), n, d);
    MatMap<T>(y.data.data(), n, n).noalias() = xm * xm.transpose();
    return g.node(std::move(y), {x}, [x, n, d](GraphT<T>& g, int self) {
        if (!g.requires_grad(x)) return;
        const auto& go = g.grad(self);
        RowMat<T> sym = CMatMap<T>(go.data.data(), n, n);
        sym += CMatMap<T>(go.data.data(), n, n).transpose();
        MatMap<T> gx(g.grad_buf(x).data.data(), n, d);
        gx.noalias() += sym * CMatMap<T>(g.value(x).data.data(), n, d);
    });
}

// cos(x_i, t) for a constant anchor t; [N,D],[D] -> [N].
template <typename T>
int cosine_to_anchor(GraphT<T>& g, int x, const TensorT<T>& t) {
    const auto& xv = g.value(x);
    if (xv.ndim() != 2 || t.numel() != xv.dim(1))
        throw ShapeError("cosine_to_anchor: need x[N,D] and anchor with D elements");
    check_finite(t, "cosine_to_anchor");
    const int n = xv.dim(0), d = xv.dim(1);
    T nt = 0;
    for (T v : t.data) nt += v * v;
    nt = std::sqrt(nt);
    if (nt == T(0)) throw ValueError("cosine_to_anchor: anchor is the zero vector");
    TensorT<T> y({n});
    std::vector<T> norms(n);
    for (int i = 0; i < n; ++i) {
        const T* p = xv.data.data() + static_cast<int64_t>(i) * d;
        T s = 0, dot = 0;
        for (int j = 0; j < d; ++j) {
            s += p[j] * p[j];
            dot += p[j] * t.data[j];
        }
        norms[i] = std::sqrt(s);
        if (norms[i] == T(0))
            throw ValueError("cosine_to_anchor: row " + std::to_string(i) + " is the zero vector");
        y.data[i] = dot / (norms[i] * nt);
    }
    std::vector<T> anchor = t.data;
    return g.node(std::move(y), {x}, [x, n, d, nt, norms, anchor](GraphT<T>& g, int self) {
        if (!g.requires_grad(x)) return;
        const auto& go = g.grad(self);
        const auto& xv = g.value(x);
        const auto& yv = g.value(self);
        auto& gx = g.grad_buf(x);
        for (int i = 0; i < n; ++i) {
            const T* p = xv.data.data() + static_cast<int64_t>(i) * d;
            T* q = gx.data.data() + static_cast<int64_t>(i) * d;
            const T c = yv.data[i], gi = go.data[i];
            for (int j = 0; j < d; ++j)
                q[j] += gi * (anchor[j] / (norms[i] * nt) - c * p[j] / (norms[i] * norms[i]));
        }
    });
}

// ---------------------------------------------------------------------------
// softmax-family losses
// ---------------------------------------------------------------------------

// Plain (non-graph) row softmax, exposed so tests can check normalization.
template <typename T>
TensorT<T> softmax_rows(const TensorT<T>& logits) {
    if (logits.ndim() != 2) throw ShapeError("softmax_rows: input must be [N,K]");
    const int n = logits.dim(0), k = logits.dim(1);
    TensorT<T> p(logits.shape);
    for (int i = 0; i < n; ++i) {
        const T* row = logits.data.data() + static_cast<int64_t>(i) * k;
        T* out = p.data.data() + static_cast<int64_t>(i) * k;
        T mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        T sum = 0;
        for (int j = 0; j < k; ++j) {
            out[j] = std::exp(row[j] - mx);
            sum += out[j];
        }
        for (int j = 0; j < k; ++j) out[j] /= sum;
    }
    return p;
}

// Mean over the batch of -log softmax(logits)[label].
template <typename T>
int softmax_cross_entropy(GraphT<T>& g, int logits, const std::vector<int>& labels) {
    const auto& lv = g.value(logits);
    if (lv.ndim() != 2) throw ShapeError("softmax_cross_entropy: logits must be [N,K]");
    const int n = lv.dim(0), k = lv.dim(1);
    if (static_cast<int>(labels.size()) != n)
        throw ShapeError("softmax_cross_entropy: expected " + std::to_string(n) + " labels, got " +
                         std::to_string(labels.size()));
    for (int i = 0; i < n; ++i)
        if (labels[i] < 0 || labels[i] >= k)
            throw ValueError("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                             " out of range [0," + std::to_string(k) + ") at row " + std::to_string(i));
    TensorT<T> probs = softmax_rows(lv);
    T loss = 0;
    for (int i = 0; i < n; ++i) {
        const T* row = lv.data.data() + static_cast<int64_t>(i) * k;
        T mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        T sum = 0;
        for (int j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
        loss += std::log(sum) - (row[labels[i]] - mx);
    }
    loss /= static_cast<T>(n);
    return g.node(TensorT<T>::scalar(loss), {logits},
                  [logits, labels, probs, n, k](GraphT<T>& g, int self) {
                      if (!g.requires_grad(logits)) return;
                      const T g0 = g.grad(self).data[0] / static_cast<T>(n);
                      auto& gl = g.grad_buf(logits);
                      for (int i = 0; i < n; ++i)
                          for (int j = 0; j < k; ++j)
                              gl.data[static_cast<int64_t>(i) * k + j] +=
                                  g0 * (probs.data[static_cast<int64_t>(i) * k + j] -
                                        (j == labels[i] ? T(1) : T(0)));
                  });
}

// Mean over rows of -log( exp(l[i,target_i]) / sum_{j active} exp(l[i,j]) ),
// where `mask` (row-major, nonzero = active) selects the denominator terms.
// The building block behind the contrastive objectives.
template <typename T>
int ce_rows_masked(GraphT<T>& g, int logits, const std::vector<int>& targets,
                   const std::vector<uint8_t>& mask) {
    const auto& lv = g.value(logits);
    if (lv.ndim() != 2) throw ShapeError("ce_rows_masked: logits must be [N,M]");
    const int n = lv.dim(0), m = lv.dim(1);
    if (static_cast<int>(targets.size()) != n || static_cast<int>(mask.size()) != n * m)
        throw ShapeError("ce_rows_masked: targets/mask size mismatch");
    TensorT<T> probs({n, m});
    T loss = 0;
    for (int i = 0; i < n; ++i) {
        const T* row = lv.data.data() + static_cast<int64_t>(i) * m;
        const uint8_t* act = mask.data() + static_cast<int64_t>(i) * m;
        const int t = targets[i];
        if (t < 0 || t >= m || !act[t])
            throw ValueError("ce_rows_masked: target " + std::to_string(t) +
                             " inactive or out of range at row " + std::to_string(i));
        T mx = row[t];
        for (int j = 0; j < m; ++j)
            if (act[j]) mx = std::max(mx, row[j]);
        T sum = 0;
        T* prow = probs.data.data() + static_cast<int64_t>(i) * m;
        for (int j = 0; j < m; ++j) {
            prow[j] = act[j] ? std::exp(row[j] - mx) : T(0);
            sum += prow[j];
        }
        for (int j = 0; j < m; ++j) prow[j] /= sum;
        loss += std::log(sum) - (row[t] - mx);
    }
    loss /= static_cast<T>(n);
    return g.node(TensorT<T>::scalar(loss), {logits},
                  [logits, targets, probs, n, m](GraphT<T>& g, int self) {
                      if (!g.requires_grad(logits)) return;
                      const T g0 = g.grad(self).data[0] / static_cast<T>(n);
                      auto& gl = g.grad_buf(logits);
                      for (int i = 0; i < n; ++i)
                          for (int j = 0; j < m; ++j)
                              gl.data[static_cast<int64_t>(i) * m + j] +=
                                  g0 * (probs.data[static_cast<int64_t>(i) * m + j] -
                                        (j == targets[i] ? T(1) : T(0)));
                  });
}

// Supervised-contrastive objective on a precomputed similarity/temperature
// matrix: mean over anchors i of -(1/|P(i)|) sum_{p in P(i)}
// log( exp(l[i,p]) / sum_{a != i} exp(l[i,a]) ). Anchors without positives
// are skipped; it is an error if every anchor is skipped.
template <typename T>
int supcon_from_logits(GraphT<T>& g, int logits, const std::vector<int>& labels) {
    const auto& lv = g.value(logits);
    if (lv.ndim() != 2 || lv.dim(0) != lv.dim(1))
        throw ShapeError("supcon_from_logits: logits must be square [M,M]");
    const int m = lv.dim(0);
    if (static_cast<int>(labels.size()) != m)
        throw ShapeError("supcon_from_logits: expected " + std::to_string(m) + " labels");
    std::vector<std::vector<int>> positives(m);
    int anchors = 0;
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j)
            if (j != i && labels[j] == labels[i]) positives[i].push_back(j);
        if (!positives[i].empty()) ++anchors;
    }
    if (anchors == 0) throw ValueError("supcon_from_logits: no anchor has a positive");
    TensorT<T> probs({m, m});
    T loss = 0;
    for (int i = 0; i < m; ++i) {
        if (positives[i].empty()) continue;
        const T* row = lv.data.data() + static_cast<int64_t>(i) * m;
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < m; ++j)
            if (j != i) mx = std::max(mx, row[j]);
        T sum = 0;
        T* prow = probs.data.data() + static_cast<int64_t>(i) * m;
        for (int j = 0; j < m; ++j) {
            prow[j] = (j != i) ? std::exp(row[j] - mx) : T(0);
            sum += prow[j];
        }
        for (int j = 0; j < m; ++j) prow[j] /= sum;
        const T lse = std::log(sum) + mx;
        T li = 0;
        for (int p : positives[i]) li += row[p] - lse;
        loss -= li / static_cast<T>(positives[i].size());
    }
    loss /= static_cast<T>(anchors);
    return g.node(TensorT<T>::scalar(loss), {logits},
                  [logits, positives, probs, m, anchors](GraphT<T>& g, int self) {
                      if (!g.requires_grad(logits)) return;
                      const T g0 = g.grad(self).data[0] / static_cast<T>(anchors);
                      auto& gl = g.grad_buf(logits);
                      for (int i = 0; i < m; ++i) {
                          if (positives[i].empty()) continue;
                          const T invp = T(1) / static_cast<T>(positives[i].size());
                          T* grow = gl.data.data() + static_cast<int64_t>(i) * m;
                          const T* prow = probs.data.data() + static_cast<int64_t>(i) * m;
                          for (int j = 0; j < m; ++j)
                              if (j != i) grow[j] += g0 * prow[j];
                          for (int p : positives[i]) grow[p] -= g0 * invp;
                      }
                  });
}

// ---------------------------------------------------------------------------
// misc helpers (non-graph)
// ---------------------------------------------------------------------------

// Argmax with ties broken by the lowest index.
template <typename T>
int argmax_row(const T* row, int k) {
    int best = 0;
    for (int j = 1; j < k; ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

template <typename T>
std::vector<int> argmax_rows(const TensorT<T>& m) {
    if (m.ndim() != 2) throw ShapeError("argmax_rows: input must be [N,K]");
    std::vector<int> out(m.dim(0));
    for (int i = 0; i < m.dim(0); ++i)
        out[i] = argmax_row(m.data.data() + static_cast<int64_t>(i) * m.dim(1), m.dim(1));
    return out;
}

}  // namespace tdaa
