#ifndef ZAUG_TENSOR_HPP
#define ZAUG_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "zaug/common.hpp"
#include "zaug/rng.hpp"

namespace zaug {

// Dense 4D tensor, NCHW, double precision. Double keeps the loss-formula and
// gradient oracles tight (1e-6 absolute agreement) without mixed-precision
// bookkeeping; volumes in this domain are small enough that memory is not the
// bottleneck.
class Tensor {
public:
    Tensor() = default;
    Tensor(int n, int c, int h, int w)
        : n_(n), c_(c), h_(h), w_(w),
          data_(std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * c * h * w, 0.0)) {
        ZAUG_CHECK(n > 0 && c > 0 && h > 0 && w > 0, "tensor: non-positive dimension ", n, "x", c, "x", h, "x", w);
    }

    static Tensor zeros(int n, int c, int h, int w) { return Tensor(n, c, h, w); }

    static Tensor full(int n, int c, int h, int w, double v) {
        Tensor t(n, c, h, w);
        std::fill(t.begin(), t.end(), v);
        return t;
    }

    static Tensor scalar(double v) { return full(1, 1, 1, 1, v); }

    static Tensor from_vector(int n, int c, int h, int w, const std::vector<double>& v) {
        Tensor t(n, c, h, w);
        ZAUG_CHECK(v.size() == t.numel(), "tensor: init size mismatch");
        std::copy(v.begin(), v.end(), t.begin());
        return t;
    }

    int n() const { return n_; }
    int c() const { return c_; }
    int h() const { return h_; }
    int w() const { return w_; }
    bool empty() const { return !data_; }
    std::size_t numel() const { return data_ ? data_->size() : 0; }

    double* begin() { return data_->data(); }
    double* end() { return data_->data() + data_->size(); }
    const double* begin() const { return data_->data(); }
    const double* end() const { return data_->data() + data_->size(); }
    double* data() { return data_->data(); }
    const double* data() const { return data_->data(); }

    double& at(int n, int c, int y, int x) {
        return (*data_)[((static_cast<std::size_t>(n) * c_ + c) * h_ + y) * w_ + x];
    }
    double at(int n, int c, int y, int x) const {
        return (*data_)[((static_cast<std::size_t>(n) * c_ + c) * h_ + y) * w_ + x];
    }
    double& operator[](std::size_t i) { return (*data_)[i]; }
    double operator[](std::size_t i) const { return (*data_)[i]; }

    double* ptr(int n, int c, int y, int x) {
        return data_->data() + ((static_cast<std::size_t>(n) * c_ + c) * h_ + y) * w_ + x;
    }
    const double* ptr(int n, int c, int y, int x) const {
        return data_->data() + ((static_cast<std::size_t>(n) * c_ + c) * h_ + y) * w_ + x;
    }

    bool same_shape(const Tensor& o) const { return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }

    Tensor clone() const {
        Tensor t(n_, c_, h_, w_);
        std::copy(begin(), end(), t.begin());
        return t;
    }

    std::string shape_str() const {
        return detail::format_msg("[", n_, ",", c_, ",", h_, ",", w_, "]");
    }

private:
    int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
    std::shared_ptr<std::vector<double>> data_;
};

namespace tensor_ops {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

inline void check_same(const Tensor& a, const Tensor& b, const char* op) {
    ZAUG_CHECK(a.same_shape(b), op, ": shape mismatch ", a.shape_str(), " vs ", b.shape_str());
}

template <typename F>
Tensor map1(const Tensor& a, F f) {
    Tensor out(a.n(), a.c(), a.h(), a.w());
    const double* pa = a.begin();
    double* po = out.begin();
    const std::size_t m = a.numel();
    for (std::size_t i = 0; i < m; ++i) po[i] = f(pa[i]);
    return out;
}

template <typename F>
Tensor map2(const Tensor& a, const Tensor& b, const char* op, F f) {
    check_same(a, b, op);
    Tensor out(a.n(), a.c(), a.h(), a.w());
    const double* pa = a.begin();
    const double* pb = b.begin();
    double* po = out.begin();
    const std::size_t m = a.numel();
    for (std::size_t i = 0; i < m; ++i) po[i] = f(pa[i], pb[i]);
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) { return map2(a, b, "add", [](double x, double y) { return x + y; }); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return map2(a, b, "sub", [](double x, double y) { return x - y; }); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return map2(a, b, "mul", [](double x, double y) { return x * y; }); }
inline Tensor scale(const Tensor& a, double s) { return map1(a, [s](double x) { return x * s; }); }
inline Tensor add_scalar(const Tensor& a, double s) { return map1(a, [s](double x) { return x + s; }); }
inline Tensor neg(const Tensor& a) { return map1(a, [](double x) { return -x; }); }
inline Tensor abs(const Tensor& a) { return map1(a, [](double x) { return std::fabs(x); }); }
inline Tensor sign(const Tensor& a) { return map1(a, [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }); }
inline Tensor sqrt(const Tensor& a) { return map1(a, [](double x) { return std::sqrt(std::max(x, 0.0)); }); }
// reciprocal with the convention 1/0 -> 0; pairs with sqrt's subgradient at 0
inline Tensor recip0(const Tensor& a) { return map1(a, [](double x) { return x != 0.0 ? 1.0 / x : 0.0; }); }
inline Tensor sigmoid(const Tensor& a) { return map1(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }); }
inline Tensor leaky_relu(const Tensor& a, double slope) {
    return map1(a, [slope](double x) { return x > 0 ? x : slope * x; });
}
inline Tensor leaky_mask(const Tensor& a, double slope) {
    return map1(a, [slope](double x) { return x > 0 ? 1.0 : slope; });
}
inline Tensor clamp(const Tensor& a, double lo, double hi) {
    return map1(a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); });
}

inline double sum_all(const Tensor& a) {
    double s = 0.0;
    for (const double* p = a.begin(); p != a.end(); ++p) s += *p;
    return s;
}

inline Tensor reduce_all(const Tensor& a) { return Tensor::scalar(sum_all(a)); }

inline Tensor broadcast_all(const Tensor& g, int n, int c, int h, int w) {
    ZAUG_CHECK(g.numel() == 1, "broadcast_all: expected scalar");
    return Tensor::full(n, c, h, w, g[0]);
}

// sum over (c,h,w) per sample -> [N,1,1,1]
inline Tensor reduce_batch(const Tensor& a) {
    Tensor out(a.n(), 1, 1, 1);
    const std::size_t per = a.numel() / a.n();
    for (int i = 0; i < a.n(); ++i) {
        const double* p = a.begin() + per * i;
        double s = 0.0;
        for (std::size_t j = 0; j < per; ++j) s += p[j];
        out[static_cast<std::size_t>(i)] = s;
    }
    return out;
}

inline Tensor broadcast_batch(const Tensor& g, int c, int h, int w) {
    ZAUG_CHECK(g.c() == 1 && g.h() == 1 && g.w() == 1, "broadcast_batch: expected [N,1,1,1]");
    Tensor out(g.n(), c, h, w);
    const std::size_t per = static_cast<std::size_t>(c) * h * w;
    for (int i = 0; i < g.n(); ++i)
        std::fill(out.begin() + per * i, out.begin() + per * (i + 1), g[static_cast<std::size_t>(i)]);
    return out;
}

// sum over (n,h,w) per channel -> [1,C,1,1]
inline Tensor reduce_channel(const Tensor& a) {
    Tensor out(1, a.c(), 1, 1);
    for (int n = 0; n < a.n(); ++n)
        for (int c = 0; c < a.c(); ++c) {
            double s = 0.0;
            for (int y = 0; y < a.h(); ++y)
                for (int x = 0; x < a.w(); ++x) s += a.at(n, c, y, x);
            out[static_cast<std::size_t>(c)] += s;
        }
    return out;
}

inline Tensor broadcast_channel(const Tensor& g, int n, int h, int w) {
    ZAUG_CHECK(g.n() == 1 && g.h() == 1 && g.w() == 1, "broadcast_channel: expected [1,C,1,1]");
    Tensor out(n, g.c(), h, w);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < g.c(); ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) out.at(i, c, y, x) = g[static_cast<std::size_t>(c)];
    return out;
}

// mean over (h,w) -> [N,C,1,1]
inline Tensor reduce_spatial(const Tensor& a) {
    Tensor out(a.n(), a.c(), 1, 1);
    for (int n = 0; n < a.n(); ++n)
        for (int c = 0; c < a.c(); ++c) {
            double s = 0.0;
            for (int y = 0; y < a.h(); ++y)
                for (int x = 0; x < a.w(); ++x) s += a.at(n, c, y, x);
            out.at(n, c, 0, 0) = s;
        }
    return out;
}

inline Tensor broadcast_spatial(const Tensor& g, int h, int w) {
    ZAUG_CHECK(g.h() == 1 && g.w() == 1, "broadcast_spatial: expected [N,C,1,1]");
    Tensor out(g.n(), g.c(), h, w);
    for (int n = 0; n < g.n(); ++n)
        for (int c = 0; c < g.c(); ++c) {
            const double v = g.at(n, c, 0, 0);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) out.at(n, c, y, x) = v;
        }
    return out;
}

inline Tensor concat_channels(const std::vector<Tensor>& parts) {
    ZAUG_CHECK(!parts.empty(), "concat: empty");
    int c_total = 0;
    for (const auto& p : parts) {
        ZAUG_CHECK(p.n() == parts[0].n() && p.h() == parts[0].h() && p.w() == parts[0].w(),
                   "concat: incompatible shapes");
        c_total += p.c();
    }
    Tensor out(parts[0].n(), c_total, parts[0].h(), parts[0].w());
    for (int n = 0; n < out.n(); ++n) {
        int co = 0;
        for (const auto& p : parts)
            for (int c = 0; c < p.c(); ++c, ++co)
                std::memcpy(out.ptr(n, co, 0, 0), p.ptr(n, c, 0, 0),
                            sizeof(double) * static_cast<std::size_t>(p.h()) * p.w());
    }
    return out;
}

inline Tensor slice_channels(const Tensor& a, int c0, int c1) {
    ZAUG_CHECK(0 <= c0 && c0 < c1 && c1 <= a.c(), "slice: bad channel range");
    Tensor out(a.n(), c1 - c0, a.h(), a.w());
    for (int n = 0; n < a.n(); ++n)
        for (int c = c0; c < c1; ++c)
            std::memcpy(out.ptr(n, c - c0, 0, 0), a.ptr(n, c, 0, 0),
                        sizeof(double) * static_cast<std::size_t>(a.h()) * a.w());
    return out;
}

// -------------------------------------------------------------------------
// convolution family: im2col + GEMM (Eigen)
// -------------------------------------------------------------------------

inline int conv_out_dim(int in, int k, int stride, int pad) {
    const int span = in + 2 * pad - k;
    ZAUG_CHECK(span >= 0, "conv: size ", in, " incompatible with k=", k, " s=", stride, " p=", pad);
    return span / stride + 1;
}

// col layout: rows = C*kh*kw, cols = oh*ow (row-major)
inline void im2col(const Tensor& x, int sample, int k, int stride, int pad, std::vector<double>& col, int oh, int ow) {
    const int C = x.c(), H = x.h(), W = x.w();
    col.assign(static_cast<std::size_t>(C) * k * k * oh * ow, 0.0);
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                double* dst = col.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) { dst += ow; continue; }
                    for (int ox = 0; ox < ow; ++ox, ++dst) {
                        const int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < W) *dst = x.at(sample, c, iy, ix);
                    }
                }
            }
}

inline void col2im_add(const std::vector<double>& col, Tensor& x, int sample, int k, int stride, int pad, int oh, int ow) {
    const int C = x.c(), H = x.h(), W = x.w();
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const double* src = col.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) { src += ow; continue; }
                    for (int ox = 0; ox < ow; ++ox, ++src) {
                        const int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < W) x.at(sample, c, iy, ix) += *src;
                    }
                }
            }
}

// weight layout: [Co, Ci, k, k]; bias optional [1, Co, 1, 1]
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad) {
    ZAUG_CHECK(w.c() == x.c(), "conv2d: in-channel mismatch (weight ", w.shape_str(), ", input ", x.shape_str(), ")");
    ZAUG_CHECK(w.h() == w.w(), "conv2d: non-square kernel");
    const int k = w.h(), Co = w.n(), Ci = x.c();
    const int oh = conv_out_dim(x.h(), k, stride, pad);
    const int ow = conv_out_dim(x.w(), k, stride, pad);
    Tensor out(x.n(), Co, oh, ow);
    std::vector<double> col;
    ECMap W(w.begin(), Co, static_cast<Eigen::Index>(Ci) * k * k);
    for (int n = 0; n < x.n(); ++n) {
        im2col(x, n, k, stride, pad, col, oh, ow);
        ECMap colm(col.data(), static_cast<Eigen::Index>(Ci) * k * k, static_cast<Eigen::Index>(oh) * ow);
        EMap O(out.ptr(n, 0, 0, 0), Co, static_cast<Eigen::Index>(oh) * ow);
        O.noalias() = W * colm;
    }
    if (bias) {
        ZAUG_CHECK(bias->c() == Co && bias->n() == 1 && bias->h() == 1 && bias->w() == 1, "conv2d: bad bias shape");
        for (int n = 0; n < out.n(); ++n)
            for (int c = 0; c < Co; ++c) {
                const double b = (*bias)[static_cast<std::size_t>(c)];
                double* p = &out.at(n, c, 0, 0);
                for (int i = 0; i < oh * ow; ++i) p[i] += b;
            }
    }
    return out;
}

// adjoint of conv2d in its input: maps [N,Co,oh,ow] back to [N,Ci,H,W].
// Also serves as the forward pass of transposed convolution.
inline Tensor conv2d_input_grad(const Tensor& dy, const Tensor& w, int in_h, int in_w, int stride, int pad) {
    const int k = w.h(), Co = w.n(), Ci = w.c();
    ZAUG_CHECK(dy.c() == Co, "deconv: channel mismatch");
    const int oh = dy.h(), ow = dy.w();
    ZAUG_CHECK(conv_out_dim(in_h, k, stride, pad) == oh && conv_out_dim(in_w, k, stride, pad) == ow,
               "deconv: output size does not match conv geometry");
    Tensor dx(dy.n(), Ci, in_h, in_w);
    std::vector<double> col(static_cast<std::size_t>(Ci) * k * k * oh * ow);
    ECMap W(w.begin(), Co, static_cast<Eigen::Index>(Ci) * k * k);
    for (int n = 0; n < dy.n(); ++n) {
        ECMap dY(dy.ptr(n, 0, 0, 0), Co, static_cast<Eigen::Index>(oh) * ow);
        EMap colm(col.data(), static_cast<Eigen::Index>(Ci) * k * k, static_cast<Eigen::Index>(oh) * ow);
        colm.noalias() = W.transpose() * dY;
        col2im_add(col, dx, n, k, stride, pad, oh, ow);
    }
    return dx;
}

inline Tensor conv2d_weight_grad(const Tensor& x, const Tensor& dy, int k, int stride, int pad) {
    const int Ci = x.c(), Co = dy.c();
    const int oh = dy.h(), ow = dy.w();
    Tensor dw(Co, Ci, k, k);
    std::vector<double> col;
    EMap dW(dw.begin(), Co, static_cast<Eigen::Index>(Ci) * k * k);
    for (int n = 0; n < x.n(); ++n) {
        im2col(x, n, k, stride, pad, col, oh, ow);
        ECMap colm(col.data(), static_cast<Eigen::Index>(Ci) * k * k, static_cast<Eigen::Index>(oh) * ow);
        ECMap dY(dy.ptr(n, 0, 0, 0), Co, static_cast<Eigen::Index>(oh) * ow);
        dW.noalias() += dY * colm.transpose();
    }
    return dw;
}

// -------------------------------------------------------------------------
// bilinear resize (half-pixel convention) and its exact adjoint
// -------------------------------------------------------------------------

struct BilinearTap {
    int i0, i1;
    double f;  // weight of i1
};

inline BilinearTap bilinear_tap(int dst, int out_dim, int in_dim) {
    const double src = (dst + 0.5) * static_cast<double>(in_dim) / out_dim - 0.5;
    double s = std::min(std::max(src, 0.0), static_cast<double>(in_dim - 1));
    int i0 = static_cast<int>(std::floor(s));
    if (i0 > in_dim - 2) i0 = std::max(in_dim - 2, 0);
    int i1 = std::min(i0 + 1, in_dim - 1);
    return {i0, i1, s - i0};
}

inline Tensor resize_bilinear(const Tensor& x, int oh, int ow) {
    if (oh == x.h() && ow == x.w()) return x.clone();
    Tensor out(x.n(), x.c(), oh, ow);
    std::vector<BilinearTap> ty(static_cast<std::size_t>(oh)), tx(static_cast<std::size_t>(ow));
    for (int y = 0; y < oh; ++y) ty[static_cast<std::size_t>(y)] = bilinear_tap(y, oh, x.h());
    for (int xx = 0; xx < ow; ++xx) tx[static_cast<std::size_t>(xx)] = bilinear_tap(xx, ow, x.w());
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
            for (int y = 0; y < oh; ++y) {
                const auto& a = ty[static_cast<std::size_t>(y)];
                for (int xx = 0; xx < ow; ++xx) {
                    const auto& b = tx[static_cast<std::size_t>(xx)];
                    out.at(n, c, y, xx) =
                        (1 - a.f) * ((1 - b.f) * x.at(n, c, a.i0, b.i0) + b.f * x.at(n, c, a.i0, b.i1)) +
                        a.f * ((1 - b.f) * x.at(n, c, a.i1, b.i0) + b.f * x.at(n, c, a.i1, b.i1));
                }
            }
    return out;
}

inline Tensor resize_bilinear_adjoint(const Tensor& g, int in_h, int in_w) {
    if (g.h() == in_h && g.w() == in_w) return g.clone();
    Tensor out(g.n(), g.c(), in_h, in_w);
    std::vector<BilinearTap> ty(static_cast<std::size_t>(g.h())), tx(static_cast<std::size_t>(g.w()));
    for (int y = 0; y < g.h(); ++y) ty[static_cast<std::size_t>(y)] = bilinear_tap(y, g.h(), in_h);
    for (int xx = 0; xx < g.w(); ++xx) tx[static_cast<std::size_t>(xx)] = bilinear_tap(xx, g.w(), in_w);
    for (int n = 0; n < g.n(); ++n)
        for (int c = 0; c < g.c(); ++c)
            for (int y = 0; y < g.h(); ++y) {
                const auto& a = ty[static_cast<std::size_t>(y)];
                for (int xx = 0; xx < g.w(); ++xx) {
                    const auto& b = tx[static_cast<std::size_t>(xx)];
                    const double v = g.at(n, c, y, xx);
                    out.at(n, c, a.i0, b.i0) += (1 - a.f) * (1 - b.f) * v;
                    out.at(n, c, a.i0, b.i1) += (1 - a.f) * b.f * v;
                    out.at(n, c, a.i1, b.i0) += a.f * (1 - b.f) * v;
                    out.at(n, c, a.i1, b.i1) += a.f * b.f * v;
                }
            }
    return out;
}

// -------------------------------------------------------------------------
// reflect padding (edge not repeated) and adjoint
// -------------------------------------------------------------------------

inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

inline Tensor pad_reflect(const Tensor& x, int pt, int pb, int pl, int pr) {
    Tensor out(x.n(), x.c(), x.h() + pt + pb, x.w() + pl + pr);
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
            for (int y = 0; y < out.h(); ++y) {
                const int sy = reflect_index(y - pt, x.h());
                for (int xx = 0; xx < out.w(); ++xx)
                    out.at(n, c, y, xx) = x.at(n, c, sy, reflect_index(xx - pl, x.w()));
            }
    return out;
}

inline Tensor pad_reflect_adjoint(const Tensor& g, int in_h, int in_w, int pt, int pl) {
    Tensor out(g.n(), g.c(), in_h, in_w);
    for (int n = 0; n < g.n(); ++n)
        for (int c = 0; c < g.c(); ++c)
            for (int y = 0; y < g.h(); ++y) {
                const int sy = reflect_index(y - pt, in_h);
                for (int xx = 0; xx < g.w(); ++xx)
                    out.at(n, c, sy, reflect_index(xx - pl, in_w)) += g.at(n, c, y, xx);
            }
    return out;
}

// zero-insert 2x upsampling (even positions carry the source pixels)
inline Tensor upsample_zero2(const Tensor& x) {
    Tensor out(x.n(), x.c(), 2 * x.h(), 2 * x.w());
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
            for (int y = 0; y < x.h(); ++y)
                for (int xx = 0; xx < x.w(); ++xx) out.at(n, c, 2 * y, 2 * xx) = x.at(n, c, y, xx);
    return out;
}

inline Tensor upsample_zero2_adjoint(const Tensor& g) {
    Tensor out(g.n(), g.c(), g.h() / 2, g.w() / 2);
    for (int n = 0; n < g.n(); ++n)
        for (int c = 0; c < g.c(); ++c)
            for (int y = 0; y < out.h(); ++y)
                for (int xx = 0; xx < out.w(); ++xx) out.at(n, c, y, xx) = g.at(n, c, 2 * y, 2 * xx);
    return out;
}

// -------------------------------------------------------------------------
// backward warping: out(p) = bilinear sample of I at p + F(p).
// F has 2 channels (dx, dy) in pixels; samples outside the frame replicate
// the border (coordinates clamped before the bilinear fetch).
// -------------------------------------------------------------------------

// clamp that also maps non-finite coordinates to the lower bound, so a
// diverged flow cannot index out of range
inline double clamp_coord(double v, double hi) {
    if (!(v >= 0.0)) return 0.0;
    return v > hi ? hi : v;
}

inline Tensor backward_warp(const Tensor& img, const Tensor& flow) {
    ZAUG_CHECK(flow.c() == 2, "warp: flow must have 2 channels");
    ZAUG_CHECK(img.n() == flow.n() && img.h() == flow.h() && img.w() == flow.w(),
               "warp: image ", img.shape_str(), " and flow ", flow.shape_str(), " differ");
    const int H = img.h(), W = img.w();
    Tensor out(img.n(), img.c(), H, W);
    for (int n = 0; n < img.n(); ++n)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const double sx = clamp_coord(x + flow.at(n, 0, y, x), W - 1);
                const double sy = clamp_coord(y + flow.at(n, 1, y, x), H - 1);
                int x0 = static_cast<int>(std::floor(sx));
                int y0 = static_cast<int>(std::floor(sy));
                if (x0 > W - 2) x0 = std::max(W - 2, 0);
                if (y0 > H - 2) y0 = std::max(H - 2, 0);
                const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
                const double fx = sx - x0, fy = sy - y0;
                for (int c = 0; c < img.c(); ++c)
                    out.at(n, c, y, x) =
                        (1 - fy) * ((1 - fx) * img.at(n, c, y0, x0) + fx * img.at(n, c, y0, x1)) +
                        fy * ((1 - fx) * img.at(n, c, y1, x0) + fx * img.at(n, c, y1, x1));
            }
    return out;
}

// gradients of backward_warp: d_img via scatter of the bilinear weights,
// d_flow via the local spatial derivative of the sampled patch.
inline void backward_warp_grads(const Tensor& img, const Tensor& flow, const Tensor& gout,
                                Tensor* d_img, Tensor* d_flow) {
    const int H = img.h(), W = img.w();
    if (d_img) *d_img = Tensor::zeros(img.n(), img.c(), H, W);
    if (d_flow) *d_flow = Tensor::zeros(flow.n(), 2, H, W);
    for (int n = 0; n < img.n(); ++n)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const double rx = x + flow.at(n, 0, y, x);
                const double ry = y + flow.at(n, 1, y, x);
                const bool inx = rx > 0.0 && rx < W - 1;  // clamp kills the flow gradient
                const bool iny = ry > 0.0 && ry < H - 1;
                const double sx = clamp_coord(rx, W - 1);
                const double sy = clamp_coord(ry, H - 1);
                int x0 = static_cast<int>(std::floor(sx));
                int y0 = static_cast<int>(std::floor(sy));
                if (x0 > W - 2) x0 = std::max(W - 2, 0);
                if (y0 > H - 2) y0 = std::max(H - 2, 0);
                const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
                const double fx = sx - x0, fy = sy - y0;
                double gdx = 0.0, gdy = 0.0;
                for (int c = 0; c < img.c(); ++c) {
                    const double g = gout.at(n, c, y, x);
                    const double v00 = img.at(n, c, y0, x0), v01 = img.at(n, c, y0, x1);
                    const double v10 = img.at(n, c, y1, x0), v11 = img.at(n, c, y1, x1);
                    if (d_img) {
                        d_img->at(n, c, y0, x0) += g * (1 - fy) * (1 - fx);
                        d_img->at(n, c, y0, x1) += g * (1 - fy) * fx;
                        d_img->at(n, c, y1, x0) += g * fy * (1 - fx);
                        d_img->at(n, c, y1, x1) += g * fy * fx;
                    }
                    gdx += g * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
                    gdy += g * ((1 - fx) * (v10 - v00) + fx * (v11 - v01));
                }
                if (d_flow) {
                    d_flow->at(n, 0, y, x) = inx ? gdx : 0.0;
                    d_flow->at(n, 1, y, x) = iny ? gdy : 0.0;
                }
            }
}

inline Tensor uniform_init(int n, int c, int h, int w, double lo, double hi, Rng& rng) {
    Tensor t(n, c, h, w);
    for (double* p = t.begin(); p != t.end(); ++p) *p = rng.uniform(lo, hi);
    return t;
}

}  // namespace tensor_ops
}  // namespace zaug

#endif
