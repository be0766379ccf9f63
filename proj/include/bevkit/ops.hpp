#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "bevkit/tensor.hpp"

namespace bevkit {

inline constexpr double kNormEpsilon = 1e-5;

namespace detail {

// Views a 3-D (C,H,W) or 4-D (N,C,H,W) tensor uniformly as N,C,H,W.
struct Nchw {
    int n, c, h, w;
    bool batched;
};

template <typename T>
Nchw as_nchw(const Tensor<T>& x, const char* op) {
    if (x->shape.size() == 3) return {1, x->shape[0], x->shape[1], x->shape[2], false};
    if (x->shape.size() == 4) return {x->shape[0], x->shape[1], x->shape[2], x->shape[3], true};
    throw std::invalid_argument(std::string(op) + ": expected (C,H,W) or (N,C,H,W) tensor");
}

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

}  // namespace detail

// Cross-correlation with stride and zero padding. x: (N,C,H,W) or (C,H,W),
// w: (K,C,kh,kw), b: (K). Registers backward for x, w and b.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride = 1,
                 int pad = 0) {
    const auto in = detail::as_nchw(x, "conv2d");
    if (w->shape.size() != 4) throw std::invalid_argument("conv2d: weight must be (K,C,kh,kw)");
    const int kout = w->shape[0], kc = w->shape[1], kh = w->shape[2], kw = w->shape[3];
    if (kc != in.c) throw std::invalid_argument("conv2d: weight channel count != input channels");
    if (b->shape != std::vector<int>{kout}) throw std::invalid_argument("conv2d: bias must be (K)");
    if (kh > in.h + 2 * pad || kw > in.w + 2 * pad)
        throw std::invalid_argument("conv2d: kernel exceeds padded input");
    const int oh = detail::conv_out_dim(in.h, kh, stride, pad);
    const int ow = detail::conv_out_dim(in.w, kw, stride, pad);
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: empty output");

    std::vector<int> out_shape =
        in.batched ? std::vector<int>{in.n, kout, oh, ow} : std::vector<int>{kout, oh, ow};

    auto out = detail::make_op_node<T>(out_shape, {x, w, b}, [x, w, b, in, kout, kh, kw, stride, pad,
                                                              oh, ow](TensorNode<T>& self) {
        T* gx = x->requires_grad ? x->grad_data() : nullptr;
        T* gw = w->requires_grad ? w->grad_data() : nullptr;
        T* gb = b->requires_grad ? b->grad_data() : nullptr;
        const std::size_t in_plane = static_cast<std::size_t>(in.h) * in.w;
        const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
        for (int n = 0; n < in.n; ++n) {
            const T* xd = x->data.data() + static_cast<std::size_t>(n) * in.c * in_plane;
            T* gxd = gx ? gx + static_cast<std::size_t>(n) * in.c * in_plane : nullptr;
            const T* gyd = self.grad.data() + static_cast<std::size_t>(n) * kout * out_plane;
            for (int k = 0; k < kout; ++k) {
                for (int oy = 0; oy < oh; ++oy) {
                    for (int ox = 0; ox < ow; ++ox) {
                        const T g = gyd[(static_cast<std::size_t>(k) * oh + oy) * ow + ox];
                        if (g == T(0)) continue;
                        if (gb) gb[k] += g;
                        const int y0 = oy * stride - pad, x0 = ox * stride - pad;
                        for (int c = 0; c < in.c; ++c) {
                            const T* xc = xd + static_cast<std::size_t>(c) * in_plane;
                            T* gxc = gxd ? gxd + static_cast<std::size_t>(c) * in_plane : nullptr;
                            const std::size_t wbase =
                                ((static_cast<std::size_t>(k) * in.c + c) * kh) * kw;
                            for (int ky = 0; ky < kh; ++ky) {
                                const int yy = y0 + ky;
                                if (yy < 0 || yy >= in.h) continue;
                                for (int kx = 0; kx < kw; ++kx) {
                                    const int xx = x0 + kx;
                                    if (xx < 0 || xx >= in.w) continue;
                                    const std::size_t wi = wbase + static_cast<std::size_t>(ky) * kw + kx;
                                    if (gw) gw[wi] += g * xc[static_cast<std::size_t>(yy) * in.w + xx];
                                    if (gxc)
                                        gxc[static_cast<std::size_t>(yy) * in.w + xx] +=
                                            g * w->data[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    const std::size_t in_plane = static_cast<std::size_t>(in.h) * in.w;
    const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
    for (int n = 0; n < in.n; ++n) {
        const T* xd = x->data.data() + static_cast<std::size_t>(n) * in.c * in_plane;
        T* yd = out->data.data() + static_cast<std::size_t>(n) * kout * out_plane;
        for (int k = 0; k < kout; ++k) {
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    T acc = b->data[k];
                    const int y0 = oy * stride - pad, x0 = ox * stride - pad;
                    for (int c = 0; c < in.c; ++c) {
                        const T* xc = xd + static_cast<std::size_t>(c) * in_plane;
                        const std::size_t wbase = ((static_cast<std::size_t>(k) * in.c + c) * kh) * kw;
                        for (int ky = 0; ky < kh; ++ky) {
                            const int yy = y0 + ky;
                            if (yy < 0 || yy >= in.h) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int xx = x0 + kx;
                                if (xx < 0 || xx >= in.w) continue;
                                acc += w->data[wbase + static_cast<std::size_t>(ky) * kw + kx] *
                                       xc[static_cast<std::size_t>(yy) * in.w + xx];
                            }
                        }
                    }
                    yd[(static_cast<std::size_t>(k) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    return out;
}

// Per-channel spatial convolution. x: (C,H,W) or (N,C,H,W); w: (C,1,kh,kw); b: (C).
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                           int stride = 1, int pad = 0) {
    const auto in = detail::as_nchw(x, "depthwise_conv2d");
    if (w->shape.size() != 4 || w->shape[0] != in.c || w->shape[1] != 1)
        throw std::invalid_argument("depthwise_conv2d: weight must be (C,1,kh,kw)");
    const int kh = w->shape[2], kw = w->shape[3];
    if (b->shape != std::vector<int>{in.c}) throw std::invalid_argument("depthwise_conv2d: bias must be (C)");
    const int oh = detail::conv_out_dim(in.h, kh, stride, pad);
    const int ow = detail::conv_out_dim(in.w, kw, stride, pad);
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("depthwise_conv2d: empty output");
    std::vector<int> out_shape =
        in.batched ? std::vector<int>{in.n, in.c, oh, ow} : std::vector<int>{in.c, oh, ow};

    auto out = detail::make_op_node<T>(out_shape, {x, w, b}, [x, w, b, in, kh, kw, stride, pad, oh,
                                                              ow](TensorNode<T>& self) {
        T* gx = x->requires_grad ? x->grad_data() : nullptr;
        T* gw = w->requires_grad ? w->grad_data() : nullptr;
        T* gb = b->requires_grad ? b->grad_data() : nullptr;
        const std::size_t in_plane = static_cast<std::size_t>(in.h) * in.w;
        const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
        for (int n = 0; n < in.n; ++n) {
            for (int c = 0; c < in.c; ++c) {
                const std::size_t xoff = (static_cast<std::size_t>(n) * in.c + c) * in_plane;
                const std::size_t yoff = (static_cast<std::size_t>(n) * in.c + c) * out_plane;
                for (int oy = 0; oy < oh; ++oy) {
                    for (int ox = 0; ox < ow; ++ox) {
                        const T g = self.grad[yoff + static_cast<std::size_t>(oy) * ow + ox];
                        if (g == T(0)) continue;
                        if (gb) gb[c] += g;
                        const int y0 = oy * stride - pad, x0 = ox * stride - pad;
                        for (int ky = 0; ky < kh; ++ky) {
                            const int yy = y0 + ky;
                            if (yy < 0 || yy >= in.h) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int xx = x0 + kx;
                                if (xx < 0 || xx >= in.w) continue;
                                const std::size_t wi =
                                    (static_cast<std::size_t>(c) * kh + ky) * kw + kx;
                                if (gw)
                                    gw[wi] += g * x->data[xoff + static_cast<std::size_t>(yy) * in.w + xx];
                                if (gx)
                                    gx[xoff + static_cast<std::size_t>(yy) * in.w + xx] +=
                                        g * w->data[wi];
                            }
                        }
                    }
                }
            }
        }
    });

    const std::size_t in_plane = static_cast<std::size_t>(in.h) * in.w;
    const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
    for (int n = 0; n < in.n; ++n) {
        for (int c = 0; c < in.c; ++c) {
            const std::size_t xoff = (static_cast<std::size_t>(n) * in.c + c) * in_plane;
            const std::size_t yoff = (static_cast<std::size_t>(n) * in.c + c) * out_plane;
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    T acc = b->data[c];
                    const int y0 = oy * stride - pad, x0 = ox * stride - pad;
                    for (int ky = 0; ky < kh; ++ky) {
                        const int yy = y0 + ky;
                        if (yy < 0 || yy >= in.h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int xx = x0 + kx;
                            if (xx < 0 || xx >= in.w) continue;
                            acc += w->data[(static_cast<std::size_t>(c) * kh + ky) * kw + kx] *
                                   x->data[xoff + static_cast<std::size_t>(yy) * in.w + xx];
                        }
                    }
                    out->data[yoff + static_cast<std::size_t>(oy) * ow + ox] = acc;
                }
            }
        }
    }
    return out;
}

// Depthwise 3x3 (or kxk) followed by a 1x1 pointwise mix.
template <typename T>
Tensor<T> depthwise_separable_conv(const Tensor<T>& x, const Tensor<T>& w_dw, const Tensor<T>& b_dw,
                                   const Tensor<T>& w_pw, const Tensor<T>& b_pw) {
    const int k = w_dw->shape[2];
    return conv2d(depthwise_conv2d(x, w_dw, b_dw, 1, k / 2), w_pw, b_pw, 1, 0);
}

// Affine map over the last dimension. x: (..., D), w: (D, E), b: (E).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (w->shape.size() != 2) throw std::invalid_argument("linear: weight must be (D,E)");
    const int d = w->shape[0], e = w->shape[1];
    if (x->shape.empty() || x->shape.back() != d)
        throw std::invalid_argument("linear: input last dim != weight rows");
    if (b->shape != std::vector<int>{e}) throw std::invalid_argument("linear: bias must be (E)");
    const std::size_t rows = x->numel() / d;
    std::vector<int> out_shape = x->shape;
    out_shape.back() = e;

    auto out = detail::make_op_node<T>(out_shape, {x, w, b}, [x, w, b, d, e, rows](TensorNode<T>& self) {
        T* gx = x->requires_grad ? x->grad_data() : nullptr;
        T* gw = w->requires_grad ? w->grad_data() : nullptr;
        T* gb = b->requires_grad ? b->grad_data() : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
            const T* gy = self.grad.data() + r * e;
            const T* xr = x->data.data() + r * d;
            if (gb)
                for (int j = 0; j < e; ++j) gb[j] += gy[j];
            for (int i = 0; i < d; ++i) {
                const T* wrow = w->data.data() + static_cast<std::size_t>(i) * e;
                if (gx) {
                    T acc = T(0);
                    for (int j = 0; j < e; ++j) acc += gy[j] * wrow[j];
                    gx[r * d + i] += acc;
                }
                if (gw) {
                    T* gwrow = gw + static_cast<std::size_t>(i) * e;
                    const T xv = xr[i];
                    for (int j = 0; j < e; ++j) gwrow[j] += xv * gy[j];
                }
            }
        }
    });

    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x->data.data() + r * d;
        T* yr = out->data.data() + r * e;
        for (int j = 0; j < e; ++j) yr[j] = b->data[j];
        for (int i = 0; i < d; ++i) {
            const T xv = xr[i];
            if (xv == T(0)) continue;
            const T* wrow = w->data.data() + static_cast<std::size_t>(i) * e;
            for (int j = 0; j < e; ++j) yr[j] += xv * wrow[j];
        }
    }
    return out;
}

// Layer normalization over one axis with learned per-element affine.
// gamma/beta have length shape[axis].
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, int axis) {
    if (axis < 0) axis += static_cast<int>(x->shape.size());
    if (axis < 0 || axis >= static_cast<int>(x->shape.size()))
        throw std::invalid_argument("layer_norm: axis out of range");
    const int dim = x->shape[axis];
    if (gamma->shape != std::vector<int>{dim} || beta->shape != std::vector<int>{dim})
        throw std::invalid_argument("layer_norm: gamma/beta must have length shape[axis]");
    std::size_t inner = 1, outer = 1;
    for (int i = axis + 1; i < static_cast<int>(x->shape.size()); ++i) inner *= x->shape[i];
    for (int i = 0; i < axis; ++i) outer *= x->shape[i];
    const T eps = static_cast<T>(kNormEpsilon);

    auto out = detail::make_op_node<T>(x->shape, {x, gamma, beta}, [x, gamma, beta, dim, inner, outer,
                                                                    eps](TensorNode<T>& self) {
        T* gx = x->requires_grad ? x->grad_data() : nullptr;
        T* gg = gamma->requires_grad ? gamma->grad_data() : nullptr;
        T* gb = beta->requires_grad ? beta->grad_data() : nullptr;
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * dim * inner + in;
                T mean = T(0), var = T(0);
                for (int k = 0; k < dim; ++k) mean += x->data[base + k * inner];
                mean /= dim;
                for (int k = 0; k < dim; ++k) {
                    const T d = x->data[base + k * inner] - mean;
                    var += d * d;
                }
                var /= dim;
                const T inv = T(1) / std::sqrt(var + eps);
                T sum_gyg = T(0), sum_gyg_xhat = T(0);
                for (int k = 0; k < dim; ++k) {
                    const T xhat = (x->data[base + k * inner] - mean) * inv;
                    const T gy = self.grad[base + k * inner];
                    const T gyg = gy * gamma->data[k];
                    sum_gyg += gyg;
                    sum_gyg_xhat += gyg * xhat;
                    if (gg) gg[k] += gy * xhat;
                    if (gb) gb[k] += gy;
                }
                if (gx) {
                    for (int k = 0; k < dim; ++k) {
                        const T xhat = (x->data[base + k * inner] - mean) * inv;
                        const T gyg = self.grad[base + k * inner] * gamma->data[k];
                        gx[base + k * inner] +=
                            inv * (gyg - sum_gyg / dim - xhat * sum_gyg_xhat / dim);
                    }
                }
            }
        }
    });

    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * dim * inner + in;
            T mean = T(0), var = T(0);
            for (int k = 0; k < dim; ++k) mean += x->data[base + k * inner];
            mean /= dim;
            for (int k = 0; k < dim; ++k) {
                const T d = x->data[base + k * inner] - mean;
                var += d * d;
            }
            var /= dim;
            const T inv = T(1) / std::sqrt(var + eps);
            for (int k = 0; k < dim; ++k)
                out->data[base + k * inner] =
                    gamma->data[k] * (x->data[base + k * inner] - mean) * inv + beta->data[k];
        }
    }
    return out;
}

inline constexpr double kBatchNormMomentum = 0.1;

// Batch normalization over all non-channel dims. Channel axis is 1 for 4-D
// input and 0 for 3-D input. Train mode normalizes with batch statistics and
// folds them into the running buffers (plain tensors so they ride along in
// checkpoints); eval mode normalizes with the running buffers.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     const Tensor<T>& running_mean, const Tensor<T>& running_var, bool training,
                     double momentum = kBatchNormMomentum) {
    const auto in = detail::as_nchw(x, "batch_norm");
    const int c = in.c;
    if (gamma->shape != std::vector<int>{c} || beta->shape != std::vector<int>{c})
        throw std::invalid_argument("batch_norm: gamma/beta must have length C");
    if (running_mean->shape != std::vector<int>{c} || running_var->shape != std::vector<int>{c})
        throw std::invalid_argument("batch_norm: running stats must have length C");
    const std::size_t plane = static_cast<std::size_t>(in.h) * in.w;
    const std::size_t count = static_cast<std::size_t>(in.n) * plane;
    const T eps = static_cast<T>(kNormEpsilon);

    std::vector<T> mean(c), var(c);
    if (training) {
        for (int ch = 0; ch < c; ++ch) {
            T m = T(0);
            for (int n = 0; n < in.n; ++n) {
                const T* xd = x->data.data() + (static_cast<std::size_t>(n) * c + ch) * plane;
                for (std::size_t i = 0; i < plane; ++i) m += xd[i];
            }
            m /= static_cast<T>(count);
            T v = T(0);
            for (int n = 0; n < in.n; ++n) {
                const T* xd = x->data.data() + (static_cast<std::size_t>(n) * c + ch) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const T d = xd[i] - m;
                    v += d * d;
                }
            }
            v /= static_cast<T>(count);
            mean[ch] = m;
            var[ch] = v;
            running_mean->data[ch] =
                static_cast<T>((1.0 - momentum) * running_mean->data[ch] + momentum * m);
            running_var->data[ch] =
                static_cast<T>((1.0 - momentum) * running_var->data[ch] + momentum * v);
        }
    } else {
        mean = running_mean->data;
        var = running_var->data;
    }

    auto out = detail::make_op_node<T>(
        x->shape, {x, gamma, beta},
        [x, gamma, beta, in, mean, var, eps, training, plane, count](TensorNode<T>& self) {
            T* gx = x->requires_grad ? x->grad_data() : nullptr;
            T* gg = gamma->requires_grad ? gamma->grad_data() : nullptr;
            T* gb = beta->requires_grad ? beta->grad_data() : nullptr;
            const int c = in.c;
            for (int ch = 0; ch < c; ++ch) {
                const T inv = T(1) / std::sqrt(var[ch] + eps);
                T sum_gy = T(0), sum_gy_xhat = T(0);
                for (int n = 0; n < in.n; ++n) {
                    const std::size_t off = (static_cast<std::size_t>(n) * c + ch) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        const T gy = self.grad[off + i];
                        const T xhat = (x->data[off + i] - mean[ch]) * inv;
                        sum_gy += gy;
                        sum_gy_xhat += gy * xhat;
                        if (gg) gg[ch] += gy * xhat;
                        if (gb) gb[ch] += gy;
                    }
                }
                if (!gx) continue;
                const T g = gamma->data[ch];
                for (int n = 0; n < in.n; ++n) {
                    const std::size_t off = (static_cast<std::size_t>(n) * c + ch) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        const T gy = self.grad[off + i];
                        const T xhat = (x->data[off + i] - mean[ch]) * inv;
                        if (training)
                            gx[off + i] += g * inv *
                                           (gy - sum_gy / static_cast<T>(count) -
                                            xhat * sum_gy_xhat / static_cast<T>(count));
                        else
                            gx[off + i] += g * inv * gy;
                    }
                }
            }
        });

    for (int ch = 0; ch < c; ++ch) {
        const T inv = T(1) / std::sqrt(var[ch] + eps);
        for (int n = 0; n < in.n; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i)
                out->data[off + i] =
                    gamma->data[ch] * (x->data[off + i] - mean[ch]) * inv + beta->data[ch];
        }
    }
    return out;
}

// k x k average pooling with stride k (floor semantics).
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, int k) {
    const auto in = detail::as_nchw(x, "avg_pool2d");
    if (k <= 0) throw std::invalid_argument("avg_pool2d: k must be positive");
    const int oh = in.h / k, ow = in.w / k;
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("avg_pool2d: empty output");
    std::vector<int> out_shape =
        in.batched ? std::vector<int>{in.n, in.c, oh, ow} : std::vector<int>{in.c, oh, ow};
    const T inv = T(1) / static_cast<T>(k * k);

    auto out = detail::make_op_node<T>(out_shape, {x}, [x, in, k, oh, ow, inv](TensorNode<T>& self) {
        T* gx = x->grad_data();
        const std::size_t nc = static_cast<std::size_t>(in.n) * in.c;
        for (std::size_t p = 0; p < nc; ++p) {
            const std::size_t xoff = p * in.h * in.w;
            const std::size_t yoff = p * oh * ow;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    const T g = self.grad[yoff + static_cast<std::size_t>(oy) * ow + ox] * inv;
                    for (int dy = 0; dy < k; ++dy)
                        for (int dx = 0; dx < k; ++dx)
                            gx[xoff + static_cast<std::size_t>(oy * k + dy) * in.w + ox * k + dx] += g;
                }
        }
    });

    const std::size_t nc = static_cast<std::size_t>(in.n) * in.c;
    for (std::size_t p = 0; p < nc; ++p) {
        const std::size_t xoff = p * in.h * in.w;
        const std::size_t yoff = p * oh * ow;
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                T acc = T(0);
                for (int dy = 0; dy < k; ++dy)
                    for (int dx = 0; dx < k; ++dx)
                        acc += x->data[xoff + static_cast<std::size_t>(oy * k + dy) * in.w + ox * k + dx];
                out->data[yoff + static_cast<std::size_t>(oy) * ow + ox] = acc * inv;
            }
    }
    return out;
}

// Zero padding of the two trailing spatial dims: (left, right, top, bottom).
template <typename T>
Tensor<T> pad2d(const Tensor<T>& x, int left, int right, int top, int bottom) {
    const auto in = detail::as_nchw(x, "pad2d");
    if (left < 0 || right < 0 || top < 0 || bottom < 0)
        throw std::invalid_argument("pad2d: negative padding");
    const int oh = in.h + top + bottom, ow = in.w + left + right;
    std::vector<int> out_shape =
        in.batched ? std::vector<int>{in.n, in.c, oh, ow} : std::vector<int>{in.c, oh, ow};

    auto out = detail::make_op_node<T>(out_shape, {x}, [x, in, left, top, oh, ow](TensorNode<T>& self) {
        T* gx = x->grad_data();
        const std::size_t nc = static_cast<std::size_t>(in.n) * in.c;
        for (std::size_t p = 0; p < nc; ++p)
            for (int y = 0; y < in.h; ++y)
                for (int xx = 0; xx < in.w; ++xx)
                    gx[(p * in.h + y) * in.w + xx] +=
                        self.grad[(p * oh + y + top) * ow + xx + left];
    });

    const std::size_t nc = static_cast<std::size_t>(in.n) * in.c;
    for (std::size_t p = 0; p < nc; ++p)
        for (int y = 0; y < in.h; ++y)
            for (int xx = 0; xx < in.w; ++xx)
                out->data[(p * oh + y + top) * ow + xx + left] = x->data[(p * in.h + y) * in.w + xx];
    return out;
}

// Crop of the two trailing spatial dims, inverse of pad2d.
template <typename T>
Tensor<T> crop2d(const Tensor<T>& x, int left, int top, int out_h, int out_w) {
    const auto in = detail::as_nchw(x, "crop2d");
    if (left < 0 || top < 0 || left + out_w > in.w || top + out_h > in.h)
        throw std::invalid_argument("crop2d: window out of range");
    std::vector<int> out_shape =
        in.batched ? std::vector<int>{in.n, in.c, out_h, out_w} : std::vector<int>{in.c, out_h, out_w};

    auto out = detail::make_op_node<T>(out_shape, {x}, [x, in, left, top, out_h, out_w](TensorNode<T>& self) {
        T* gx = x->grad_data();
        const std::size_t nc = static_cast<std::size_t>(in.n) * in.c;
        for (std::size_t p = 0; p < nc; ++p)
            for (int y = 0; y < out_h; ++y)
                for (int xx = 0; xx < out_w; ++xx)
                    gx[(p * in.h + y + top) * in.w + xx + left] +=
                        self.grad[(p * out_h + y) * out_w + xx];
    });

    const std::size_t nc = static_cast<std::size_t>(in.n) * in.c;
    for (std::size_t p = 0; p < nc; ++p)
        for (int y = 0; y < out_h; ++y)
            for (int xx = 0; xx < out_w; ++xx)
                out->data[(p * out_h + y) * out_w + xx] = x->data[(p * in.h + y + top) * in.w + xx + left];
    return out;
}

// Nearest-neighbour x2 upsampling of the trailing spatial dims.
template <typename T>
Tensor<T> upsample_nearest2(const Tensor<T>& x) {
    const auto in = detail::as_nchw(x, "upsample_nearest2");
    const int oh = in.h * 2, ow = in.w * 2;
    std::vector<int> out_shape =
        in.batched ? std::vector<int>{in.n, in.c, oh, ow} : std::vector<int>{in.c, oh, ow};

    auto out = detail::make_op_node<T>(out_shape, {x}, [x, in, oh, ow](TensorNode<T>& self) {
        T* gx = x->grad_data();
        const std::size_t nc = static_cast<std::size_t>(in.n) * in.c;
        for (std::size_t p = 0; p < nc; ++p)
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx)
                    gx[(p * in.h + y / 2) * in.w + xx / 2] += self.grad[(p * oh + y) * ow + xx];
    });

    const std::size_t nc = static_cast<std::size_t>(in.n) * in.c;
    for (std::size_t p = 0; p < nc; ++p)
        for (int y = 0; y < oh; ++y)
            for (int xx = 0; xx < ow; ++xx)
                out->data[(p * oh + y) * ow + xx] = x->data[(p * in.h + y / 2) * in.w + xx / 2];
    return out;
}

// Softmax over the channel axis (axis 0 for 3-D, axis 1 for 4-D).
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
    const auto in = detail::as_nchw(x, "softmax_channels");
    const std::size_t plane = static_cast<std::size_t>(in.h) * in.w;

    auto out = detail::make_op_node<T>(x->shape, {x}, [x, in, plane](TensorNode<T>& self) {
        T* gx = x->grad_data();
        for (int n = 0; n < in.n; ++n) {
            const std::size_t base = static_cast<std::size_t>(n) * in.c * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                T dot = T(0);
                for (int c = 0; c < in.c; ++c) {
                    const std::size_t k = base + c * plane + i;
                    dot += self.grad[k] * self.data[k];
                }
                for (int c = 0; c < in.c; ++c) {
                    const std::size_t k = base + c * plane + i;
                    gx[k] += self.data[k] * (self.grad[k] - dot);
                }
            }
        }
    });

    for (int n = 0; n < in.n; ++n) {
        const std::size_t base = static_cast<std::size_t>(n) * in.c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            T hi = x->data[base + i];
            for (int c = 1; c < in.c; ++c) hi = std::max(hi, x->data[base + c * plane + i]);
            T denom = T(0);
            for (int c = 0; c < in.c; ++c) {
                const T e = std::exp(x->data[base + c * plane + i] - hi);
                out->data[base + c * plane + i] = e;
                denom += e;
            }
            for (int c = 0; c < in.c; ++c) out->data[base + c * plane + i] /= denom;
        }
    }
    return out;
}

// Mean cross-entropy of per-cell class logits against an integer target
// raster. logits: (C,H,W) or (N,C,H,W); target length N*H*W.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& target) {
    const auto in = detail::as_nchw(logits, "cross_entropy");
    const std::size_t plane = static_cast<std::size_t>(in.h) * in.w;
    const std::size_t positions = static_cast<std::size_t>(in.n) * plane;
    if (target.size() != positions)
        throw std::invalid_argument("cross_entropy: target length != N*H*W");
    for (int t : target)
        if (t < 0 || t >= in.c)
            throw std::invalid_argument("cross_entropy: class id out of range: " + std::to_string(t));

    auto out = detail::make_op_node<T>({1}, {logits}, [logits, target, in, plane,
                                                       positions](TensorNode<T>& self) {
        T* gx = logits->grad_data();
        const T g = self.grad[0] / static_cast<T>(positions);
        for (int n = 0; n < in.n; ++n) {
            const std::size_t base = static_cast<std::size_t>(n) * in.c * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                T hi = logits->data[base + i];
                for (int c = 1; c < in.c; ++c) hi = std::max(hi, logits->data[base + c * plane + i]);
                T denom = T(0);
                for (int c = 0; c < in.c; ++c)
                    denom += std::exp(logits->data[base + c * plane + i] - hi);
                const int t = target[n * plane + i];
                for (int c = 0; c < in.c; ++c) {
                    const T p = std::exp(logits->data[base + c * plane + i] - hi) / denom;
                    gx[base + c * plane + i] += g * (p - (c == t ? T(1) : T(0)));
                }
            }
        }
    });

    T loss = T(0);
    for (int n = 0; n < in.n; ++n) {
        const std::size_t base = static_cast<std::size_t>(n) * in.c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            T hi = logits->data[base + i];
            for (int c = 1; c < in.c; ++c) hi = std::max(hi, logits->data[base + c * plane + i]);
            T denom = T(0);
            for (int c = 0; c < in.c; ++c) denom += std::exp(logits->data[base + c * plane + i] - hi);
            const int t = target[n * plane + i];
            loss += std::log(denom) + hi - logits->data[base + t * plane + i];
        }
    }
    out->data[0] = loss / static_cast<T>(positions);
    return out;
}

// Mean binary cross-entropy from logits against targets in [0, 1].
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& z, const std::vector<T>& target) {
    if (target.size() != z->numel())
        throw std::invalid_argument("bce_with_logits: target length mismatch");
    const std::size_t n = z->numel();

    auto out = detail::make_op_node<T>({1}, {z}, [z, target, n](TensorNode<T>& self) {
        T* gz = z->grad_data();
        const T g = self.grad[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const T s = T(1) / (T(1) + std::exp(-z->data[i]));
            gz[i] += g * (s - target[i]);
        }
    });

    T loss = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T zi = z->data[i];
        loss += std::max(zi, T(0)) - zi * target[i] + std::log1p(std::exp(-std::abs(zi)));
    }
    out->data[0] = loss / static_cast<T>(n);
    return out;
}

}  // namespace bevkit
