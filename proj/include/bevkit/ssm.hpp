#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "bevkit/ops.hpp"
#include "bevkit/optim.hpp"
#include "bevkit/tensor.hpp"

namespace bevkit {

// Input-dependent selective-scan parameters for one direction. The transition
// is log-parameterized (A = -exp(a_log), always negative) and delta, B, C are
// projected from the input sequence; delta goes through a low-rank bottleneck
// and softplus.
template <typename T>
struct S6Params {
    int dim = 0;        // channels D
    int state_dim = 8;  // N
    int dt_rank = 1;
    Tensor<T> a_log;      // (D, N)
    Tensor<T> d_skip;     // (D)
    Tensor<T> w_dt_down;  // (D, R)
    Tensor<T> w_dt_up;    // (R, D)
    Tensor<T> b_dt;       // (D)
    Tensor<T> w_b;        // (D, N)
    Tensor<T> w_c;        // (D, N)

    static S6Params create(ParamStore<T>& store, const std::string& path, int dim,
                           int state_dim = 8) {
        S6Params p;
        p.dim = dim;
        p.state_dim = state_dim;
        p.dt_rank = std::max(1, dim / 8);
        p.a_log = store.custom(path + ".a_log", {dim, state_dim},
                               [state_dim](std::mt19937_64&, std::vector<T>& data) {
                                   for (std::size_t i = 0; i < data.size(); ++i)
                                       data[i] = static_cast<T>(
                                           std::log(1.0 + static_cast<double>(i % state_dim)));
                               });
        p.d_skip = store.ones(path + ".d_skip", {dim});
        p.w_dt_down = store.weight(path + ".w_dt_down", {dim, p.dt_rank}, dim);
        p.w_dt_up = store.weight(path + ".w_dt_up", {p.dt_rank, dim}, p.dt_rank);
        // softplus(b_dt) lands log-uniformly in [1e-3, 1e-1]
        p.b_dt = store.custom(path + ".b_dt", {dim}, [](std::mt19937_64& rng, std::vector<T>& data) {
            std::uniform_real_distribution<double> u(std::log(1e-3), std::log(1e-1));
            for (auto& v : data) {
                const double dt = std::exp(u(rng));
                v = static_cast<T>(std::log(std::expm1(dt)));
            }
        });
        p.w_b = store.weight(path + ".w_b", {dim, state_dim}, dim);
        p.w_c = store.weight(path + ".w_c", {dim, state_dim}, dim);
        return p;
    }

    std::vector<Tensor<T>> tensors() const {
        return {a_log, d_skip, w_dt_down, w_dt_up, b_dt, w_b, w_c};
    }
};

// Core recurrence as a single tape primitive: per channel d,
//   h_t = exp(delta_t A_d) * h_{t-1} + (delta_t B_t) x_t,  y_t = C_t.h_t + D_d x_t
// with h_0 = 0. Backward runs the adjoint recurrence in reverse.
template <typename T>
Tensor<T> selective_scan_core(const Tensor<T>& x, const Tensor<T>& delta, const Tensor<T>& bmat,
                              const Tensor<T>& cmat, const Tensor<T>& a_neg,
                              const Tensor<T>& d_skip) {
    if (x->shape.size() != 2) throw std::invalid_argument("selective_scan: x must be (L,D)");
    const int l = x->shape[0], d = x->shape[1];
    if (delta->shape != x->shape) throw std::invalid_argument("selective_scan: delta shape mismatch");
    if (a_neg->shape.size() != 2 || a_neg->shape[0] != d)
        throw std::invalid_argument("selective_scan: A must be (D,N)");
    const int n = a_neg->shape[1];
    if (bmat->shape != std::vector<int>{l, n} || cmat->shape != std::vector<int>{l, n})
        throw std::invalid_argument("selective_scan: B/C must be (L,N)");
    if (d_skip->shape != std::vector<int>{d}) throw std::invalid_argument("selective_scan: D must be (D)");

    // forward states and discretized transitions, kept for the backward pass
    // (left empty when no tape is being built)
    auto h_all = std::make_shared<std::vector<T>>();
    auto abar_all = std::make_shared<std::vector<T>>();

    auto out = detail::make_op_node<T>(
        x->shape, {x, delta, bmat, cmat, a_neg, d_skip},
        [x, delta, bmat, cmat, a_neg, d_skip, h_all, abar_all, l, d, n](TensorNode<T>& self) {
            T* gx = x->requires_grad ? x->grad_data() : nullptr;
            T* gdelta = delta->requires_grad ? delta->grad_data() : nullptr;
            T* gb = bmat->requires_grad ? bmat->grad_data() : nullptr;
            T* gc = cmat->requires_grad ? cmat->grad_data() : nullptr;
            T* ga = a_neg->requires_grad ? a_neg->grad_data() : nullptr;
            T* gd = d_skip->requires_grad ? d_skip->grad_data() : nullptr;
            std::vector<T> dh(n);
            for (int ch = 0; ch < d; ++ch) {
                std::fill(dh.begin(), dh.end(), T(0));
                for (int t = l - 1; t >= 0; --t) {
                    const std::size_t td = static_cast<std::size_t>(t) * d + ch;
                    const std::size_t hoff = (static_cast<std::size_t>(t) * d + ch) * n;
                    const T gy = self.grad[td];
                    const T xv = x->data[td];
                    const T dv = delta->data[td];
                    // y_t = C_t . h_t + D x_t
                    if (gd) gd[ch] += gy * xv;
                    if (gx) gx[td] += gy * d_skip->data[ch];
                    for (int k = 0; k < n; ++k) {
                        if (gc) gc[static_cast<std::size_t>(t) * n + k] += gy * (*h_all)[hoff + k];
                        dh[k] += gy * cmat->data[static_cast<std::size_t>(t) * n + k];
                    }
                    // h_t = abar * h_{t-1} + dv * B_t * x_t
                    T ddelta = T(0), dx_state = T(0);
                    for (int k = 0; k < n; ++k) {
                        const T abar = (*abar_all)[hoff + k];
                        const T hprev = t > 0 ? (*h_all)[hoff - static_cast<std::size_t>(d) * n + k] : T(0);
                        const T bk = bmat->data[static_cast<std::size_t>(t) * n + k];
                        const T dhk = dh[k];
                        // via abar = exp(dv * A)
                        const T da_bar = dhk * hprev;
                        if (ga)
                            ga[static_cast<std::size_t>(ch) * n + k] += da_bar * dv * abar;
                        ddelta += da_bar * a_neg->data[static_cast<std::size_t>(ch) * n + k] * abar;
                        // via the input injection
                        ddelta += dhk * bk * xv;
                        if (gb) gb[static_cast<std::size_t>(t) * n + k] += dhk * dv * xv;
                        dx_state += dhk * dv * bk;
                        // carry to h_{t-1}
                        dh[k] = dhk * abar;
                    }
                    if (gdelta) gdelta[td] += ddelta;
                    if (gx) gx[td] += dx_state;
                }
            }
        });

    const bool keep_states = out->requires_grad;
    if (keep_states) {
        h_all->assign(static_cast<std::size_t>(l) * d * n, T(0));
        abar_all->assign(static_cast<std::size_t>(l) * d * n, T(0));
    }
    std::vector<T> h(static_cast<std::size_t>(d) * n, T(0));
    for (int t = 0; t < l; ++t) {
        for (int ch = 0; ch < d; ++ch) {
            const std::size_t td = static_cast<std::size_t>(t) * d + ch;
            const std::size_t hoff = (static_cast<std::size_t>(t) * d + ch) * n;
            const T xv = x->data[td];
            const T dv = delta->data[td];
            T y = d_skip->data[ch] * xv;
            T* hc = h.data() + static_cast<std::size_t>(ch) * n;
            for (int k = 0; k < n; ++k) {
                const T abar = std::exp(dv * a_neg->data[static_cast<std::size_t>(ch) * n + k]);
                hc[k] = abar * hc[k] + dv * bmat->data[static_cast<std::size_t>(t) * n + k] * xv;
                if (keep_states) {
                    (*h_all)[hoff + k] = hc[k];
                    (*abar_all)[hoff + k] = abar;
                }
                y += cmat->data[static_cast<std::size_t>(t) * n + k] * hc[k];
            }
            out->data[td] = y;
        }
    }
    return out;
}

// Full selective scan: project delta/B/C from the input, then run the core.
template <typename T>
Tensor<T> selective_scan(const Tensor<T>& x, const S6Params<T>& p) {
    if (x->shape.size() != 2 || x->shape[1] != p.dim)
        throw std::invalid_argument("selective_scan: x must be (L,D) with D = params.dim");
    auto no_bias_r = make_tensor<T>({p.dt_rank});
    auto no_bias_n = make_tensor<T>({p.state_dim});
    auto delta = softplus(linear(linear(x, p.w_dt_down, no_bias_r), p.w_dt_up, p.b_dt));
    auto bmat = linear(x, p.w_b, no_bias_n);
    auto cmat = linear(x, p.w_c, no_bias_n);
    auto a_neg = scale(exp_t(p.a_log), T(-1));
    return selective_scan_core(x, delta, bmat, cmat, a_neg, p.d_skip);
}

// --- four-direction 2-D scan ---------------------------------------------------

// Traversal orders over an H x W plane. Directions: 0 row-major, 1 row-major
// reversed, 2 column-major, 3 column-major reversed. The set is closed under
// 180-degree rotation (0<->1, 2<->3), which tied parameters turn into an
// exact equivariance.
inline std::shared_ptr<std::vector<std::uint32_t>> scan_order(int dir, int h, int w) {
    const std::size_t l = static_cast<std::size_t>(h) * w;
    auto pos = std::make_shared<std::vector<std::uint32_t>>(l);
    for (std::size_t t = 0; t < l; ++t) {
        std::size_t p = 0;
        switch (dir) {
            case 0: p = t; break;
            case 1: p = l - 1 - t; break;
            case 2: p = (t % h) * w + t / h; break;
            case 3: p = l - 1 - ((t % h) * w + t / h); break;
            default: throw std::invalid_argument("scan_order: bad direction");
        }
        (*pos)[t] = static_cast<std::uint32_t>(p);
    }
    return pos;
}

template <typename T>
struct Ss2dParams {
    int dim = 0;
    std::array<S6Params<T>, 4> dirs;
    std::array<bool, 4> active = {true, true, true, true};
    bool tied = false;

    static Ss2dParams create(ParamStore<T>& store, const std::string& path, int dim,
                             int state_dim = 8, bool tied = false) {
        Ss2dParams p;
        p.dim = dim;
        p.tied = tied;
        if (tied) {
            auto shared = S6Params<T>::create(store, path + ".dir_shared", dim, state_dim);
            p.dirs = {shared, shared, shared, shared};
        } else {
            for (int k = 0; k < 4; ++k)
                p.dirs[k] = S6Params<T>::create(store, path + ".dir" + std::to_string(k), dim, state_dim);
        }
        return p;
    }

    std::vector<Tensor<T>> tensors() const {
        std::vector<Tensor<T>> out;
        const int count = tied ? 1 : 4;
        for (int k = 0; k < count; ++k) {
            auto t = dirs[k].tensors();
            out.insert(out.end(), t.begin(), t.end());
        }
        return out;
    }
};

// Scan expanding -> per-direction S6 -> inverse reorder -> scan merging (sum).
template <typename T>
Tensor<T> ss2d(const Tensor<T>& x, const Ss2dParams<T>& p) {
    if (x->shape.size() != 3) throw std::invalid_argument("ss2d: x must be (C,H,W)");
    const int c = x->shape[0], h = x->shape[1], w = x->shape[2];
    if (c != p.dim) throw std::invalid_argument("ss2d: channel count != params.dim");
    const std::size_t l = static_cast<std::size_t>(h) * w;
    const std::size_t plane = l;

    Tensor<T> acc;
    for (int dir = 0; dir < 4; ++dir) {
        if (!p.active[dir]) continue;
        const auto pos = scan_order(dir, h, w);
        // expand: seq[t, ch] = x[ch, pos[t]]
        auto expand_idx = std::make_shared<std::vector<std::uint32_t>>(l * c);
        for (std::size_t t = 0; t < l; ++t)
            for (int ch = 0; ch < c; ++ch)
                (*expand_idx)[t * c + ch] =
                    static_cast<std::uint32_t>(ch * plane + (*pos)[t]);
        auto seq = gather(x, expand_idx, {static_cast<int>(l), c});
        auto y = selective_scan(seq, p.dirs[dir]);
        // merge: out[ch, pos[t]] = y[t, ch] -> gather with the inverse order
        std::vector<std::uint32_t> inv(l);
        for (std::size_t t = 0; t < l; ++t) inv[(*pos)[t]] = static_cast<std::uint32_t>(t);
        auto merge_idx = std::make_shared<std::vector<std::uint32_t>>(c * l);
        for (int ch = 0; ch < c; ++ch)
            for (std::size_t q = 0; q < l; ++q)
                (*merge_idx)[ch * plane + q] = static_cast<std::uint32_t>(inv[q] * c + ch);
        auto back = gather(y, merge_idx, x->shape);
        acc = acc ? add(acc, back) : back;
    }
    if (!acc) throw std::invalid_argument("ss2d: no active directions");
    return acc;
}

// --- VSS sub-block (two-branch gated unit) --------------------------------------

template <typename T>
struct VssWeights {
    int channels = 0, expanded = 0;
    Tensor<T> ln_in_gamma, ln_in_beta;
    Tensor<T> w_gate, b_gate;  // 1x1, C -> Ce
    Tensor<T> w_in, b_in;      // 1x1, C -> Ce
    Tensor<T> dw_w, dw_b;      // depthwise 3x3 on Ce
    Tensor<T> pw_w, pw_b;      // pointwise mix of the DSConv
    Ss2dParams<T> scan;
    Tensor<T> ln_scan_gamma, ln_scan_beta;
    Tensor<T> w_out, b_out;  // 1x1, Ce -> C; zeroing it makes the block the identity

    static VssWeights create(ParamStore<T>& store, const std::string& path, int channels,
                             int expansion = 2, int state_dim = 8, int dsconv_k = 3,
                             bool tied_scan = false) {
        VssWeights v;
        v.channels = channels;
        v.expanded = channels * expansion;
        v.ln_in_gamma = store.ones(path + ".ln_in.gamma", {channels});
        v.ln_in_beta = store.zeros(path + ".ln_in.beta", {channels});
        v.w_gate = store.weight(path + ".gate.w", {v.expanded, channels, 1, 1}, channels);
        v.b_gate = store.weight(path + ".gate.b", {v.expanded}, channels);
        v.w_in = store.weight(path + ".in.w", {v.expanded, channels, 1, 1}, channels);
        v.b_in = store.weight(path + ".in.b", {v.expanded}, channels);
        v.dw_w = store.weight(path + ".dw.w", {v.expanded, 1, dsconv_k, dsconv_k},
                              static_cast<std::size_t>(dsconv_k) * dsconv_k);
        v.dw_b = store.weight(path + ".dw.b", {v.expanded},
                              static_cast<std::size_t>(dsconv_k) * dsconv_k);
        v.pw_w = store.weight(path + ".pw.w", {v.expanded, v.expanded, 1, 1}, v.expanded);
        v.pw_b = store.weight(path + ".pw.b", {v.expanded}, v.expanded);
        v.scan = Ss2dParams<T>::create(store, path + ".ss2d", v.expanded, state_dim, tied_scan);
        v.ln_scan_gamma = store.ones(path + ".ln_scan.gamma", {v.expanded});
        v.ln_scan_beta = store.zeros(path + ".ln_scan.beta", {v.expanded});
        v.w_out = store.weight(path + ".out.w", {channels, v.expanded, 1, 1}, v.expanded);
        v.b_out = store.weight(path + ".out.b", {channels}, v.expanded);
        return v;
    }

    std::vector<Tensor<T>> tensors() const {
        std::vector<Tensor<T>> out = {ln_in_gamma, ln_in_beta, w_gate, b_gate, w_in, b_in,
                                      dw_w,        dw_b,       pw_w,   pw_b,   w_out, b_out,
                                      ln_scan_gamma, ln_scan_beta};
        auto s = scan.tensors();
        out.insert(out.end(), s.begin(), s.end());
        return out;
    }
};

// Intermediates of one VSS sub-block, returned for shape/identity tests.
template <typename T>
struct VssTrace {
    Tensor<T> normed;     // post input LN
    Tensor<T> gate;       // gating branch output
    Tensor<T> pre_scan;   // DSConv branch, scan input
    Tensor<T> post_scan;  // scan output
    Tensor<T> fused;      // output projection of gate * LN(scan)
    Tensor<T> output;     // fused + residual
};

template <typename T>
std::pair<Tensor<T>, VssTrace<T>> vss_block(const Tensor<T>& x, const VssWeights<T>& w) {
    if (x->shape.size() != 3 || x->shape[0] != w.channels)
        throw std::invalid_argument("vss_block: input must be (C,H,W) with C = weights.channels");
    VssTrace<T> tr;
    tr.normed = layer_norm(x, w.ln_in_gamma, w.ln_in_beta, 0);
    tr.gate = silu(conv2d(tr.normed, w.w_gate, w.b_gate));
    tr.pre_scan = silu(
        depthwise_separable_conv(conv2d(tr.normed, w.w_in, w.b_in), w.dw_w, w.dw_b, w.pw_w, w.pw_b));
    tr.post_scan = ss2d(tr.pre_scan, w.scan);
    auto gated =
        elementwise_mul(layer_norm(tr.post_scan, w.ln_scan_gamma, w.ln_scan_beta, 0), tr.gate);
    tr.fused = conv2d(gated, w.w_out, w.b_out);
    tr.output = add(tr.fused, x);
    return {tr.output, tr};
}

// A stack of independent VSS sub-blocks.
template <typename T>
struct VmBlock {
    std::vector<VssWeights<T>> blocks;

    static VmBlock create(ParamStore<T>& store, const std::string& path, int channels, int depth,
                          int expansion = 2, int state_dim = 8) {
        if (depth < 1) throw std::invalid_argument("VmBlock: depth must be >= 1");
        VmBlock b;
        for (int k = 0; k < depth; ++k)
            b.blocks.push_back(VssWeights<T>::create(store, path + ".vss" + std::to_string(k),
                                                     channels, expansion, state_dim));
        return b;
    }

    Tensor<T> forward(Tensor<T> x) const {
        for (const auto& blk : blocks) x = vss_block(x, blk).first;
        return x;
    }
};

}  // namespace bevkit
