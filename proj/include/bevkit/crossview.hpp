#pragma once

#include <stdexcept>
#include <vector>

#include "bevkit/ipm.hpp"
#include "bevkit/ops.hpp"
#include "bevkit/raster.hpp"
#include "bevkit/tensor.hpp"

namespace bevkit {

// 0 where class == background, 1 otherwise.
inline MapRaster binarize_bev(const MapRaster& semantic) {
    MapRaster out = semantic;
    out.kind = RasterKind::binary;
    for (auto& v : out.data) v = v == 0.0f ? 0.0f : 1.0f;
    return out;
}

// Differentiable IPM warp: same tap plan as the data-path warp, applied to
// per-camera (C,h,w) tensors. Linear in the payloads; backward scatter-adds
// through the taps.
template <typename T>
Tensor<T> warp_to_bev_tensor(const std::vector<Tensor<T>>& payloads,
                             std::shared_ptr<const WarpPlan> plan) {
    if (payloads.size() != plan->payload_sizes.size())
        throw std::invalid_argument("warp_to_bev_tensor: payload count != plan camera count");
    const int channels = payloads.empty() ? 0 : payloads[0]->shape[0];
    for (std::size_t n = 0; n < payloads.size(); ++n) {
        const auto& s = payloads[n]->shape;
        if (s.size() != 3 || s[2] != plan->payload_sizes[n].first ||
            s[1] != plan->payload_sizes[n].second)
            throw std::invalid_argument("warp_to_bev_tensor: payload shape mismatch for camera " +
                                        std::to_string(n));
        if (s[0] != channels)
            throw std::invalid_argument("warp_to_bev_tensor: channel counts differ across cameras");
    }
    const int hc = plan->grid.height_cells(), wc = plan->grid.width_cells();
    const std::size_t n_cells = static_cast<std::size_t>(hc) * wc;

    std::vector<Tensor<T>> parents(payloads.begin(), payloads.end());
    auto out = detail::make_op_node<T>(
        {channels, hc, wc}, parents, [payloads, plan, channels, n_cells](TensorNode<T>& self) {
            for (std::size_t cell = 0; cell < n_cells; ++cell) {
                for (std::uint32_t k = plan->offsets[cell]; k < plan->offsets[cell + 1]; ++k) {
                    const WarpTap& tap = plan->taps[k];
                    const auto& p = payloads[tap.cam];
                    if (!p->requires_grad) continue;
                    T* gp = p->grad_data();
                    const std::size_t plane = p->numel() / channels;
                    for (int c = 0; c < channels; ++c)
                        gp[static_cast<std::size_t>(c) * plane + tap.pixel] +=
                            static_cast<T>(tap.weight) * self.grad[static_cast<std::size_t>(c) * n_cells + cell];
                }
            }
        });

    for (std::size_t cell = 0; cell < n_cells; ++cell) {
        for (std::uint32_t k = plan->offsets[cell]; k < plan->offsets[cell + 1]; ++k) {
            const WarpTap& tap = plan->taps[k];
            const auto& p = payloads[tap.cam];
            const std::size_t plane = p->numel() / channels;
            for (int c = 0; c < channels; ++c)
                out->data[static_cast<std::size_t>(c) * n_cells + cell] +=
                    static_cast<T>(tap.weight * p->data[static_cast<std::size_t>(c) * plane + tap.pixel]);
        }
    }
    return out;
}

// Perspective road-probability maps to BEV: bilinear sampling, mean merge
// (probabilities blend meaningfully across overlapping cameras).
inline MapRaster warp_pv_map(const std::vector<Image>& pv_maps, const IpmLut& lut) {
    return warp_to_bev(pv_maps, lut, Sampling::bilinear, Merge::mean, RasterKind::feature);
}

template <typename T>
Tensor<T> warp_pv_map(const std::vector<Tensor<T>>& pv_maps, const IpmLut& lut) {
    return warp_to_bev_tensor(
        pv_maps, std::make_shared<const WarpPlan>(make_warp_plan(lut, Sampling::bilinear, Merge::mean)));
}

template <typename T>
struct CvmlResult {
    Tensor<T> loss;
    bool empty_mask = false;  // warning signal: no visible cell to compare on
};

// Mean absolute difference between two BEV maps restricted to the visibility
// mask. Soft probabilities keep the loss differentiable w.r.t. both branches;
// hard binarization is reserved for evaluation-time reporting.
template <typename T>
CvmlResult<T> cvml_loss(const Tensor<T>& pv_bev, const Tensor<T>& bev_fg, const MapRaster& mask) {
    if (pv_bev->shape != bev_fg->shape)
        throw std::invalid_argument("cvml_loss: map shape mismatch");
    const std::size_t plane = static_cast<std::size_t>(mask.height()) * mask.width();
    if (pv_bev->numel() % plane != 0)
        throw std::invalid_argument("cvml_loss: maps do not live on the mask grid");
    const int channels = static_cast<int>(pv_bev->numel() / plane);

    double count = 0.0;
    for (float v : mask.data) count += v != 0.0f ? 1.0 : 0.0;
    if (count == 0.0) return {scalar_tensor(T(0)), true};

    auto mask_t = make_tensor<T>(pv_bev->shape);
    for (int c = 0; c < channels; ++c)
        for (std::size_t p = 0; p < plane; ++p)
            mask_t->data[c * plane + p] = static_cast<T>(mask.data[p] != 0.0f ? 1 : 0);

    auto diff = abs_t(sub(pv_bev, bev_fg));
    auto masked = elementwise_mul(diff, mask_t);
    auto loss = scale(sum_all(masked), static_cast<T>(1.0 / (count * channels)));
    return {loss, false};
}

// Evaluation-time counterpart on plain rasters, reporting both the soft L1
// and the hard-binarized L1 inside the mask.
struct CvmlReport {
    double soft_l1 = 0.0;
    double hard_l1 = 0.0;
    double mask_fraction = 0.0;
};

inline CvmlReport cvml_report(const MapRaster& pv_bev, const MapRaster& bev_fg,
                              const MapRaster& mask) {
    if (pv_bev.data.size() != bev_fg.data.size() || pv_bev.data.size() != mask.data.size())
        throw std::invalid_argument("cvml_report: raster size mismatch");
    CvmlReport rep;
    double count = 0.0;
    for (std::size_t i = 0; i < mask.data.size(); ++i) {
        if (mask.data[i] == 0.0f) continue;
        count += 1.0;
        rep.soft_l1 += std::abs(static_cast<double>(pv_bev.data[i]) - bev_fg.data[i]);
        const double ph = pv_bev.data[i] >= 0.5f ? 1.0 : 0.0;
        const double bh = bev_fg.data[i] >= 0.5f ? 1.0 : 0.0;
        rep.hard_l1 += std::abs(ph - bh);
    }
    if (count > 0.0) {
        rep.soft_l1 /= count;
        rep.hard_l1 /= count;
    }
    rep.mask_fraction = count / static_cast<double>(mask.data.size());
    return rep;
}

}  // namespace bevkit
