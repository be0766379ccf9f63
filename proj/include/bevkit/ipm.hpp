#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "bevkit/common.hpp"
#include "bevkit/geometry.hpp"
#include "bevkit/raster.hpp"

namespace bevkit {

enum class Sampling { nearest, bilinear };
enum class Merge { mean, sum };

// Per-cell lookup table mapping BEV cells to the perspective pixels that see
// them at plane height h. Hits are stored rescaled to each camera's payload
// size and gated to payload bounds; once built, warping never touches the
// CameraRig again.
struct IpmLut {
    GridSpec grid;
    double height_h = 0.0;
    std::vector<std::pair<int, int>> payload_sizes;  // (w, h) per camera
    std::vector<std::uint32_t> offsets;              // per-cell ranges into hits, size H*W + 1
    std::vector<PixelHit> hits;                      // ordered by cell, then camera index

    int visibility(int j, int i) const {
        const std::size_t cell = static_cast<std::size_t>(j) * grid.width_cells() + i;
        return static_cast<int>(offsets[cell + 1] - offsets[cell]);
    }
    std::size_t cell_count() const {
        return static_cast<std::size_t>(grid.height_cells()) * grid.width_cells();
    }
};

inline IpmLut build_ipm_lut(const GridSpec& grid, const CameraRig& rig, double h,
                            const std::vector<std::pair<int, int>>& payload_sizes,
                            int threads = 1) {
    if (rig.cameras.empty()) throw std::invalid_argument("build_ipm_lut: empty rig");
    if (payload_sizes.size() != rig.cameras.size())
        throw std::invalid_argument("build_ipm_lut: payload_sizes count != camera count");
    for (const auto& [w, hh] : payload_sizes)
        if (w <= 0 || hh <= 0) throw std::invalid_argument("build_ipm_lut: payload_size must be positive");
    grid.validate();
    rig.validate();

    const int wc = grid.width_cells(), hc = grid.height_cells();
    const std::size_t n_cells = static_cast<std::size_t>(wc) * hc;
    std::vector<std::vector<PixelHit>> per_cell(n_cells);

    parallel_for(n_cells, threads, [&](std::size_t cell) {
        const int j = static_cast<int>(cell) / wc;
        const int i = static_cast<int>(cell) % wc;
        const auto [x, y] = grid.cell_center(i, j);
        for (std::size_t n = 0; n < rig.cameras.size(); ++n) {
            const Camera& cam = rig.cameras[n];
            auto hit = project_ego_to_pixel(Eigen::Vector3d(x, y, h), cam, static_cast<int>(n));
            if (!hit) continue;
            const auto [pw, ph] = payload_sizes[n];
            const auto [u, v] = scale_pixel({hit->u, hit->v}, {pw, ph}, {cam.width, cam.height});
            if (u < 0.0 || u >= pw || v < 0.0 || v >= ph) continue;
            per_cell[cell].push_back(PixelHit{static_cast<int>(n), u, v, hit->depth});
        }
    });

    IpmLut lut;
    lut.grid = grid;
    lut.height_h = h;
    lut.payload_sizes = payload_sizes;
    lut.offsets.resize(n_cells + 1, 0);
    std::size_t total = 0;
    for (std::size_t c = 0; c < n_cells; ++c) {
        lut.offsets[c] = static_cast<std::uint32_t>(total);
        total += per_cell[c].size();
    }
    lut.offsets[n_cells] = static_cast<std::uint32_t>(total);
    lut.hits.reserve(total);
    for (auto& cell : per_cell) lut.hits.insert(lut.hits.end(), cell.begin(), cell.end());
    return lut;
}

// Convenience overload: one payload size shared by every camera.
inline IpmLut build_ipm_lut(const GridSpec& grid, const CameraRig& rig, double h,
                            std::pair<int, int> payload_size, int threads = 1) {
    return build_ipm_lut(grid, rig, h,
                         std::vector<std::pair<int, int>>(rig.cameras.size(), payload_size), threads);
}

// One gather tap: out[cell] += weight * payload[cam][pixel].
struct WarpTap {
    std::uint16_t cam;
    std::uint32_t pixel;  // y * payload_w + x
    double weight;
};

// Sampling plan compiled from a LUT: a fixed sparse gather applied uniformly
// to every channel. Merge scaling is folded into the tap weights, so applying
// the plan is linear in the payloads.
struct WarpPlan {
    GridSpec grid;
    std::vector<std::pair<int, int>> payload_sizes;
    std::vector<std::uint32_t> offsets;  // per-cell ranges into taps
    std::vector<WarpTap> taps;
};

inline WarpPlan make_warp_plan(const IpmLut& lut, Sampling sampling, Merge merge) {
    WarpPlan plan;
    plan.grid = lut.grid;
    plan.payload_sizes = lut.payload_sizes;
    const std::size_t n_cells = lut.cell_count();
    plan.offsets.resize(n_cells + 1, 0);
    plan.taps.reserve(lut.hits.size() * (sampling == Sampling::bilinear ? 4 : 1));

    for (std::size_t cell = 0; cell < n_cells; ++cell) {
        plan.offsets[cell] = static_cast<std::uint32_t>(plan.taps.size());
        const std::uint32_t lo = lut.offsets[cell], hi = lut.offsets[cell + 1];
        const int vis = static_cast<int>(hi - lo);
        if (vis == 0) continue;
        const double merge_w = merge == Merge::mean ? 1.0 / vis : 1.0;
        for (std::uint32_t k = lo; k < hi; ++k) {
            const PixelHit& hit = lut.hits[k];
            const auto [pw, ph] = lut.payload_sizes[hit.cam_index];
            if (sampling == Sampling::nearest) {
                const int x = std::clamp(static_cast<int>(std::floor(hit.u)), 0, pw - 1);
                const int y = std::clamp(static_cast<int>(std::floor(hit.v)), 0, ph - 1);
                plan.taps.push_back({static_cast<std::uint16_t>(hit.cam_index),
                                     static_cast<std::uint32_t>(y) * pw + x, merge_w});
            } else {
                // bilinear over pixel centers at integer + 0.5, clamped at edges
                const double fu = hit.u - 0.5, fv = hit.v - 0.5;
                const int x0 = static_cast<int>(std::floor(fu));
                const int y0 = static_cast<int>(std::floor(fv));
                const double ax = fu - x0, ay = fv - y0;
                const double wx[2] = {1.0 - ax, ax};
                const double wy[2] = {1.0 - ay, ay};
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        const double w = wx[dx] * wy[dy];
                        if (w == 0.0) continue;
                        const int x = std::clamp(x0 + dx, 0, pw - 1);
                        const int y = std::clamp(y0 + dy, 0, ph - 1);
                        plan.taps.push_back({static_cast<std::uint16_t>(hit.cam_index),
                                             static_cast<std::uint32_t>(y) * pw + x, w * merge_w});
                    }
                }
            }
        }
    }
    plan.offsets[n_cells] = static_cast<std::uint32_t>(plan.taps.size());
    return plan;
}

namespace detail {

inline void check_payloads_against(const std::vector<std::pair<int, int>>& sizes,
                                   const std::vector<Image>& payloads) {
    if (payloads.size() != sizes.size())
        throw std::invalid_argument("warp_to_bev: payload count != lut camera count");
    for (std::size_t n = 0; n < payloads.size(); ++n) {
        if (payloads[n].width != sizes[n].first || payloads[n].height != sizes[n].second)
            throw std::invalid_argument("warp_to_bev: payload shape mismatch for camera " +
                                        std::to_string(n));
        if (payloads[n].channels != payloads[0].channels)
            throw std::invalid_argument("warp_to_bev: channel counts differ across cameras");
    }
}

}  // namespace detail

// Applies a compiled plan to per-camera payloads. Cells with no taps are 0.
inline MapRaster apply_warp_plan(const std::vector<Image>& payloads, const WarpPlan& plan,
                                 RasterKind out_kind, int threads = 1) {
    detail::check_payloads_against(plan.payload_sizes, payloads);
    const int channels = payloads.empty() ? 0 : payloads[0].channels;
    MapRaster out(plan.grid, channels, out_kind, 0.0f);
    const int wc = plan.grid.width_cells(), hc = plan.grid.height_cells();
    const std::size_t n_cells = static_cast<std::size_t>(wc) * hc;
    const std::size_t plane = n_cells;

    parallel_for(n_cells, threads, [&](std::size_t cell) {
        const std::uint32_t lo = plan.offsets[cell], hi = plan.offsets[cell + 1];
        if (lo == hi) return;
        for (int c = 0; c < channels; ++c) {
            double acc = 0.0;
            for (std::uint32_t k = lo; k < hi; ++k) {
                const WarpTap& tap = plan.taps[k];
                const Image& img = payloads[tap.cam];
                acc += tap.weight *
                       img.data[static_cast<std::size_t>(c) * img.height * img.width + tap.pixel];
            }
            out.data[static_cast<std::size_t>(c) * plane + cell] = static_cast<float>(acc);
        }
    });
    return out;
}

inline RasterKind warp_output_kind(RasterKind in, Sampling sampling) {
    if (in == RasterKind::semantic || in == RasterKind::binary)
        return sampling == Sampling::nearest ? in : RasterKind::feature;
    return in;
}

// Warps per-camera payloads into the LUT's BEV grid. `sum` reproduces the
// literal per-cell camera sum; `mean` divides by visibility.
inline MapRaster warp_to_bev(const std::vector<Image>& payloads, const IpmLut& lut,
                             Sampling sampling, Merge merge,
                             RasterKind out_kind = RasterKind::image, int threads = 1) {
    const WarpPlan plan = make_warp_plan(lut, sampling, merge);
    return apply_warp_plan(payloads, plan, out_kind, threads);
}

inline MapRaster visibility_mask(const IpmLut& lut) {
    MapRaster mask(lut.grid, 1, RasterKind::binary, 0.0f);
    for (std::size_t cell = 0; cell < lut.cell_count(); ++cell)
        mask.data[cell] = lut.offsets[cell + 1] > lut.offsets[cell] ? 1.0f : 0.0f;
    return mask;
}

}  // namespace bevkit
