#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "bevkit/common.hpp"
#include "bevkit/raster.hpp"
#include "bevkit/tensor.hpp"

namespace bevkit {

// Invertible grid transform shared by forward augmentation (inputs + labels)
// and backward augmentation (output features). Composition order is fixed:
// rot180, then hflip, then vflip; every element is an involution and the set
// commutes on grids, so the net effect is two axis-flip bits.
struct AugSpec {
    bool hflip = false;  // flip along the grid X axis
    bool vflip = false;  // flip along the grid Y axis
    bool rot180 = false;
    std::uint64_t seed = 0;

    bool identity() const { return !(hflip ^ rot180) && !(vflip ^ rot180); }
    // net action on the grid: (flip_x, flip_y)
    std::pair<bool, bool> net_flips() const { return {hflip ^ rot180, vflip ^ rot180}; }
};

struct AugProbs {
    double hflip = 0.5, vflip = 0.5, rot180 = 0.5;
};

inline AugSpec sample_aug(std::uint64_t seed, const AugProbs& probs = AugProbs{}) {
    if (probs.hflip < 0 || probs.hflip > 1 || probs.vflip < 0 || probs.vflip > 1 ||
        probs.rot180 < 0 || probs.rot180 > 1)
        throw std::invalid_argument("sample_aug: probabilities must be in [0, 1]");
    auto rng = make_rng(seed, "augment.sample");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    AugSpec spec;
    spec.seed = seed;
    spec.rot180 = u(rng) < probs.rot180;
    spec.hflip = u(rng) < probs.hflip;
    spec.vflip = u(rng) < probs.vflip;
    return spec;
}

// "h,v,r" flag-list form used by the CLI.
inline AugSpec parse_aug_flags(const std::string& s) {
    AugSpec spec;
    for (char c : s) {
        if (c == 'h') spec.hflip = true;
        else if (c == 'v') spec.vflip = true;
        else if (c == 'r') spec.rot180 = true;
        else if (c == ',' || c == ' ') continue;
        else throw std::invalid_argument(std::string("--aug: unknown flag '") + c + "'");
    }
    return spec;
}

// Source-index permutation of an H x W plane: out[j][i] = in[perm(j, i)].
inline std::shared_ptr<std::vector<std::uint32_t>> aug_plane_index(const AugSpec& spec, int h,
                                                                   int w) {
    const auto [fx, fy] = spec.net_flips();
    auto idx = std::make_shared<std::vector<std::uint32_t>>(static_cast<std::size_t>(h) * w);
    for (int j = 0; j < h; ++j) {
        const int sj = fy ? h - 1 - j : j;
        for (int i = 0; i < w; ++i) {
            const int si = fx ? w - 1 - i : i;
            (*idx)[static_cast<std::size_t>(j) * w + i] =
                static_cast<std::uint32_t>(sj) * w + si;
        }
    }
    return idx;
}

inline MapRaster apply_forward(const AugSpec& spec, const MapRaster& r) {
    const auto idx = aug_plane_index(spec, r.height(), r.width());
    MapRaster out = r;
    const std::size_t plane = idx->size();
    for (int c = 0; c < r.channels; ++c) {
        const float* src = r.data.data() + static_cast<std::size_t>(c) * plane;
        float* dst = out.data.data() + static_cast<std::size_t>(c) * plane;
        for (std::size_t p = 0; p < plane; ++p) dst[p] = src[(*idx)[p]];
    }
    return out;
}

// Exact inverse of apply_forward. Each net action is an involution, so the
// inverse permutation equals the forward one; kept separate for intent.
inline MapRaster apply_backward(const AugSpec& spec, const MapRaster& r) {
    return apply_forward(spec, r);
}

inline std::vector<MapRaster> apply_forward(const AugSpec& spec, const std::vector<MapRaster>& rs) {
    std::vector<MapRaster> out;
    out.reserve(rs.size());
    for (const auto& r : rs) out.push_back(apply_forward(spec, r));
    return out;
}

// Differentiable version for feature tensors on a grid, (C,H,W).
template <typename T>
Tensor<T> apply_forward(const AugSpec& spec, const Tensor<T>& x) {
    if (x->shape.size() != 3)
        throw std::invalid_argument("apply_forward: tensor must be grid-shaped (C,H,W)");
    const int c = x->shape[0], h = x->shape[1], w = x->shape[2];
    const auto plane_idx = aug_plane_index(spec, h, w);
    const std::size_t plane = plane_idx->size();
    auto idx = std::make_shared<std::vector<std::uint32_t>>(static_cast<std::size_t>(c) * plane);
    for (int ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < plane; ++p)
            (*idx)[ch * plane + p] = static_cast<std::uint32_t>(ch * plane) + (*plane_idx)[p];
    return gather(x, idx, x->shape);
}

template <typename T>
Tensor<T> apply_backward(const AugSpec& spec, const Tensor<T>& x) {
    return apply_forward(spec, x);
}

// Metric-space counterpart of the index transform: the cell at (x, y) maps to
// the cell whose center is the reflected coordinate.
inline std::pair<double, double> aug_transform_point(const AugSpec& spec, const GridSpec& grid,
                                                     double x, double y) {
    const auto [fx, fy] = spec.net_flips();
    return {fx ? grid.x_min + grid.x_max - x : x, fy ? grid.y_min + grid.y_max - y : y};
}

}  // namespace bevkit
