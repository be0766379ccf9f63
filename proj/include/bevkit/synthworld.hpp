#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bevkit/common.hpp"
#include "bevkit/geometry.hpp"
#include "bevkit/ipm.hpp"
#include "bevkit/raster.hpp"

namespace bevkit {

using Polyline = std::vector<std::pair<double, double>>;

// Map element classes.
enum MapClass : int { cls_background = 0, cls_divider = 1, cls_crossing = 2, cls_boundary = 3 };
inline constexpr int kNumClasses = 4;

struct VectorElement {
    int cls = 0;
    Polyline points;
};

// --- polyline helpers --------------------------------------------------------

inline double polyline_length(const Polyline& p) {
    double len = 0.0;
    for (std::size_t i = 1; i < p.size(); ++i)
        len += std::hypot(p[i].first - p[i - 1].first, p[i].second - p[i - 1].second);
    return len;
}

// Offsets a polyline along per-vertex normals (average of adjacent segment
// normals). Valid while the offset stays below the curvature radius.
inline Polyline offset_polyline(const Polyline& p, double offset) {
    Polyline out;
    out.reserve(p.size());
    const std::size_t n = p.size();
    for (std::size_t i = 0; i < n; ++i) {
        double tx = 0.0, ty = 0.0;
        if (i > 0) {
            tx += p[i].first - p[i - 1].first;
            ty += p[i].second - p[i - 1].second;
        }
        if (i + 1 < n) {
            tx += p[i + 1].first - p[i].first;
            ty += p[i + 1].second - p[i].second;
        }
        const double len = std::hypot(tx, ty);
        if (len < 1e-12) {
            out.push_back(p[i]);
            continue;
        }
        // left-hand normal of the tangent
        const double nx = -ty / len, ny = tx / len;
        out.emplace_back(p[i].first + offset * nx, p[i].second + offset * ny);
    }
    return out;
}

// Clips a polyline to the closed box of a grid; exiting and re-entering
// splits the line into separate pieces.
inline std::vector<Polyline> clip_polyline_to_grid(const Polyline& p, const GridSpec& grid) {
    auto clip_segment = [&](std::pair<double, double> a, std::pair<double, double> b,
                            std::pair<double, double>& ca,
                            std::pair<double, double>& cb) -> bool {
        double t0 = 0.0, t1 = 1.0;
        const double dx = b.first - a.first, dy = b.second - a.second;
        const double pq[4][2] = {{-dx, a.first - grid.x_min},
                                 {dx, grid.x_max - a.first},
                                 {-dy, a.second - grid.y_min},
                                 {dy, grid.y_max - a.second}};
        for (const auto& e : pq) {
            const double pp = e[0], q = e[1];
            if (pp == 0.0) {
                if (q < 0.0) return false;
            } else {
                const double r = q / pp;
                if (pp < 0.0)
                    t0 = std::max(t0, r);
                else
                    t1 = std::min(t1, r);
                if (t0 > t1) return false;
            }
        }
        ca = {a.first + t0 * dx, a.second + t0 * dy};
        cb = {a.first + t1 * dx, a.second + t1 * dy};
        return true;
    };

    std::vector<Polyline> pieces;
    Polyline cur;
    for (std::size_t i = 1; i < p.size(); ++i) {
        std::pair<double, double> ca, cb;
        if (!clip_segment(p[i - 1], p[i], ca, cb)) {
            if (cur.size() >= 2) pieces.push_back(cur);
            cur.clear();
            continue;
        }
        if (cur.empty()) {
            cur.push_back(ca);
        } else if (std::hypot(cur.back().first - ca.first, cur.back().second - ca.second) > 1e-9) {
            if (cur.size() >= 2) pieces.push_back(cur);
            cur.clear();
            cur.push_back(ca);
        }
        cur.push_back(cb);
    }
    if (cur.size() >= 2) pieces.push_back(cur);
    return pieces;
}

inline bool point_in_polygon(double x, double y, const Polyline& poly) {
    bool inside = false;
    const std::size_t n = poly.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const auto& a = poly[i];
        const auto& b = poly[j];
        if ((a.second > y) != (b.second > y)) {
            const double xi = (b.first - a.first) * (y - a.second) / (b.second - a.second) + a.first;
            if (x < xi) inside = !inside;
        }
    }
    return inside;
}

// --- rasterization -----------------------------------------------------------

// Visits every cell the segment crosses with positive length, under the
// half-open cell convention (a point on a shared edge belongs to the cell
// whose min corner it touches). Boundary-exact corner crossings step
// diagonally.
template <typename Visit>
inline void supercover_segment(std::pair<double, double> a, std::pair<double, double> b,
                               const GridSpec& grid, Visit&& visit) {
    // restrict to the grid box first so out-of-range spans are dropped
    Polyline seg{a, b};
    for (const Polyline& piece : clip_polyline_to_grid(seg, grid)) {
        const auto [x0, y0] = piece.front();
        const auto [x1, y1] = piece.back();
        const int wc = grid.width_cells(), hc = grid.height_cells();
        auto cell_clamped = [&](double x, double y) {
            auto [i, j] = grid.cell_of(x, y);
            return std::pair<int, int>{std::clamp(i, 0, wc - 1), std::clamp(j, 0, hc - 1)};
        };
        auto [i, j] = cell_clamped(x0, y0);
        const auto [ie, je] = cell_clamped(x1, y1);
        visit(i, j);
        const double dx = x1 - x0, dy = y1 - y0;
        const int sx = dx > 0 ? 1 : -1, sy = dy > 0 ? 1 : -1;
        auto boundary_t = [&](int cell, double origin, double delta, int step, double gmin) {
            const int next = step > 0 ? cell + 1 : cell;
            const double edge = gmin + next * grid.resolution;
            return (edge - origin) / delta;
        };
        double t_max_x = dx == 0.0 ? std::numeric_limits<double>::infinity()
                                   : boundary_t(i, x0, dx, sx, grid.x_min);
        double t_max_y = dy == 0.0 ? std::numeric_limits<double>::infinity()
                                   : boundary_t(j, y0, dy, sy, grid.y_min);
        const double t_dx = dx == 0.0 ? 0.0 : std::abs(grid.resolution / dx);
        const double t_dy = dy == 0.0 ? 0.0 : std::abs(grid.resolution / dy);
        int guard = 4 * (wc + hc);
        while ((i != ie || j != je) && guard-- > 0) {
            if (t_max_x < t_max_y) {
                i += sx;
                t_max_x += t_dx;
            } else if (t_max_y < t_max_x) {
                j += sy;
                t_max_y += t_dy;
            } else {
                i += sx;
                j += sy;
                t_max_x += t_dx;
                t_max_y += t_dy;
            }
            if (i < 0 || i >= wc || j < 0 || j >= hc) break;
            visit(i, j);
        }
    }
}

// Strokes a polyline into a class raster. stroke_radius_cells = 0 gives the
// 1-cell supercover stroke; larger values dilate by that Chebyshev radius.
inline void stroke_polyline(MapRaster& raster, int channel, const Polyline& line, float value,
                            int stroke_radius_cells = 0) {
    const int wc = raster.width(), hc = raster.height();
    auto mark = [&](int i, int j) {
        for (int dj = -stroke_radius_cells; dj <= stroke_radius_cells; ++dj) {
            for (int di = -stroke_radius_cells; di <= stroke_radius_cells; ++di) {
                const int ii = i + di, jj = j + dj;
                if (ii >= 0 && ii < wc && jj >= 0 && jj < hc) raster.at(channel, jj, ii) = value;
            }
        }
    };
    for (std::size_t s = 1; s < line.size(); ++s)
        supercover_segment(line[s - 1], line[s], raster.grid,
                           [&](int i, int j) { mark(i, j); });
}

inline void fill_polygon(MapRaster& raster, int channel, const Polyline& poly, float value) {
    double bx0 = 1e30, bx1 = -1e30, by0 = 1e30, by1 = -1e30;
    for (const auto& [x, y] : poly) {
        bx0 = std::min(bx0, x);
        bx1 = std::max(bx1, x);
        by0 = std::min(by0, y);
        by1 = std::max(by1, y);
    }
    const GridSpec& g = raster.grid;
    const int i0 = std::max(0, static_cast<int>(std::floor((bx0 - g.x_min) / g.resolution)) - 1);
    const int i1 = std::min(g.width_cells() - 1,
                            static_cast<int>(std::floor((bx1 - g.x_min) / g.resolution)) + 1);
    const int j0 = std::max(0, static_cast<int>(std::floor((by0 - g.y_min) / g.resolution)) - 1);
    const int j1 = std::min(g.height_cells() - 1,
                            static_cast<int>(std::floor((by1 - g.y_min) / g.resolution)) + 1);
    for (int j = j0; j <= j1; ++j) {
        for (int i = i0; i <= i1; ++i) {
            const auto [x, y] = g.cell_center(i, j);
            if (point_in_polygon(x, y, poly)) raster.at(channel, j, i) = value;
        }
    }
    stroke_polyline(raster, channel, poly, value);
}

// OSM centerlines to a binary occupancy grid, 1-cell stroke.
inline MapRaster rasterize_osm(const std::vector<Polyline>& centerlines, const GridSpec& grid) {
    MapRaster out(grid, 1, RasterKind::binary, 0.0f);
    for (const auto& line : centerlines) stroke_polyline(out, 0, line, 1.0f);
    return out;
}

// Canonical vector-map rasterization: dividers and boundaries are 1-cell
// strokes, crossings are filled polygons. Paint order divider, crossing,
// boundary (later classes overwrite).
inline MapRaster rasterize_vector_map(const std::vector<VectorElement>& elements,
                                      const GridSpec& grid) {
    MapRaster out(grid, 1, RasterKind::semantic, 0.0f);
    auto paint = [&](int cls) {
        for (const auto& e : elements) {
            if (e.cls != cls) continue;
            if (cls == cls_crossing)
                fill_polygon(out, 0, e.points, static_cast<float>(cls));
            else
                stroke_polyline(out, 0, e.points, static_cast<float>(cls));
        }
    };
    paint(cls_divider);
    paint(cls_crossing);
    paint(cls_boundary);
    return out;
}

// --- scene generation --------------------------------------------------------

struct SceneParams {
    GridSpec grid = GridSpec::standard();
    int min_dividers = 1, max_dividers = 4;
    int min_crossings = 0, max_crossings = 3;
    double min_curvature = -0.03, max_curvature = 0.03;  // 1/m, resampled per arc
    double min_segment_len = 8.0, max_segment_len = 20.0;
    double min_half_width = 4.5, max_half_width = 7.5;
    double osm_jitter = 0.5;       // uniform per-scene GPS offset, meters
    double paint_radius = 0.30;    // texture stroke half-width, meters
    int texture_blur_passes = 2;   // separable binomial blur passes
    double texture_noise = 0.08;

    void validate() const {
        grid.validate();
        auto check = [](double lo, double hi, const char* what) {
            if (lo > hi) throw std::invalid_argument(std::string("SceneParams: degenerate range for ") + what);
        };
        check(min_dividers, max_dividers, "dividers");
        check(min_crossings, max_crossings, "crossings");
        check(min_curvature, max_curvature, "curvature");
        check(min_segment_len, max_segment_len, "segment_len");
        check(min_half_width, max_half_width, "half_width");
        if (min_dividers < 0 || min_crossings < 0)
            throw std::invalid_argument("SceneParams: counts must be nonnegative");
        if (min_half_width <= 0.0) throw std::invalid_argument("SceneParams: half_width must be positive");
    }

    nlohmann::json to_json() const {
        return {{"grid",
                 {{"x_min", grid.x_min},
                  {"x_max", grid.x_max},
                  {"y_min", grid.y_min},
                  {"y_max", grid.y_max},
                  {"resolution", grid.resolution}}},
                {"dividers", {min_dividers, max_dividers}},
                {"crossings", {min_crossings, max_crossings}},
                {"curvature", {min_curvature, max_curvature}},
                {"segment_len", {min_segment_len, max_segment_len}},
                {"half_width", {min_half_width, max_half_width}},
                {"osm_jitter", osm_jitter},
                {"paint_radius", paint_radius},
                {"texture_blur_passes", texture_blur_passes},
                {"texture_noise", texture_noise}};
    }

    static SceneParams from_json(const nlohmann::json& j) {
        SceneParams p;
        if (j.contains("grid")) {
            const auto& g = j.at("grid");
            p.grid = GridSpec::make(g.at("x_min"), g.at("x_max"), g.at("y_min"), g.at("y_max"),
                                    g.at("resolution"));
        }
        auto pair = [&](const char* key, auto& lo, auto& hi) {
            if (j.contains(key)) {
                lo = j.at(key)[0];
                hi = j.at(key)[1];
            }
        };
        pair("dividers", p.min_dividers, p.max_dividers);
        pair("crossings", p.min_crossings, p.max_crossings);
        pair("curvature", p.min_curvature, p.max_curvature);
        pair("segment_len", p.min_segment_len, p.max_segment_len);
        pair("half_width", p.min_half_width, p.max_half_width);
        if (j.contains("osm_jitter")) p.osm_jitter = j.at("osm_jitter");
        if (j.contains("paint_radius")) p.paint_radius = j.at("paint_radius");
        if (j.contains("texture_blur_passes")) p.texture_blur_passes = j.at("texture_blur_passes");
        if (j.contains("texture_noise")) p.texture_noise = j.at("texture_noise");
        p.validate();
        return p;
    }
};

// Synthetic ground truth: exact semantic raster, its source vector map, OSM
// centerlines (with simulated GPS offset), and the painted ground texture the
// cameras observe.
struct Scene {
    std::uint64_t seed = 0;
    SceneParams params;
    MapRaster gt_semantic;               // 1 channel, class ids
    std::vector<VectorElement> gt_vector;
    std::vector<Polyline> osm_centerlines;
    Polyline corridor;                   // closed corridor polygon (test oracle support)
    MapRaster ground_texture;            // 3 channels in [0, 1]
};

namespace detail {

inline void blur_texture(MapRaster& tex, int passes) {
    const int hc = tex.height(), wc = tex.width();
    std::vector<float> tmp(static_cast<std::size_t>(hc) * wc);
    for (int pass = 0; pass < passes; ++pass) {
        for (int c = 0; c < tex.channels; ++c) {
            // horizontal [0.25, 0.5, 0.25]
            for (int j = 0; j < hc; ++j)
                for (int i = 0; i < wc; ++i) {
                    const float l = tex.at(c, j, std::max(0, i - 1));
                    const float m = tex.at(c, j, i);
                    const float r = tex.at(c, j, std::min(wc - 1, i + 1));
                    tmp[static_cast<std::size_t>(j) * wc + i] = 0.25f * l + 0.5f * m + 0.25f * r;
                }
            for (int j = 0; j < hc; ++j)
                for (int i = 0; i < wc; ++i) {
                    const float u = tmp[static_cast<std::size_t>(std::max(0, j - 1)) * wc + i];
                    const float m = tmp[static_cast<std::size_t>(j) * wc + i];
                    const float d = tmp[static_cast<std::size_t>(std::min(hc - 1, j + 1)) * wc + i];
                    tex.at(c, j, i) = 0.25f * u + 0.5f * m + 0.25f * d;
                }
        }
    }
}

}  // namespace detail

inline Scene generate_scene(std::uint64_t seed, const SceneParams& params = SceneParams{}) {
    params.validate();
    const GridSpec& grid = params.grid;
    Scene scene;
    scene.seed = seed;
    scene.params = params;

    auto rng_road = make_rng(seed, "scene.road");
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    // centerline: piecewise constant-curvature arcs marched across the grid
    const double ds = 0.25;
    Polyline center;
    double x = grid.x_min - 2.0;
    double y = 0.25 * (grid.y_min + grid.y_max) +
               (u01(rng_road) - 0.5) * 0.3 * (grid.y_max - grid.y_min);
    double heading = (u01(rng_road) - 0.5) * 0.3;
    double hw = params.min_half_width + u01(rng_road) * (params.max_half_width - params.min_half_width);
    double curvature = 0.0;
    double next_resample = 0.0;
    const double y_soft = grid.y_max - hw - 1.0;
    for (double travelled = 0.0; travelled < (grid.x_max - grid.x_min) * 2.5; travelled += ds) {
        if (travelled >= next_resample) {
            curvature = params.min_curvature +
                        u01(rng_road) * (params.max_curvature - params.min_curvature);
            next_resample = travelled + params.min_segment_len +
                            u01(rng_road) * (params.max_segment_len - params.min_segment_len);
        }
        center.emplace_back(x, y);
        // steer back towards the corridor envelope when drifting out
        double k = curvature;
        if (y > y_soft) k = std::min(k, -0.01);
        if (y < -y_soft) k = std::max(k, 0.01);
        heading = std::clamp(heading + k * ds, -0.6, 0.6);
        x += std::cos(heading) * ds;
        y += std::sin(heading) * ds;
        if (x > grid.x_max + 2.0) break;
    }

    const Polyline bound_left = offset_polyline(center, hw);
    const Polyline bound_right = offset_polyline(center, -hw);

    // corridor polygon for containment tests and texture fill
    scene.corridor = bound_left;
    scene.corridor.insert(scene.corridor.end(), bound_right.rbegin(), bound_right.rend());

    auto add_clipped = [&](const Polyline& line, int cls) {
        for (auto& piece : clip_polyline_to_grid(line, grid))
            scene.gt_vector.push_back({cls, std::move(piece)});
    };
    add_clipped(bound_left, cls_boundary);
    add_clipped(bound_right, cls_boundary);

    auto rng_div = make_rng(seed, "scene.dividers");
    const int n_div = params.min_dividers +
                      static_cast<int>(rng_div() % (params.max_dividers - params.min_dividers + 1));
    for (int k = 1; k <= n_div; ++k) {
        const double off = -hw + k * (2.0 * hw / (n_div + 1));
        add_clipped(offset_polyline(center, off), cls_divider);
    }

    // pedestrian crossings: road-spanning rectangles, fully inside the grid
    auto rng_cross = make_rng(seed, "scene.crossings");
    const int n_cross = params.min_crossings +
                        static_cast<int>(rng_cross() % (params.max_crossings - params.min_crossings + 1));
    const double total_len = polyline_length(center);
    std::vector<double> used;
    for (int k = 0; k < n_cross; ++k) {
        for (int attempt = 0; attempt < 12; ++attempt) {
            const double at = (0.15 + 0.7 * u01(rng_cross)) * total_len;
            bool clash = false;
            for (double uu : used)
                if (std::abs(uu - at) < 6.0) clash = true;
            if (clash) continue;
            // locate the arc-length position on the centerline
            double acc = 0.0;
            std::size_t si = 1;
            for (; si < center.size(); ++si) {
                const double seg = std::hypot(center[si].first - center[si - 1].first,
                                              center[si].second - center[si - 1].second);
                if (acc + seg >= at) break;
                acc += seg;
            }
            if (si >= center.size()) continue;
            const double seg = std::hypot(center[si].first - center[si - 1].first,
                                          center[si].second - center[si - 1].second);
            const double t = (at - acc) / seg;
            const double px = center[si - 1].first + t * (center[si].first - center[si - 1].first);
            const double py = center[si - 1].second + t * (center[si].second - center[si - 1].second);
            const double tx = (center[si].first - center[si - 1].first) / seg;
            const double ty = (center[si].second - center[si - 1].second) / seg;
            const double nx = -ty, ny = tx;
            const double a = 1.0 + u01(rng_cross) * 1.0;  // half-length along the road
            Polyline rect = {{px - a * tx - hw * nx, py - a * ty - hw * ny},
                             {px + a * tx - hw * nx, py + a * ty - hw * ny},
                             {px + a * tx + hw * nx, py + a * ty + hw * ny},
                             {px - a * tx + hw * nx, py - a * ty + hw * ny}};
            bool inside = true;
            for (const auto& [cx, cy] : rect)
                if (cx < grid.x_min + 0.5 || cx > grid.x_max - 0.5 || cy < grid.y_min + 0.5 ||
                    cy > grid.y_max - 0.5)
                    inside = false;
            if (!inside) continue;
            rect.push_back(rect.front());  // closed ring
            scene.gt_vector.push_back({cls_crossing, rect});
            used.push_back(at);
            break;
        }
    }

    scene.gt_semantic = rasterize_vector_map(scene.gt_vector, grid);

    // OSM centerline = corridor axis shifted by a per-scene GPS offset
    auto rng_osm = make_rng(seed, "scene.osm");
    const double jx = (u01(rng_osm) * 2.0 - 1.0) * params.osm_jitter;
    const double jy = (u01(rng_osm) * 2.0 - 1.0) * params.osm_jitter;
    Polyline shifted;
    shifted.reserve(center.size());
    for (std::size_t i = 0; i < center.size(); i += 4)  // OSM vertices are sparser than the road step
        shifted.emplace_back(center[i].first + jx, center[i].second + jy);
    scene.osm_centerlines = clip_polyline_to_grid(shifted, grid);

    // ground texture: smooth noise background, asphalt corridor, painted classes
    auto rng_tex = make_rng(seed, "scene.texture");
    MapRaster tex(grid, 3, RasterKind::image, 0.0f);
    const int hc = grid.height_cells(), wc = grid.width_cells();
    const int lattice = 8;
    const int lw = wc / lattice + 2, lh = hc / lattice + 2;
    std::vector<float> lat(static_cast<std::size_t>(3) * lh * lw);
    for (auto& v : lat) v = static_cast<float>(u01(rng_tex) * 2.0 - 1.0);
    auto lat_at = [&](int c, int j, int i) {
        return lat[(static_cast<std::size_t>(c) * lh + std::min(j, lh - 1)) * lw + std::min(i, lw - 1)];
    };
    const float base[3] = {0.30f, 0.38f, 0.28f};
    for (int j = 0; j < hc; ++j) {
        for (int i = 0; i < wc; ++i) {
            const double fj = static_cast<double>(j) / lattice, fi = static_cast<double>(i) / lattice;
            const int j0 = static_cast<int>(fj), i0 = static_cast<int>(fi);
            const double aj = fj - j0, ai = fi - i0;
            for (int c = 0; c < 3; ++c) {
                const double n = (1 - aj) * ((1 - ai) * lat_at(c, j0, i0) + ai * lat_at(c, j0, i0 + 1)) +
                                 aj * ((1 - ai) * lat_at(c, j0 + 1, i0) + ai * lat_at(c, j0 + 1, i0 + 1));
                tex.at(c, j, i) = std::clamp(base[c] + static_cast<float>(n * params.texture_noise),
                                             0.0f, 1.0f);
            }
        }
    }

    // asphalt fill inside the corridor
    {
        double bx0 = 1e30, bx1 = -1e30, by0 = 1e30, by1 = -1e30;
        for (const auto& [cx, cy] : scene.corridor) {
            bx0 = std::min(bx0, cx);
            bx1 = std::max(bx1, cx);
            by0 = std::min(by0, cy);
            by1 = std::max(by1, cy);
        }
        const float asphalt[3] = {0.34f, 0.34f, 0.37f};
        for (int j = 0; j < hc; ++j) {
            for (int i = 0; i < wc; ++i) {
                const auto [cx, cy] = grid.cell_center(i, j);
                if (cx < bx0 || cx > bx1 || cy < by0 || cy > by1) continue;
                if (point_in_polygon(cx, cy, scene.corridor))
                    for (int c = 0; c < 3; ++c) tex.at(c, j, i) = asphalt[c];
            }
        }
    }

    // class paint, slightly wider than the 1-cell ground truth strokes
    const int paint_r = std::max(0, static_cast<int>(std::round(params.paint_radius / grid.resolution)));
    const float palette[kNumClasses][3] = {{0, 0, 0},
                                           {0.95f, 0.95f, 0.92f},   // divider: white
                                           {0.88f, 0.78f, 0.22f},   // crossing: yellow
                                           {0.80f, 0.22f, 0.20f}};  // boundary: red
    auto paint_class = [&](int cls) {
        for (const auto& e : scene.gt_vector) {
            if (e.cls != cls) continue;
            for (int c = 0; c < 3; ++c) {
                if (cls == cls_crossing) fill_polygon(tex, c, e.points, palette[cls][c]);
                stroke_polyline(tex, c, e.points, palette[cls][c], cls == cls_crossing ? 0 : paint_r);
            }
        }
    };
    paint_class(cls_divider);
    paint_class(cls_crossing);
    paint_class(cls_boundary);

    detail::blur_texture(tex, params.texture_blur_passes);
    scene.ground_texture = std::move(tex);
    return scene;
}

// --- perspective rendering ---------------------------------------------------

// Renders a BEV raster as seen by one camera: each pixel's center ray is cast
// onto the plane z = h; hits inside the grid sample the raster, everything
// else takes the fill color. Exact geometric inverse of the IPM warp.
inline Image render_raster(const MapRaster& raster, const Camera& cam, double h,
                           std::pair<int, int> out_size, Sampling sampling,
                           const std::vector<float>& fill, int threads = 1) {
    const auto [ow, oh] = out_size;
    if (ow <= 0 || oh <= 0) throw std::invalid_argument("render_raster: out_size must be positive");
    if (static_cast<int>(fill.size()) != raster.channels)
        throw std::invalid_argument("render_raster: fill size != channels");
    Image img(raster.channels, oh, ow);
    const GridSpec& g = raster.grid;
    const int wc = g.width_cells(), hc = g.height_cells();

    // precompute the pixel->original-image rescale (render size may differ
    // from the camera's native size; rays go through native pixel coords)
    const double su = static_cast<double>(cam.width) / ow;
    const double sv = static_cast<double>(cam.height) / oh;

    parallel_for(static_cast<std::size_t>(oh), threads, [&](std::size_t row) {
        const int py = static_cast<int>(row);
        for (int px = 0; px < ow; ++px) {
            const double u = (px + 0.5) * su, v = (py + 0.5) * sv;
            const auto hit = backproject_to_plane(cam, u, v, h);
            bool valid = hit.has_value() && g.contains(hit->first, hit->second);
            if (!valid) {
                for (int c = 0; c < raster.channels; ++c) img.at(c, py, px) = fill[c];
                continue;
            }
            const double gx = (hit->first - g.x_min) / g.resolution;
            const double gy = (hit->second - g.y_min) / g.resolution;
            if (sampling == Sampling::nearest) {
                const int i = std::clamp(static_cast<int>(std::floor(gx)), 0, wc - 1);
                const int j = std::clamp(static_cast<int>(std::floor(gy)), 0, hc - 1);
                for (int c = 0; c < raster.channels; ++c) img.at(c, py, px) = raster.at(c, j, i);
            } else {
                const double fx = gx - 0.5, fy = gy - 0.5;
                const int i0 = static_cast<int>(std::floor(fx));
                const int j0 = static_cast<int>(std::floor(fy));
                const double ax = fx - i0, ay = fy - j0;
                for (int c = 0; c < raster.channels; ++c) {
                    double acc = 0.0;
                    for (int dj = 0; dj < 2; ++dj) {
                        for (int di = 0; di < 2; ++di) {
                            const double w = (di == 0 ? 1.0 - ax : ax) * (dj == 0 ? 1.0 - ay : ay);
                            const int ii = std::clamp(i0 + di, 0, wc - 1);
                            const int jj = std::clamp(j0 + dj, 0, hc - 1);
                            acc += w * raster.at(c, jj, ii);
                        }
                    }
                    img.at(c, py, px) = static_cast<float>(acc);
                }
            }
        }
    });
    return img;
}

inline const std::vector<float> kHorizonColor = {0.61f, 0.76f, 0.92f};

inline std::vector<Image> render_perspective(const Scene& scene, const CameraRig& rig, double h,
                                             std::pair<int, int> out_size,
                                             Sampling sampling = Sampling::bilinear,
                                             int threads = 1) {
    rig.validate();
    std::vector<Image> views;
    views.reserve(rig.cameras.size());
    for (const auto& cam : rig.cameras)
        views.push_back(render_raster(scene.ground_texture, cam, h, out_size, sampling,
                                      kHorizonColor, threads));
    return views;
}

// --- sensor corruptions ------------------------------------------------------

enum class CorruptionKind { brightness, camera_crash, frame_lost, gaussian_noise };

struct CorruptionSpec {
    CorruptionKind kind = CorruptionKind::brightness;
    double severity = 0.0;  // in [0, 1]; 0 is the identity for every kind
    std::uint64_t rng_seed = 0;
};

inline const char* corruption_name(CorruptionKind k) {
    switch (k) {
        case CorruptionKind::brightness: return "brightness";
        case CorruptionKind::camera_crash: return "camera_crash";
        case CorruptionKind::frame_lost: return "frame_lost";
        case CorruptionKind::gaussian_noise: return "gaussian_noise";
    }
    return "?";
}

inline std::optional<CorruptionKind> corruption_from_name(const std::string& s) {
    if (s == "brightness") return CorruptionKind::brightness;
    if (s == "camera_crash") return CorruptionKind::camera_crash;
    if (s == "frame_lost") return CorruptionKind::frame_lost;
    if (s == "gaussian_noise") return CorruptionKind::gaussian_noise;
    return std::nullopt;
}

inline std::vector<Image> corrupt(const std::vector<Image>& images, const CorruptionSpec& spec) {
    if (spec.severity < 0.0 || spec.severity > 1.0)
        throw std::invalid_argument("corrupt: severity must be in [0, 1]");
    std::vector<Image> out = images;
    if (spec.severity == 0.0) return out;
    auto rng = make_rng(spec.rng_seed, std::string("corrupt.") + corruption_name(spec.kind));
    switch (spec.kind) {
        case CorruptionKind::brightness: {
            const float s = static_cast<float>(1.0 + spec.severity);
            for (auto& img : out)
                for (auto& v : img.data) v = std::clamp(v * s, 0.0f, 1.0f);
            break;
        }
        case CorruptionKind::camera_crash: {
            const std::size_t n = out.size();
            const std::size_t kill =
                std::min<std::size_t>(n, static_cast<std::size_t>(std::ceil(spec.severity * n)));
            std::vector<std::size_t> idx(n);
            for (std::size_t i = 0; i < n; ++i) idx[i] = i;
            std::shuffle(idx.begin(), idx.end(), rng);
            for (std::size_t k = 0; k < kill; ++k)
                std::fill(out[idx[k]].data.begin(), out[idx[k]].data.end(), 0.0f);
            break;
        }
        case CorruptionKind::frame_lost: {
            std::uniform_real_distribution<double> u01(0.0, 1.0);
            for (auto& img : out)
                if (u01(rng) < spec.severity) std::fill(img.data.begin(), img.data.end(), 0.0f);
            break;
        }
        case CorruptionKind::gaussian_noise: {
            std::normal_distribution<double> n(0.0, spec.severity * 0.1);
            for (auto& img : out)
                for (auto& v : img.data) v = std::clamp(v + static_cast<float>(n(rng)), 0.0f, 1.0f);
            break;
        }
    }
    return out;
}

// --- rig presets -------------------------------------------------------------

// Forward-looking single camera (also the hand-oracle camera of the tests).
inline CameraRig make_front_rig() {
    CameraRig rig;
    rig.cameras.push_back(make_camera("front", 500.0, 320.0, 240.0, 640, 480, {0.0, 0.0, 1.5}));
    return rig;
}

inline CameraRig make_stereo_front_rig(double baseline = 1.2) {
    CameraRig rig;
    rig.cameras.push_back(
        make_camera("front_left", 500.0, 320.0, 240.0, 640, 480, {0.0, baseline / 2, 1.5}));
    rig.cameras.push_back(
        make_camera("front_right", 500.0, 320.0, 240.0, 640, 480, {0.0, -baseline / 2, 1.5}));
    return rig;
}

// Six-camera surround rig (training default).
inline CameraRig make_ring_rig(int n = 6, double f = 250.0, int width = 352, int height = 128,
                               double cam_height = 1.5) {
    CameraRig rig;
    for (int k = 0; k < n; ++k) {
        const double yaw = 2.0 * M_PI * k / n;
        rig.cameras.push_back(make_camera("cam" + std::to_string(k), f, width / 2.0, height * 0.375,
                                          width, height, {0.0, 0.0, cam_height}, yaw));
    }
    return rig;
}

// Surround rig whose pixel ground footprint beats the grid Nyquist limit over
// its whole visible range, so a nearest render/warp round trip is lossless.
// The focal length follows from requiring footprint(z_max) <= 0.4 * res, and
// the principal point sits above the image so rows only see z in
// [z_min, z_max].
inline CameraRig make_matched_rig(const GridSpec& grid, int n = 6, double cam_height = 1.5,
                                  double z_min = 2.0, double z_max = 18.0) {
    const double res = grid.resolution;
    const double f = std::ceil(z_max * z_max / (0.4 * res * cam_height));
    const double cy = -f * cam_height / z_max;
    const int height = static_cast<int>(std::ceil(f * cam_height * (1.0 / z_min - 1.0 / z_max)));
    const double half_fov = std::min(M_PI / n * 1.18, 0.9);
    const int width = static_cast<int>(std::ceil(2.0 * f * std::tan(half_fov)));
    CameraRig rig;
    for (int k = 0; k < n; ++k) {
        const double yaw = 2.0 * M_PI * k / n;
        rig.cameras.push_back(make_camera("cam" + std::to_string(k), f, width / 2.0, cy, width,
                                          height, {0.0, 0.0, cam_height}, yaw));
    }
    return rig;
}

inline CameraRig rig_preset(const std::string& name, const GridSpec& grid = GridSpec::standard()) {
    if (name == "front") return make_front_rig();
    if (name == "stereo") return make_stereo_front_rig();
    if (name == "ring6") return make_ring_rig();
    if (name == "ring6_reduced") return make_ring_rig(6, 125.0, 176, 64);
    if (name == "matched") return make_matched_rig(grid);
    if (name == "matched1") return make_matched_rig(grid, 1);
    if (name == "matched2") return make_matched_rig(grid, 2);
    throw std::invalid_argument("unknown rig preset: " + name);
}

// --- scene archive -----------------------------------------------------------
// Directory layout: scene.json (seed, params, vectors, centerlines) plus
// gt_semantic.bevr and texture.bevr.

inline void save_scene(const Scene& scene, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json j;
    j["seed"] = scene.seed;
    j["params"] = scene.params.to_json();
    auto poly_json = [](const Polyline& p) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& [x, y] : p) a.push_back({x, y});
        return a;
    };
    j["vectors"] = nlohmann::json::array();
    for (const auto& e : scene.gt_vector)
        j["vectors"].push_back({{"class", e.cls}, {"points", poly_json(e.points)}});
    j["osm_centerlines"] = nlohmann::json::array();
    for (const auto& line : scene.osm_centerlines) j["osm_centerlines"].push_back(poly_json(line));
    j["corridor"] = poly_json(scene.corridor);
    std::ofstream out(fs::path(dir) / "scene.json");
    if (!out) throw std::runtime_error("save_scene: cannot write scene.json in " + dir);
    out << j.dump(2) << "\n";
    save_bevr(scene.gt_semantic, (fs::path(dir) / "gt_semantic.bevr").string());
    save_bevr(scene.ground_texture, (fs::path(dir) / "texture.bevr").string());
}

inline Scene load_scene(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(dir) / "scene.json");
    if (!in) throw std::runtime_error("load_scene: cannot open scene.json in " + dir);
    nlohmann::json j;
    in >> j;
    Scene scene;
    scene.seed = j.at("seed").get<std::uint64_t>();
    scene.params = SceneParams::from_json(j.at("params"));
    auto poly_from = [](const nlohmann::json& a) {
        Polyline p;
        for (const auto& pt : a) p.emplace_back(pt[0].get<double>(), pt[1].get<double>());
        return p;
    };
    for (const auto& e : j.at("vectors"))
        scene.gt_vector.push_back({e.at("class").get<int>(), poly_from(e.at("points"))});
    for (const auto& line : j.at("osm_centerlines")) scene.osm_centerlines.push_back(poly_from(line));
    if (j.contains("corridor")) scene.corridor = poly_from(j.at("corridor"));
    scene.gt_semantic = load_bevr((fs::path(dir) / "gt_semantic.bevr").string());
    scene.ground_texture = load_bevr((fs::path(dir) / "texture.bevr").string());
    return scene;
}

}  // namespace bevkit
