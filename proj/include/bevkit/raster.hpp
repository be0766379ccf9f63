#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bevkit/geometry.hpp"

namespace bevkit {

enum class RasterKind : std::uint8_t { image = 0, feature = 1, semantic = 2, binary = 3 };

// Perspective-space payload (camera image, feature map, or probability map),
// channel-major (C, H, W).
struct Image {
    int channels = 0, height = 0, width = 0;
    std::vector<float> data;

    Image() = default;
    Image(int c, int h, int w, float fill = 0.0f)
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

    float& at(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    float at(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
};

// BEV raster: channel-major (C, H_cells, W_cells) payload over a GridSpec.
// Row j indexes Y, column i indexes X.
struct MapRaster {
    GridSpec grid;
    int channels = 0;
    RasterKind kind = RasterKind::image;
    std::vector<float> data;

    MapRaster() = default;
    MapRaster(const GridSpec& g, int c, RasterKind k, float fill = 0.0f)
        : grid(g), channels(c), kind(k),
          data(static_cast<std::size_t>(c) * g.height_cells() * g.width_cells(), fill) {}

    int height() const { return grid.height_cells(); }
    int width() const { return grid.width_cells(); }

    float& at(int c, int j, int i) {
        return data[(static_cast<std::size_t>(c) * height() + j) * width() + i];
    }
    float at(int c, int j, int i) const {
        return data[(static_cast<std::size_t>(c) * height() + j) * width() + i];
    }

    void validate() const {
        if (data.size() != static_cast<std::size_t>(channels) * height() * width())
            throw std::invalid_argument("MapRaster: data length != C*H*W");
        if (kind == RasterKind::binary) {
            for (float v : data)
                if (v != 0.0f && v != 1.0f)
                    throw std::invalid_argument("MapRaster: binary raster holds non-{0,1} value");
        }
    }
};

// --- BEVR file format --------------------------------------------------------
// magic "BEVR", u32 version=1, u32 C, u32 H, u32 W, u8 kind,
// f64 x_min, x_max, y_min, y_max, resolution, then C*H*W f32 little-endian
// row-major payload.

namespace detail {

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("BEVR: truncated file");
    return v;
}

}  // namespace detail

inline void save_bevr(const MapRaster& r, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("BEVR: cannot write " + path);
    out.write("BEVR", 4);
    detail::write_pod<std::uint32_t>(out, 1u);
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(r.channels));
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(r.height()));
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(r.width()));
    detail::write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(r.kind));
    detail::write_pod<double>(out, r.grid.x_min);
    detail::write_pod<double>(out, r.grid.x_max);
    detail::write_pod<double>(out, r.grid.y_min);
    detail::write_pod<double>(out, r.grid.y_max);
    detail::write_pod<double>(out, r.grid.resolution);
    out.write(reinterpret_cast<const char*>(r.data.data()),
              static_cast<std::streamsize>(r.data.size() * sizeof(float)));
    if (!out) throw std::runtime_error("BEVR: write failed for " + path);
}

inline MapRaster load_bevr(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("BEVR: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "BEVR", 4) != 0)
        throw std::runtime_error("BEVR: bad magic in " + path);
    const auto version = detail::read_pod<std::uint32_t>(in);
    if (version != 1u) throw std::runtime_error("BEVR: unsupported version in " + path);
    const auto c = detail::read_pod<std::uint32_t>(in);
    const auto h = detail::read_pod<std::uint32_t>(in);
    const auto w = detail::read_pod<std::uint32_t>(in);
    const auto kind = detail::read_pod<std::uint8_t>(in);
    if (kind > 3) throw std::runtime_error("BEVR: bad kind byte in " + path);
    MapRaster r;
    r.grid.x_min = detail::read_pod<double>(in);
    r.grid.x_max = detail::read_pod<double>(in);
    r.grid.y_min = detail::read_pod<double>(in);
    r.grid.y_max = detail::read_pod<double>(in);
    r.grid.resolution = detail::read_pod<double>(in);
    r.grid.validate();
    if (r.grid.height_cells() != static_cast<int>(h) || r.grid.width_cells() != static_cast<int>(w))
        throw std::runtime_error("BEVR: payload dims disagree with grid metadata in " + path);
    r.channels = static_cast<int>(c);
    r.kind = static_cast<RasterKind>(kind);
    r.data.resize(static_cast<std::size_t>(c) * h * w);
    in.read(reinterpret_cast<char*>(r.data.data()),
            static_cast<std::streamsize>(r.data.size() * sizeof(float)));
    if (!in) throw std::runtime_error("BEVR: truncated payload in " + path);
    return r;
}

// Perspective images reuse the BEVR container with a degenerate pixel grid
// (x: [0, W), y: [0, H), resolution 1).
inline void save_image_bevr(const Image& img, const std::string& path) {
    MapRaster r;
    r.grid = GridSpec{0.0, static_cast<double>(img.width), 0.0, static_cast<double>(img.height), 1.0};
    r.channels = img.channels;
    r.kind = RasterKind::image;
    r.data = img.data;
    save_bevr(r, path);
}

inline Image load_image_bevr(const std::string& path) {
    const MapRaster r = load_bevr(path);
    Image img(r.channels, r.height(), r.width());
    img.data = r.data;
    return img;
}

}  // namespace bevkit
