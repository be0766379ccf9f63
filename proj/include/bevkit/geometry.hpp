#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace bevkit {

// Behind-camera cutoff: points with camera-frame depth below this are invalid.
inline constexpr double kDepthEpsilon = 1e-6;

// BEV grid geometry. Cells are half-open squares; cell (i, j) covers
// [x_min + i*res, x_min + (i+1)*res) x [y_min + j*res, y_min + (j+1)*res),
// i along X (width_cells), j along Y (height_cells).
struct GridSpec {
    double x_min = -30.0, x_max = 30.0;
    double y_min = -15.0, y_max = 15.0;
    double resolution = 0.15;

    static GridSpec standard() { return GridSpec{}; }

    static GridSpec make(double x_min, double x_max, double y_min, double y_max, double res) {
        GridSpec g{x_min, x_max, y_min, y_max, res};
        g.validate();
        return g;
    }

    void validate() const {
        if (!(resolution > 0.0)) throw std::invalid_argument("GridSpec: resolution must be > 0");
        auto check_axis = [&](double lo, double hi, const char* name) {
            const double cells = (hi - lo) / resolution;
            const double rounded = std::round(cells);
            if (!(cells > 0.0) || std::abs(cells - rounded) > 1e-9 || rounded < 1.0)
                throw std::invalid_argument(std::string("GridSpec: (") + name +
                                            "_max - " + name + "_min) / resolution must be a positive integer");
        };
        check_axis(x_min, x_max, "x");
        check_axis(y_min, y_max, "y");
    }

    int width_cells() const { return static_cast<int>(std::llround((x_max - x_min) / resolution)); }
    int height_cells() const { return static_cast<int>(std::llround((y_max - y_min) / resolution)); }

    // Cell-center coordinates in the ego frame.
    std::pair<double, double> cell_center(int i, int j) const {
        if (i < 0 || i >= width_cells() || j < 0 || j >= height_cells())
            throw std::out_of_range("GridSpec::cell_center: cell index out of range");
        return {x_min + (i + 0.5) * resolution, y_min + (j + 0.5) * resolution};
    }

    bool contains(double x, double y) const {
        return x >= x_min && x < x_max && y >= y_min && y < y_max;
    }

    // Cell containing (x, y) under the half-open convention. No range check.
    std::pair<int, int> cell_of(double x, double y) const {
        return {static_cast<int>(std::floor((x - x_min) / resolution)),
                static_cast<int>(std::floor((y - y_min) / resolution))};
    }

    bool operator==(const GridSpec& o) const {
        return x_min == o.x_min && x_max == o.x_max && y_min == o.y_min && y_max == o.y_max &&
               resolution == o.resolution;
    }
};

inline std::pair<double, double> bev_cell_to_ego(std::pair<int, int> cell, const GridSpec& grid) {
    return grid.cell_center(cell.first, cell.second);
}

// Projection of an ego point into one camera. u, v are continuous pixel
// coordinates (pixel i covers [i, i+1), center at i + 0.5).
struct PixelHit {
    int cam_index = 0;
    double u = 0.0, v = 0.0;
    double depth = 0.0;
};

// Pinhole camera: intrinsics (zero skew unless configured) plus a rigid
// ego->camera transform. Ego frame: X forward, Y left, Z up. Camera frame:
// z forward, x right, y down.
struct Camera {
    std::string name;
    Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
    Eigen::Matrix4d ego_to_cam = Eigen::Matrix4d::Identity();
    int width = 0, height = 0;

    void validate() const {
        if (width <= 0 || height <= 0)
            throw std::invalid_argument("Camera '" + name + "': image_size must be positive");
        if (!(intrinsics(0, 0) > 0.0) || !(intrinsics(1, 1) > 0.0))
            throw std::invalid_argument("Camera '" + name + "': focal entries must be positive");
        const Eigen::Matrix3d r = ego_to_cam.block<3, 3>(0, 0);
        const Eigen::Matrix3d res = r.transpose() * r - Eigen::Matrix3d::Identity();
        if (res.cwiseAbs().maxCoeff() >= 1e-9)
            throw std::invalid_argument("Camera '" + name + "': extrinsic rotation is not orthonormal");
        if (ego_to_cam.row(3) != Eigen::RowVector4d(0, 0, 0, 1))
            throw std::invalid_argument("Camera '" + name + "': extrinsics last row must be [0 0 0 1]");
    }
};

struct CameraRig {
    std::vector<Camera> cameras;

    void validate() const {
        for (const auto& c : cameras) c.validate();
    }
    std::size_t size() const { return cameras.size(); }
};

// Projects an ego point (X, Y, h) through one camera; the point is extended
// homogeneously to (X, Y, h, 1) before the 4x4 extrinsics. Returns nullopt
// when the point lies at or behind the principal plane.
inline std::optional<PixelHit> project_ego_to_pixel(const Eigen::Vector3d& point, const Camera& cam,
                                                    int cam_index = 0) {
    const Eigen::Vector4d p_c = cam.ego_to_cam * point.homogeneous();
    if (p_c.z() <= kDepthEpsilon) return std::nullopt;
    const Eigen::Vector3d pix = cam.intrinsics * p_c.head<3>();
    return PixelHit{cam_index, pix.x() / pix.z(), pix.y() / pix.z(), p_c.z()};
}

// Diagonal pixel rescaling between a source payload of size (W, H) and a
// target of size (imW, imH).
inline std::pair<double, double> scale_pixel(std::pair<double, double> pixel,
                                             std::pair<int, int> target_size,
                                             std::pair<int, int> source_size) {
    if (target_size.first <= 0 || target_size.second <= 0 || source_size.first <= 0 ||
        source_size.second <= 0)
        throw std::invalid_argument("scale_pixel: sizes must be positive");
    return {pixel.first * static_cast<double>(target_size.first) / source_size.first,
            pixel.second * static_cast<double>(target_size.second) / source_size.second};
}

// Casts the ray through pixel (u, v) onto the ego plane z = h. Returns the
// (X, Y) intersection, or nullopt when the ray is parallel to or leaves the
// plane behind the camera.
inline std::optional<std::pair<double, double>> backproject_to_plane(const Camera& cam, double u,
                                                                     double v, double h) {
    const Eigen::Matrix3d r = cam.ego_to_cam.block<3, 3>(0, 0);
    const Eigen::Vector3d t = cam.ego_to_cam.block<3, 1>(0, 3);
    const Eigen::Vector3d center = -r.transpose() * t;
    const Eigen::Vector3d dir_cam = cam.intrinsics.inverse() * Eigen::Vector3d(u, v, 1.0);
    const Eigen::Vector3d dir = r.transpose() * dir_cam;
    if (std::abs(dir.z()) < 1e-15) return std::nullopt;
    const double s = (h - center.z()) / dir.z();
    if (s <= 0.0) return std::nullopt;
    // reject hits behind the principal plane (depth = s * z-component in cam frame)
    if (s * dir_cam.z() <= kDepthEpsilon) return std::nullopt;
    return std::make_pair(center.x() + s * dir.x(), center.y() + s * dir.y());
}

// Builds a camera from mounting pose. Yaw rotates about ego +Z (0 = facing
// +X, positive = towards +Y/left); pitch rotates the view down by the given
// angle. Zero yaw/pitch gives: cam x = -Y_ego, cam y = -Z_ego, cam z = +X_ego.
inline Camera make_camera(const std::string& name, double f, double cx, double cy, int width,
                          int height, const Eigen::Vector3d& position, double yaw_rad = 0.0,
                          double pitch_down_rad = 0.0) {
    Camera cam;
    cam.name = name;
    cam.intrinsics << f, 0, cx, 0, f, cy, 0, 0, 1;
    cam.width = width;
    cam.height = height;

    Eigen::Matrix3d base;
    base << 0, -1, 0,  // cam x = -Y (right)
        0, 0, -1,      // cam y = -Z (down)
        1, 0, 0;       // cam z = +X (forward)
    const Eigen::Matrix3d yaw = Eigen::AngleAxisd(yaw_rad, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    // pitch about the camera's own x (right) axis, positive tilts the optical axis down
    const Eigen::Matrix3d pitch =
        Eigen::AngleAxisd(pitch_down_rad, Eigen::Vector3d::UnitX()).toRotationMatrix();
    const Eigen::Matrix3d r = pitch * base * yaw.transpose();
    cam.ego_to_cam.setIdentity();
    cam.ego_to_cam.block<3, 3>(0, 0) = r;
    cam.ego_to_cam.block<3, 1>(0, 3) = -r * position;
    return cam;
}

// --- rig file I/O -----------------------------------------------------------
// UTF-8 JSON, one object per camera: name, K (row-major 9), T_ego_to_cam
// (row-major 16), width, height.

inline CameraRig rig_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw std::invalid_argument("rig: top-level JSON must be an array of cameras");
    CameraRig rig;
    for (std::size_t idx = 0; idx < j.size(); ++idx) {
        const auto& cj = j[idx];
        const std::string path = "[" + std::to_string(idx) + "]";
        auto need = [&](const char* field) -> const nlohmann::json& {
            if (!cj.contains(field))
                throw std::invalid_argument("rig: missing field " + path + "." + field);
            return cj.at(field);
        };
        Camera cam;
        cam.name = need("name").get<std::string>();
        const auto k = need("K");
        const auto t = need("T_ego_to_cam");
        if (!k.is_array() || k.size() != 9)
            throw std::invalid_argument("rig: " + path + ".K must be 9 numbers (row-major)");
        if (!t.is_array() || t.size() != 16)
            throw std::invalid_argument("rig: " + path + ".T_ego_to_cam must be 16 numbers (row-major)");
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) cam.intrinsics(r, c) = k[r * 3 + c].get<double>();
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) cam.ego_to_cam(r, c) = t[r * 4 + c].get<double>();
        cam.width = need("width").get<int>();
        cam.height = need("height").get<int>();
        cam.validate();
        rig.cameras.push_back(std::move(cam));
    }
    return rig;
}

inline nlohmann::json rig_to_json(const CameraRig& rig) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& cam : rig.cameras) {
        nlohmann::json cj;
        cj["name"] = cam.name;
        std::vector<double> k(9), t(16);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) k[r * 3 + c] = cam.intrinsics(r, c);
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) t[r * 4 + c] = cam.ego_to_cam(r, c);
        cj["K"] = k;
        cj["T_ego_to_cam"] = t;
        cj["width"] = cam.width;
        cj["height"] = cam.height;
        j.push_back(std::move(cj));
    }
    return j;
}

inline CameraRig load_rig(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("rig: cannot open " + path);
    nlohmann::json j;
    in >> j;
    return rig_from_json(j);
}

inline void save_rig(const CameraRig& rig, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("rig: cannot write " + path);
    out << rig_to_json(rig).dump(2) << "\n";
}

}  // namespace bevkit
