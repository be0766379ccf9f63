#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "bevkit/common.hpp"
#include "bevkit/geometry.hpp"

using namespace bevkit;

namespace {

// Hand-written pinhole oracle for the front camera of the tabulated cases:
// mounted at ego (0, 0, 1.5), looking along +X, camera x right / y down /
// z forward. Kept free of the Eigen-based production path.
struct OracleResult {
    bool valid;
    double u, v, depth;
};

OracleResult oracle_front_project(double X, double Y, double Z, double f, double cx, double cy,
                                  double cam_height) {
    const double x_cam = -Y;
    const double y_cam = -(Z - cam_height);
    const double z_cam = X;
    if (z_cam <= 1e-6) return {false, 0, 0, 0};
    return {true, cx + f * x_cam / z_cam, cy + f * y_cam / z_cam, z_cam};
}

Camera front_camera() { return make_camera("front", 500.0, 320.0, 240.0, 640, 480, {0.0, 0.0, 1.5}); }

}  // namespace

TEST_CASE("bev_cell_to_ego returns cell centers", "[geometry]") {
    const GridSpec grid = GridSpec::standard();
    REQUIRE(grid.width_cells() == 400);
    REQUIRE(grid.height_cells() == 200);

    auto [x0, y0] = bev_cell_to_ego({0, 0}, grid);
    CHECK(x0 == Catch::Approx(-29.925).margin(1e-12));
    CHECK(y0 == Catch::Approx(-14.925).margin(1e-12));

    auto [x1, y1] = bev_cell_to_ego({399, 199}, grid);
    CHECK(x1 == Catch::Approx(29.925).margin(1e-12));
    CHECK(y1 == Catch::Approx(14.925).margin(1e-12));

    auto [x2, y2] = bev_cell_to_ego({200, 100}, grid);
    CHECK(x2 == Catch::Approx(0.075).margin(1e-12));
    CHECK(y2 == Catch::Approx(0.075).margin(1e-12));

    CHECK_THROWS_AS(bev_cell_to_ego({400, 0}, grid), std::out_of_range);
    CHECK_THROWS_AS(bev_cell_to_ego({0, -1}, grid), std::out_of_range);
}

TEST_CASE("project_ego_to_pixel matches the hand pinhole oracle", "[geometry]") {
    const Camera cam = front_camera();

    SECTION("point straight ahead") {
        const auto hit = project_ego_to_pixel({10.0, 0.0, 0.0}, cam);
        REQUIRE(hit.has_value());
        const auto ref = oracle_front_project(10, 0, 0, 500, 320, 240, 1.5);
        CHECK(hit->u == Catch::Approx(320.0).margin(1e-9));
        CHECK(hit->v == Catch::Approx(315.0).margin(1e-9));
        CHECK(hit->depth == Catch::Approx(10.0).margin(1e-9));
        CHECK(hit->u == Catch::Approx(ref.u).margin(1e-9));
        CHECK(hit->v == Catch::Approx(ref.v).margin(1e-9));
    }
    SECTION("point behind the camera is rejected") {
        CHECK_FALSE(project_ego_to_pixel({-5.0, 0.0, 0.0}, cam).has_value());
        CHECK_FALSE(oracle_front_project(-5, 0, 0, 500, 320, 240, 1.5).valid);
    }
    SECTION("lateral point") {
        const auto hit = project_ego_to_pixel({10.0, 2.0, 0.0}, cam);
        REQUIRE(hit.has_value());
        CHECK(hit->u == Catch::Approx(220.0).margin(1e-9));
        CHECK(hit->v == Catch::Approx(315.0).margin(1e-9));
        CHECK(hit->depth == Catch::Approx(10.0).margin(1e-9));
    }
    SECTION("oracle agreement over random forward points") {
        auto rng = make_rng(11, "geom.oracle");
        std::uniform_real_distribution<double> ux(0.5, 40.0), uy(-15.0, 15.0), uz(-0.5, 2.0);
        for (int k = 0; k < 2000; ++k) {
            const double X = ux(rng), Y = uy(rng), Z = uz(rng);
            const auto hit = project_ego_to_pixel({X, Y, Z}, cam);
            const auto ref = oracle_front_project(X, Y, Z, 500, 320, 240, 1.5);
            REQUIRE(hit.has_value() == ref.valid);
            if (ref.valid) {
                CHECK(hit->u == Catch::Approx(ref.u).margin(1e-9));
                CHECK(hit->v == Catch::Approx(ref.v).margin(1e-9));
                CHECK(hit->depth == Catch::Approx(ref.depth).margin(1e-9));
            }
        }
    }
}

TEST_CASE("scale_pixel applies the size ratios", "[geometry]") {
    auto [u, v] = scale_pixel({800.0, 450.0}, {352, 128}, {1600, 900});
    CHECK(u == Catch::Approx(176.0).margin(1e-12));
    CHECK(v == Catch::Approx(64.0).margin(1e-12));

    auto [u0, v0] = scale_pixel({0.0, 0.0}, {123, 45}, {67, 89});
    CHECK(u0 == 0.0);
    CHECK(v0 == 0.0);

    auto [ui, vi] = scale_pixel({12.25, 97.5}, {640, 480}, {640, 480});
    CHECK(ui == 12.25);
    CHECK(vi == 97.5);

    CHECK_THROWS_AS(scale_pixel({1, 1}, {0, 4}, {4, 4}), std::invalid_argument);
}

TEST_CASE("scale_pixel round trip is the identity", "[geometry]") {
    auto rng = make_rng(3, "geom.scale");
    std::uniform_real_distribution<double> up(0.0, 2000.0);
    std::uniform_int_distribution<int> us(1, 4096);
    for (int k = 0; k < 200; ++k) {
        const std::pair<int, int> a{us(rng), us(rng)}, b{us(rng), us(rng)};
        const std::pair<double, double> p{up(rng), up(rng)};
        const auto q = scale_pixel(scale_pixel(p, b, a), a, b);
        CHECK(q.first == Catch::Approx(p.first).margin(1e-12 * (1.0 + std::abs(p.first))));
        CHECK(q.second == Catch::Approx(p.second).margin(1e-12 * (1.0 + std::abs(p.second))));
    }
}

TEST_CASE("projection then planar back-projection recovers the ego point", "[geometry]") {
    auto rng = make_rng(7, "geom.backproj");
    std::uniform_real_distribution<double> ux(-40.0, 40.0), uy(-40.0, 40.0);
    std::uniform_real_distribution<double> uyaw(-M_PI, M_PI), upitch(0.0, 0.4);
    std::uniform_real_distribution<double> uh(-0.2, 0.8);

    for (int c = 0; c < 20; ++c) {
        const Camera cam = make_camera("c", 400.0 + 40.0 * c, 500.0, 300.0, 1000, 600,
                                       {0.2 * c - 2.0, 0.1 * c, 1.2 + 0.05 * c}, uyaw(rng), upitch(rng));
        const double h = uh(rng);
        for (int k = 0; k < 500; ++k) {
            const double X = ux(rng), Y = uy(rng);
            const auto hit = project_ego_to_pixel({X, Y, h}, cam);
            if (!hit) continue;
            const auto back = backproject_to_plane(cam, hit->u, hit->v, h);
            REQUIRE(back.has_value());
            CHECK(back->first == Catch::Approx(X).margin(1e-9));
            CHECK(back->second == Catch::Approx(Y).margin(1e-9));
        }
    }
}

TEST_CASE("projection is equivariant under joint rigid motion", "[geometry]") {
    auto rng = make_rng(13, "geom.equivariance");
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const Camera cam = make_camera("c", 500.0, 320.0, 240.0, 640, 480, {0.4, -0.2, 1.6}, 0.3, 0.1);

    for (int k = 0; k < 200; ++k) {
        Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
        const Eigen::Matrix3d rot =
            (Eigen::AngleAxisd(u(rng) * M_PI, Eigen::Vector3d::UnitZ()) *
             Eigen::AngleAxisd(u(rng) * 0.5, Eigen::Vector3d::UnitY()) *
             Eigen::AngleAxisd(u(rng) * 0.5, Eigen::Vector3d::UnitX()))
                .toRotationMatrix();
        m.block<3, 3>(0, 0) = rot;
        m.block<3, 1>(0, 3) = Eigen::Vector3d(u(rng) * 5, u(rng) * 5, u(rng));

        Camera moved = cam;
        moved.ego_to_cam = cam.ego_to_cam * m.inverse();

        const Eigen::Vector3d p(8.0 + 4.0 * u(rng), 3.0 * u(rng), 0.5 * u(rng));
        const Eigen::Vector3d p_moved = (m * p.homogeneous()).head<3>();

        const auto a = project_ego_to_pixel(p, cam);
        const auto b = project_ego_to_pixel(p_moved, moved);
        REQUIRE(a.has_value() == b.has_value());
        if (a) {
            CHECK(a->u == Catch::Approx(b->u).margin(1e-9));
            CHECK(a->v == Catch::Approx(b->v).margin(1e-9));
            CHECK(a->depth == Catch::Approx(b->depth).margin(1e-9));
        }
    }
}

TEST_CASE("rig JSON round trip and validation", "[geometry]") {
    const Camera cam = front_camera();
    CameraRig rig;
    rig.cameras = {cam, make_camera("left", 450.0, 300.0, 200.0, 600, 400, {0.0, 1.0, 1.4}, M_PI / 2)};

    const auto j = rig_to_json(rig);
    const CameraRig back = rig_from_json(j);
    REQUIRE(back.size() == 2);
    CHECK(back.cameras[0].name == "front");
    CHECK((back.cameras[1].ego_to_cam - rig.cameras[1].ego_to_cam).cwiseAbs().maxCoeff() == 0.0);

    SECTION("non-orthonormal rotation is rejected") {
        auto bad = j;
        bad[0]["T_ego_to_cam"][0] = 2.0;
        CHECK_THROWS_AS(rig_from_json(bad), std::invalid_argument);
    }
    SECTION("missing field names its path") {
        auto bad = j;
        bad[1].erase("K");
        CHECK_THROWS_WITH(rig_from_json(bad), Catch::Matchers::ContainsSubstring("[1].K"));
    }
    SECTION("zero image size is rejected") {
        auto bad = j;
        bad[0]["width"] = 0;
        CHECK_THROWS_AS(rig_from_json(bad), std::invalid_argument);
    }
}
