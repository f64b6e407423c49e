#include <doctest.h>

#include "femur/clinical.hpp"
#include "femur/synthetic.hpp"
#include "helpers.hpp"

using namespace femur;
using namespace testutil;

TEST_CASE("femur_length_indicator is the fovea-to-notch distance") {
    LandmarkSet lms;
    lms.set("fovea", Vec3(10, 5, 400));
    lms.set("intercondylar_notch", Vec3(10, 5, -10));
    CHECK(femur_length_indicator(lms) == doctest::Approx(410.0).epsilon(1e-12));
    SUBCASE("translation invariant") {
        LandmarkSet moved;
        for (const auto& [name, p] : lms.entries()) moved.set(name, p + Vec3(7, -3, 100));
        CHECK(femur_length_indicator(moved) == doctest::Approx(410.0).epsilon(1e-12));
    }
    SUBCASE("missing names raise") {
        LandmarkSet bad;
        bad.set("fovea", Vec3(0, 0, 0));
        CHECK_THROWS_AS(femur_length_indicator(bad), ValidationError);
    }
}

TEST_CASE("clip_proximal") {
    SUBCASE("exact boundary: strict threshold sends the boundary vertex distal") {
        // chain of collinear vertices at distances 0..400 from the fovea;
        // furthest is 400 so the threshold is exactly 40
        TriMesh m;
        for (int i = 0; i <= 40; ++i) m.vertices.push_back(Vec3(0, 0, 10.0 * i));
        // faces only to keep validate() happy about isolated vertices is not
        // required here; clip works on vertices alone
        const auto [prox, dist] = clip_proximal(m, Vec3(0, 0, 0));
        // vertices at 0..39.99 proximal -> indices 0..3 (0,10,20,30); 40 distal
        CHECK(prox.indices == std::vector<std::int32_t>{0, 1, 2, 3});
        CHECK(dist.indices.size() == 37);
        CHECK(dist.indices.front() == 4);
    }
    SUBCASE("brute-force property over random meshes") {
        Rng rng(42);
        for (int trial = 0; trial < 10; ++trial) {
            TriMesh m;
            for (int i = 0; i < 200; ++i)
                m.vertices.push_back(
                    Vec3(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50)));
            const Vec3 fovea(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50));
            double furthest = 0.0;
            for (const Vec3& v : m.vertices) furthest = std::max(furthest, (v - fovea).norm());
            const double thresh = 0.1 * furthest;
            const auto [prox, dist] = clip_proximal(m, fovea);
            CHECK(prox.indices.size() + dist.indices.size() == m.vertex_count());
            for (std::int32_t i : prox.indices)
                CHECK((m.vertices[static_cast<std::size_t>(i)] - fovea).norm() < thresh);
            for (std::int32_t i : dist.indices)
                CHECK((m.vertices[static_cast<std::size_t>(i)] - fovea).norm() >= thresh);
        }
    }
    SUBCASE("synthetic femur: fovea side is proximal, notch side distal") {
        const SyntheticShape s = generate_synthetic_femur(SyntheticFemurParams{}, 40, 24);
        const auto [prox, dist] = clip_proximal(s.mesh, s.landmarks.at("fovea"));
        CHECK(prox.size() > 0);
        CHECK(dist.size() > 0);
        const std::int32_t notch_v = nearest_vertex(s.mesh, s.landmarks.at("intercondylar_notch"));
        CHECK(std::find(dist.indices.begin(), dist.indices.end(), notch_v) != dist.indices.end());
    }
}

TEST_CASE("fit_sphere") {
    SUBCASE("exact sphere recovered to 1e-6") {
        const TriMesh s = uv_sphere(5.0, 12, 16, Vec3(1, 2, 3));
        const SphereFit fit = fit_sphere(s.vertices);
        CHECK((fit.center - Vec3(1, 2, 3)).norm() < 1e-6);
        CHECK(fit.radius == doctest::Approx(5.0).epsilon(1e-6));
        CHECK(fit.rms_residual < 1e-6);
    }
    SUBCASE("noisy spheres agree with the independent oracle over 100 seeds") {
        const TriMesh base = uv_sphere(22.0, 8, 10, Vec3(-4, 7, 12));
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            Rng rng(mix_seed(9000, seed));
            std::vector<Vec3> pts;
            pts.reserve(30);
            for (std::size_t k : rng.sample_without_replacement(base.vertex_count(), 30)) {
                const Vec3 p = base.vertices[k];
                const Vec3 u = (p - Vec3(-4, 7, 12)).normalized();
                pts.push_back(p + 0.5 * rng.normal() * u);
            }
            const SphereFit fit = fit_sphere(pts);
            const OracleSphere oracle = oracle_sphere_fit(pts);
            CHECK((fit.center - oracle.center).norm() < 1e-6);
            CHECK(fit.radius == doctest::Approx(oracle.radius).epsilon(1e-6));
            // sigma = 0.5, n = 30: the center error should be a few sigma/sqrt(n)
            CHECK((fit.center - Vec3(-4, 7, 12)).norm() < 10.0 * 0.5 / std::sqrt(30.0));
        }
    }
    SUBCASE("refinement never increases the RMS radial residual") {
        Rng rng(17);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<Vec3> pts;
            const Vec3 c(rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10));
            const double r = rng.uniform(5, 30);
            for (int i = 0; i < 40; ++i) {
                Vec3 u = random_unit(rng);
                pts.push_back(c + (r + rng.normal()) * u);
            }
            const SphereFit fit = fit_sphere(pts);
            double s2 = 0.0;
            for (const Vec3& p : pts) {
                const double d = (p - fit.center).norm() - fit.radius;
                s2 += d * d;
            }
            CHECK(fit.rms_residual ==
                  doctest::Approx(std::sqrt(s2 / static_cast<double>(pts.size()))).epsilon(1e-9));
        }
    }
    SUBCASE("degenerate inputs") {
        std::vector<Vec3> few = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
        CHECK_THROWS_AS(fit_sphere(few), ArgumentError);
        std::vector<Vec3> coplanar;
        for (int i = 0; i < 10; ++i)
            coplanar.push_back(Vec3(std::cos(0.4 * i), std::sin(0.4 * i), 0.0));
        CHECK_THROWS_AS(fit_sphere(coplanar), DegenerateError);
    }
}

TEST_CASE("hip_center sampling") {
    const TriMesh s = uv_sphere(22.0, 20, 28, Vec3(5, -3, 410));
    VertexRegion region{&s, {}};
    for (std::size_t i = 0; i < s.vertex_count(); ++i)
        region.indices.push_back(static_cast<std::int32_t>(i));
    SUBCASE("noiseless sphere: any seed gives the exact center") {
        for (std::uint64_t seed : {0ULL, 1ULL, 99ULL}) {
            const SphereFit fit = hip_center(region, 30, seed);
            CHECK((fit.center - Vec3(5, -3, 410)).norm() < 1e-6);
            CHECK(fit.radius == doctest::Approx(22.0).epsilon(1e-6));
        }
    }
    SUBCASE("deterministic per seed") {
        const SphereFit a = hip_center(region, 30, 7);
        const SphereFit b = hip_center(region, 30, 7);
        CHECK((a.center - b.center).norm() == 0.0);
        CHECK(a.radius == b.radius);
    }
    SUBCASE("sample larger than the region raises") {
        VertexRegion tiny{&s, {0, 1, 2, 3}};
        CHECK_THROWS_AS(hip_center(tiny, 30, 0), ArgumentError);
    }
}

TEST_CASE("head_surface_region isolates the spherical cap on a synthetic femur") {
    const SyntheticShape s = generate_synthetic_femur(SyntheticFemurParams{}, 60, 32);
    const Vec3 fovea = s.landmarks.at("fovea");
    const auto [prox, dist] = clip_proximal(s.mesh, fovea);
    const VertexRegion head = head_surface_region(s.mesh, prox, fovea);
    REQUIRE(head.size() >= 30);
    // all head vertices should lie close to the exact head sphere
    for (std::int32_t i : head.indices) {
        const double d = (s.mesh.vertices[static_cast<std::size_t>(i)] - s.hip_center).norm();
        CHECK(std::abs(d - s.head_radius) < 0.25 * s.head_radius);
    }
    // and fitting them recovers the exact center well under a millimetre
    const SphereFit fit = hip_center(head, std::min<std::size_t>(30, head.size()), 0);
    CHECK((fit.center - s.hip_center).norm() < 1.0);
}

TEST_CASE("mechanical_axis") {
    SphereFit hip;
    hip.center = Vec3(0, 0, 400);
    const MechanicalAxis ax = mechanical_axis(Vec3(0, 0, 0), hip);
    CHECK((ax.direction - Vec3(0, 0, 1)).norm() < 1e-12);
    CHECK((ax.notch_point - Vec3(0, 0, 0)).norm() == 0.0);
    CHECK((ax.hip_center - Vec3(0, 0, 400)).norm() == 0.0);
    SUBCASE("swapping endpoints negates the direction") {
        SphereFit hip2;
        hip2.center = Vec3(0, 0, 0);
        const MechanicalAxis rev = mechanical_axis(Vec3(0, 0, 400), hip2);
        CHECK((rev.direction + ax.direction).norm() < 1e-12);
    }
    SUBCASE("coincident points are degenerate") {
        SphereFit same;
        same.center = Vec3(1, 2, 3);
        CHECK_THROWS_AS(mechanical_axis(Vec3(1, 2, 3), same), DegenerateError);
    }
}

TEST_CASE("axis_angle_deviation") {
    auto make = [](const Vec3& d) {
        MechanicalAxis a;
        a.direction = d.normalized();
        return a;
    };
    CHECK(axis_angle_deviation(make(Vec3(0, 0, 1)), make(Vec3(0, 0, 1))) == 0.0);
    const double three = 3.0 * std::numbers::pi / 180.0;
    CHECK(axis_angle_deviation(make(Vec3(0, 0, 1)),
                               make(Vec3(std::sin(three), 0, std::cos(three)))) ==
          doctest::Approx(3.0).epsilon(1e-9));
    SUBCASE("agrees with the quaternion oracle on random pairs") {
        Rng rng(23);
        for (int t = 0; t < 50; ++t) {
            const Vec3 a = random_unit(rng), b = random_unit(rng);
            CHECK(axis_angle_deviation(make(a), make(b)) ==
                  doctest::Approx(quaternion_angle_deg(a, b)).epsilon(1e-9));
        }
    }
    SUBCASE("symmetry and triangle inequality") {
        Rng rng(29);
        for (int t = 0; t < 30; ++t) {
            const Vec3 a = random_unit(rng), b = random_unit(rng), c = random_unit(rng);
            const double ab = axis_angle_deviation(make(a), make(b));
            const double ba = axis_angle_deviation(make(b), make(a));
            const double bc = axis_angle_deviation(make(b), make(c));
            const double ac = axis_angle_deviation(make(a), make(c));
            CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
            CHECK(ac <= ab + bc + 1e-9);
        }
    }
}

TEST_CASE("surface_rmse") {
    const TriMesh tet = unit_tetrahedron();
    CHECK(surface_rmse(tet, tet) == 0.0);
    SUBCASE("uniform 3 mm offset gives exactly 3") {
        TriMesh moved = tet;
        for (Vec3& v : moved.vertices) v += Vec3(0, 0, 3);
        CHECK(surface_rmse(tet, moved) == doctest::Approx(3.0).epsilon(1e-12));
    }
    SUBCASE("matches the direct formula on random clouds") {
        Rng rng(77);
        std::vector<Vec3> a, b;
        double s2 = 0.0;
        for (int i = 0; i < 64; ++i) {
            a.push_back(Vec3(rng.normal(), rng.normal(), rng.normal()));
            b.push_back(Vec3(rng.normal(), rng.normal(), rng.normal()));
            s2 += (a.back() - b.back()).squaredNorm();
        }
        CHECK(surface_rmse(a, b) == doctest::Approx(std::sqrt(s2 / 64.0)).epsilon(1e-12));
    }
    SUBCASE("rigid invariance") {
        Rng rng(78);
        std::vector<Vec3> a, b;
        for (int i = 0; i < 50; ++i) {
            a.push_back(Vec3(rng.normal(), rng.normal(), rng.normal()));
            b.push_back(Vec3(rng.normal(), rng.normal(), rng.normal()));
        }
        const Eigen::Matrix3d R = rotation_about(random_unit(rng), 0.9);
        const Vec3 t(4, 5, 6);
        std::vector<Vec3> a2, b2;
        for (std::size_t i = 0; i < a.size(); ++i) {
            a2.push_back(R * a[i] + t);
            b2.push_back(R * b[i] + t);
        }
        CHECK(surface_rmse(a, b) == doctest::Approx(surface_rmse(a2, b2)).epsilon(1e-9));
    }
    SUBCASE("size mismatch raises") {
        std::vector<Vec3> a = {Vec3::Zero()}, b = {Vec3::Zero(), Vec3::Zero()};
        CHECK_THROWS_AS(surface_rmse(a, b), ValidationError);
    }
}
