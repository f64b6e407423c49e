#pragma once

// Shared fixtures and independent oracles for the test suite.

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "femur/mesh.hpp"
#include "femur/rng.hpp"

namespace testutil {

using femur::Face;
using femur::TriMesh;
using femur::Vec3;

inline TriMesh unit_tetrahedron() {
    TriMesh m;
    m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
    m.faces = {{0, 2, 1}, {0, 1, 3}, {0, 3, 2}, {1, 2, 3}};
    return m;
}

// UV sphere; poles plus rings-1 latitude rings of `segments` vertices.
inline TriMesh uv_sphere(double radius, int rings, int segments, const Vec3& center = Vec3::Zero()) {
    TriMesh m;
    m.vertices.push_back(center + Vec3(0, 0, radius)); // north pole
    for (int r = 1; r < rings; ++r) {
        const double phi = std::numbers::pi * r / rings;
        for (int s = 0; s < segments; ++s) {
            const double th = 2.0 * std::numbers::pi * s / segments;
            m.vertices.push_back(center + radius * Vec3(std::sin(phi) * std::cos(th),
                                                        std::sin(phi) * std::sin(th),
                                                        std::cos(phi)));
        }
    }
    m.vertices.push_back(center + Vec3(0, 0, -radius)); // south pole
    auto ring_v = [&](int r, int s) { return 1 + (r - 1) * segments + (s % segments); };
    for (int s = 0; s < segments; ++s) m.faces.push_back({0, ring_v(1, s), ring_v(1, s + 1)});
    for (int r = 1; r + 1 < rings; ++r)
        for (int s = 0; s < segments; ++s) {
            const auto a = ring_v(r, s), b = ring_v(r, s + 1), c = ring_v(r + 1, s),
                       d = ring_v(r + 1, s + 1);
            m.faces.push_back({a, c, b});
            m.faces.push_back({b, c, d});
        }
    const auto south = static_cast<std::int32_t>(m.vertices.size() - 1);
    for (int s = 0; s < segments; ++s)
        m.faces.push_back({south, ring_v(rings - 1, s + 1), ring_v(rings - 1, s)});
    return m;
}

// Open cylinder surface along z (no caps), radius r, z in [0, h].
inline TriMesh open_cylinder(double r, double h, int rings, int segments) {
    TriMesh m;
    for (int k = 0; k <= rings; ++k)
        for (int s = 0; s < segments; ++s) {
            const double th = 2.0 * std::numbers::pi * s / segments;
            m.vertices.push_back(Vec3(r * std::cos(th), r * std::sin(th), h * k / rings));
        }
    auto v = [&](int k, int s) { return k * segments + (s % segments); };
    for (int k = 0; k < rings; ++k)
        for (int s = 0; s < segments; ++s) {
            m.faces.push_back({v(k, s), v(k, s + 1), v(k + 1, s)});
            m.faces.push_back({v(k, s + 1), v(k + 1, s + 1), v(k + 1, s)});
        }
    return m;
}

inline std::int32_t brute_nearest(const std::vector<Vec3>& pts, const Vec3& q) {
    std::int32_t best = 0;
    double best_d2 = (pts[0] - q).squaredNorm();
    for (std::size_t i = 1; i < pts.size(); ++i) {
        const double d2 = (pts[i] - q).squaredNorm();
        if (d2 < best_d2) {
            best_d2 = d2;
            best = static_cast<std::int32_t>(i);
        }
    }
    return best;
}

// Symmetric Hausdorff distance over vertex samples.
inline double brute_hausdorff(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    auto one_way = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
        double worst = 0.0;
        for (const Vec3& p : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const Vec3& q : to) best = std::min(best, (p - q).norm());
            worst = std::max(worst, best);
        }
        return worst;
    };
    return std::max(one_way(a, b), one_way(b, a));
}

inline Eigen::Matrix3d rotation_about(const Vec3& axis, double angle_rad) {
    return Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix();
}

inline Vec3 random_unit(femur::Rng& rng) {
    Vec3 v;
    do {
        v = Vec3(rng.normal(), rng.normal(), rng.normal());
    } while (v.norm() < 1e-9);
    return v.normalized();
}

// Angle between directions through a quaternion: 2*atan2 of the rotation
// aligning a to b, independent of the arccos-dot implementation.
inline double quaternion_angle_deg(const Vec3& a, const Vec3& b) {
    const Eigen::Quaterniond q = Eigen::Quaterniond::FromTwoVectors(a, b);
    const double half = std::atan2(q.vec().norm(), std::abs(q.w()));
    return 2.0 * half * 180.0 / std::numbers::pi;
}

// Independent geometric sphere fit: Gauss-Newton with a central-difference
// Jacobian on (c, r), started from the centroid.
struct OracleSphere {
    Vec3 center;
    double radius;
};
inline OracleSphere oracle_sphere_fit(const std::vector<Vec3>& pts) {
    Eigen::Vector4d x;
    Vec3 centroid = Vec3::Zero();
    for (const Vec3& p : pts) centroid += p;
    centroid /= static_cast<double>(pts.size());
    double r0 = 0.0;
    for (const Vec3& p : pts) r0 += (p - centroid).norm();
    r0 /= static_cast<double>(pts.size());
    x << centroid.x(), centroid.y(), centroid.z(), r0;

    auto residuals = [&](const Eigen::Vector4d& v) {
        Eigen::VectorXd r(pts.size());
        const Vec3 c(v[0], v[1], v[2]);
        for (std::size_t i = 0; i < pts.size(); ++i) r[static_cast<Eigen::Index>(i)] = (pts[i] - c).norm() - v[3];
        return r;
    };
    for (int it = 0; it < 200; ++it) {
        const Eigen::VectorXd r = residuals(x);
        Eigen::MatrixXd J(pts.size(), 4);
        const double h = 1e-6;
        for (int k = 0; k < 4; ++k) {
            Eigen::Vector4d xp = x, xm = x;
            xp[k] += h;
            xm[k] -= h;
            J.col(k) = (residuals(xp) - residuals(xm)) / (2.0 * h);
        }
        const Eigen::Vector4d step = (J.transpose() * J).ldlt().solve(J.transpose() * r);
        x -= step;
        if (step.norm() < 1e-12) break;
    }
    return {Vec3(x[0], x[1], x[2]), x[3]};
}

} // namespace testutil
