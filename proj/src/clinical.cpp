#include "femur/clinical.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace femur {

double femur_length_indicator(const LandmarkSet& landmarks) {
    return (landmarks.at("fovea") - landmarks.at("intercondylar_notch")).norm();
}

std::pair<VertexRegion, VertexRegion> clip_proximal(const TriMesh& mesh, const Vec3& fovea) {
    if (mesh.vertices.empty()) throw ArgumentError("clip_proximal on empty mesh");
    double max_d = 0.0;
    for (const Vec3& v : mesh.vertices) max_d = std::max(max_d, (v - fovea).norm());
    const double threshold = 0.10 * max_d;
    VertexRegion proximal{&mesh, {}}, distal{&mesh, {}};
    for (std::size_t i = 0; i < mesh.vertex_count(); ++i) {
        if ((mesh.vertices[i] - fovea).norm() < threshold)
            proximal.indices.push_back(static_cast<std::int32_t>(i));
        else
            distal.indices.push_back(static_cast<std::int32_t>(i));
    }
    return {proximal, distal};
}

namespace {

double radial_rms(const std::vector<Vec3>& pts, const Vec3& c, double r) {
    double sum2 = 0.0;
    for (const Vec3& p : pts) {
        const double e = (p - c).norm() - r;
        sum2 += e * e;
    }
    return std::sqrt(sum2 / static_cast<double>(pts.size()));
}

} // namespace

SphereFit fit_sphere(const std::vector<Vec3>& points) {
    if (points.size() < 4) throw ArgumentError("fit_sphere needs at least 4 points");

    // coplanarity check on the centered covariance
    Vec3 centroid = Vec3::Zero();
    for (const Vec3& p : points) centroid += p;
    centroid /= static_cast<double>(points.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const Vec3& p : points) cov += (p - centroid) * (p - centroid).transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    if (eig.eigenvalues()(0) <= 1e-12 * std::max(eig.eigenvalues()(2), 1e-12))
        throw DegenerateError("fit_sphere: points are (near-)coplanar");

    // algebraic linearization: 2 p.c + (r^2 - |c|^2) = |p|^2
    Eigen::MatrixXd a(points.size(), 4);
    Eigen::VectorXd b(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        a.row(i) << 2.0 * points[i].x(), 2.0 * points[i].y(), 2.0 * points[i].z(), 1.0;
        b(i) = points[i].squaredNorm();
    }
    const Eigen::Vector4d sol = a.colPivHouseholderQr().solve(b);
    Vec3 c = sol.head<3>();
    const double r2 = sol(3) + c.squaredNorm();
    if (!(r2 > 0.0) || !c.allFinite())
        throw DegenerateError("fit_sphere: algebraic solution is degenerate");
    double r = std::sqrt(r2);

    const double algebraic_rms = radial_rms(points, c, r);

    // geometric Gauss-Newton on residuals f_i = |p_i - c| - r
    Vec3 best_c = c;
    double best_r = r, best_rms = algebraic_rms;
    for (int iter = 0; iter < 50; ++iter) {
        Eigen::MatrixXd j(points.size(), 4);
        Eigen::VectorXd f(points.size());
        for (std::size_t i = 0; i < points.size(); ++i) {
            const Vec3 d = points[i] - c;
            const double len = std::max(d.norm(), 1e-12);
            f(i) = len - r;
            j.row(i) << -d.x() / len, -d.y() / len, -d.z() / len, -1.0;
        }
        const Eigen::Vector4d step = j.colPivHouseholderQr().solve(-f);
        if (!step.allFinite()) break;
        c += step.head<3>();
        r += step(3);
        const double rms = radial_rms(points, c, r);
        if (rms < best_rms) {
            best_rms = rms;
            best_c = c;
            best_r = r;
        }
        if (step.norm() < 1e-12 * (1.0 + r)) break;
    }

    if (!(best_r > 0.0)) throw DegenerateError("fit_sphere: nonpositive radius");
    return {best_c, best_r, best_rms};
}

SphereFit hip_center(const VertexRegion& head_region, std::size_t n_points, std::uint64_t seed) {
    head_region.validate();
    if (n_points < 4) throw ArgumentError("hip_center: need at least 4 sample points");
    if (head_region.size() < n_points)
        throw ArgumentError("hip_center: region has " + std::to_string(head_region.size()) +
                            " vertices, need " + std::to_string(n_points));
    // sort so the draw depends on the vertex set, not the listing order
    std::vector<std::int32_t> sorted = head_region.indices;
    std::sort(sorted.begin(), sorted.end());
    Rng rng(seed);
    const auto pick = rng.sample_without_replacement(sorted.size(), n_points);
    std::vector<Vec3> pts;
    pts.reserve(n_points);
    for (std::size_t i : pick) pts.push_back(head_region.mesh->vertices[sorted[i]]);
    return fit_sphere(pts);
}

VertexRegion head_surface_region(const TriMesh& mesh, const VertexRegion& proximal,
                                 const Vec3& fovea, std::size_t knn, double radius_scale) {
    proximal.validate();
    if (proximal.indices.empty()) throw EmptyRegionError("head_surface_region: empty proximal region");

    std::vector<std::int32_t> by_dist = proximal.indices;
    std::sort(by_dist.begin(), by_dist.end(), [&](std::int32_t a, std::int32_t b) {
        const double da = (mesh.vertices[a] - fovea).squaredNorm();
        const double db = (mesh.vertices[b] - fovea).squaredNorm();
        if (da != db) return da < db;
        return a < b;
    });
    const std::size_t k = std::min(knn, by_dist.size());
    std::vector<Vec3> near;
    near.reserve(k);
    for (std::size_t i = 0; i < k; ++i) near.push_back(mesh.vertices[by_dist[i]]);

    double r_hat;
    try {
        r_hat = fit_sphere(near).radius;
    } catch (const Error&) {
        // fall back to the spread of the neighbourhood
        r_hat = (near.back() - fovea).norm();
    }

    VertexRegion out{&mesh, {}};
    // never shrink below the k-neighbourhood the estimate came from; a poor
    // radius estimate must not leave the region too small to fit a sphere
    const double k_dist = (mesh.vertices[by_dist[k - 1]] - fovea).norm();
    const double cutoff = std::max(radius_scale * r_hat, k_dist);
    for (std::int32_t idx : proximal.indices)
        if ((mesh.vertices[idx] - fovea).norm() <= cutoff) out.indices.push_back(idx);
    if (out.indices.empty()) throw EmptyRegionError("head_surface_region selected no vertices");
    return out;
}

MechanicalAxis mechanical_axis(const Vec3& notch, const SphereFit& hip) {
    const Vec3 d = hip.center - notch;
    const double len = d.norm();
    if (len <= 1e-12) throw DegenerateError("mechanical_axis: notch coincides with hip center");
    return {notch, hip.center, d / len};
}

double axis_angle_deviation(const MechanicalAxis& a, const MechanicalAxis& b) {
    const double dot = std::clamp(a.direction.dot(b.direction), -1.0, 1.0);
    return std::acos(dot) * 180.0 / 3.14159265358979323846264338327950288;
}

double surface_rmse(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    if (a.size() != b.size())
        throw ValidationError("surface_rmse: vertex counts differ (" + std::to_string(a.size()) +
                              " vs " + std::to_string(b.size()) + ")");
    if (a.empty()) throw ArgumentError("surface_rmse on empty inputs");
    double sum2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum2 += (a[i] - b[i]).squaredNorm();
    return std::sqrt(sum2 / static_cast<double>(a.size()));
}

double surface_rmse(const TriMesh& a, const TriMesh& b) {
    return surface_rmse(a.vertices, b.vertices);
}

} // namespace femur
