#include "femur/alignment.hpp"

#include "femur/decimate.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace femur {

TriMesh RigidTransform::apply(const TriMesh& mesh) const {
    TriMesh out = mesh;
    for (Vec3& v : out.vertices) v = rotation * v + translation;
    return out;
}

LandmarkSet RigidTransform::apply(const LandmarkSet& landmarks) const {
    LandmarkSet out = landmarks;
    for (auto& e : out.entries()) e.second = rotation * e.second + translation;
    return out;
}

RigidTransform RigidTransform::compose(const RigidTransform& inner) const {
    return {rotation * inner.rotation, rotation * inner.translation + translation};
}

RigidTransform RigidTransform::inverse() const {
    return {rotation.transpose(), -(rotation.transpose() * translation)};
}

void RigidTransform::validate() const {
    const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).norm();
    if (ortho > 1e-9) throw ValidationError("rotation is not orthonormal");
    if (std::abs(rotation.determinant() - 1.0) > 1e-9)
        throw ValidationError("rotation determinant is not +1");
}

namespace {

// Shared names in source order.
std::vector<std::string> shared_names(const LandmarkSet& a, const LandmarkSet& b) {
    std::vector<std::string> names;
    for (const auto& [name, p] : a.entries())
        if (b.contains(name)) names.push_back(name);
    return names;
}

RigidTransform kabsch(const Eigen::Matrix3Xd& src, const Eigen::Matrix3Xd& dst) {
    const Vec3 cs = src.rowwise().mean();
    const Vec3 cd = dst.rowwise().mean();
    const Eigen::Matrix3Xd s = src.colwise() - cs;
    const Eigen::Matrix3Xd d = dst.colwise() - cd;

    // collinearity check: a second singular value of ~0 leaves rotation unconstrained
    {
        Eigen::JacobiSVD<Eigen::Matrix3Xd> shape_svd(s);
        const auto& sv = shape_svd.singularValues();
        if (sv.size() < 2 || sv(1) <= 1e-9 * std::max(sv(0), 1.0))
            throw DegenerateError("landmarks are collinear; rotation is unconstrained");
    }

    const Eigen::Matrix3d h = d * s.transpose();
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
    if (r.determinant() < 0.0) {
        Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
        flip(2, 2) = -1.0;
        r = svd.matrixU() * flip * svd.matrixV().transpose();
    }
    return {r, cd - r * cs};
}

} // namespace

RigidTransform procrustes_from_landmarks(const LandmarkSet& source, const LandmarkSet& target) {
    const auto names = shared_names(source, target);
    if (names.size() < 3)
        throw ArgumentError("procrustes needs at least 3 shared landmarks, got " +
                            std::to_string(names.size()));
    Eigen::Matrix3Xd src(3, names.size()), dst(3, names.size());
    for (std::size_t i = 0; i < names.size(); ++i) {
        src.col(i) = source.at(names[i]);
        dst.col(i) = target.at(names[i]);
    }
    return kabsch(src, dst);
}

AlignedCohort align_cohort(const std::vector<TriMesh>& meshes,
                           const std::vector<LandmarkSet>& landmarks) {
    if (meshes.empty()) throw ArgumentError("align_cohort: empty cohort");
    if (meshes.size() != landmarks.size())
        throw ArgumentError("align_cohort: mesh/landmark count mismatch");
    const auto& names = canonical_landmark_names();
    for (std::size_t i = 0; i < landmarks.size(); ++i)
        for (const auto& name : names)
            if (!landmarks[i].contains(name))
                throw ValidationError("shape " + std::to_string(i) + " is missing landmark '" +
                                      name + "'");

    const std::size_t n = meshes.size();
    const std::size_t k = names.size();
    std::vector<Eigen::Matrix3Xd> pts(n, Eigen::Matrix3Xd(3, k));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) pts[i].col(j) = landmarks[i].at(names[j]);

    std::vector<RigidTransform> transforms(n);
    std::vector<Eigen::Matrix3Xd> cur = pts;

    if (n > 1) {
        Eigen::Matrix3Xd mean = cur[0];
        for (int iter = 0; iter < 100; ++iter) {
            for (std::size_t i = 0; i < n; ++i) {
                LandmarkSet src, dst;
                for (std::size_t j = 0; j < k; ++j) {
                    src.set(names[j], pts[i].col(j));
                    dst.set(names[j], mean.col(j));
                }
                transforms[i] = procrustes_from_landmarks(src, dst);
                cur[i] = (transforms[i].rotation * pts[i]).colwise() + transforms[i].translation;
            }
            Eigen::Matrix3Xd new_mean = Eigen::Matrix3Xd::Zero(3, k);
            for (std::size_t i = 0; i < n; ++i) new_mean += cur[i];
            new_mean /= static_cast<double>(n);
            const double motion = (new_mean - mean).colwise().norm().maxCoeff();
            mean = new_mean;
            if (motion < 1e-6) break;
        }
    }

    AlignedCohort out;
    out.reference_index = 0;
    out.meshes.reserve(n);
    out.landmarks.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.meshes.push_back(transforms[i].apply(meshes[i]));
        out.landmarks.push_back(transforms[i].apply(landmarks[i]));
        out.transforms.push_back(transforms[i]);
    }
    return out;
}

double symmetric_surface_distance(const TriMesh& a, const TriMesh& b) {
    const PointIndex ia(a.vertices), ib(b.vertices);
    double sum_ab = 0.0, sum_ba = 0.0;
    for (const Vec3& v : a.vertices) sum_ab += ib.nearest_distance(v);
    for (const Vec3& v : b.vertices) sum_ba += ia.nearest_distance(v);
    return 0.5 * (sum_ab / static_cast<double>(a.vertex_count()) +
                  sum_ba / static_cast<double>(b.vertex_count()));
}

int select_unbiased_reference_index(const AlignedCohort& cohort) {
    const std::size_t n = cohort.meshes.size();
    if (n == 0) throw ArgumentError("select_unbiased_reference: empty cohort");
    if (n == 1) return 0;
    Eigen::MatrixXd dist = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            dist(i, j) = dist(j, i) = symmetric_surface_distance(cohort.meshes[i], cohort.meshes[j]);

    int best = 0;
    double best_median = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> d;
        d.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) d.push_back(dist(i, j));
        std::sort(d.begin(), d.end());
        const double median = d.size() % 2 == 1 ? d[d.size() / 2]
                                                : 0.5 * (d[d.size() / 2 - 1] + d[d.size() / 2]);
        if (median < best_median) {
            best_median = median;
            best = static_cast<int>(i);
        }
    }
    return best;
}

TriMesh select_unbiased_reference(const AlignedCohort& cohort, std::size_t target_vertices) {
    const int idx = select_unbiased_reference_index(cohort);
    const TriMesh& ref = cohort.meshes[idx];
    if (target_vertices >= ref.vertex_count()) return ref;
    return decimate(ref, target_vertices);
}

} // namespace femur
