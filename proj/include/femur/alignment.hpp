#pragma once

#include "femur/mesh.hpp"

namespace femur {

// Proper rigid motion: x -> R x + t, det(R) = +1, no scaling.
struct RigidTransform {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
    TriMesh apply(const TriMesh& mesh) const;
    LandmarkSet apply(const LandmarkSet& landmarks) const;
    RigidTransform compose(const RigidTransform& inner) const; // this ∘ inner
    RigidTransform inverse() const;
    void validate() const; // orthonormality and det within 1e-9
};

struct AlignedCohort {
    std::vector<TriMesh> meshes;
    std::vector<LandmarkSet> landmarks;
    std::vector<RigidTransform> transforms; // original -> aligned
    int reference_index = 0;
};

// Least-squares rigid superposition of the shared landmark names (Kabsch).
// Needs at least 3 shared, non-collinear landmarks.
RigidTransform procrustes_from_landmarks(const LandmarkSet& source, const LandmarkSet& target);

// Generalized Procrustes on landmarks: iterate alignment to the evolving mean
// until the mean moves by less than 1e-6 mm (at most 100 rounds). Every mesh
// must carry the six canonical landmarks.
AlignedCohort align_cohort(const std::vector<TriMesh>& meshes,
                           const std::vector<LandmarkSet>& landmarks);

// Symmetric mean nearest-vertex surface distance between two meshes.
double symmetric_surface_distance(const TriMesh& a, const TriMesh& b);

// Index of the member minimizing the median of symmetric surface distances to
// all other members.
int select_unbiased_reference_index(const AlignedCohort& cohort);

// The selected member decimated to target_vertices.
TriMesh select_unbiased_reference(const AlignedCohort& cohort, std::size_t target_vertices);

} // namespace femur
