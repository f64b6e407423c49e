#pragma once

#include <cstdint>

#include "femur/mesh.hpp"

namespace femur {

struct SphereFit {
    Vec3 center = Vec3::Zero();
    double radius = 0.0;
    double rms_residual = 0.0;
};

struct MechanicalAxis {
    Vec3 notch_point = Vec3::Zero();
    Vec3 hip_center = Vec3::Zero();
    Vec3 direction = Vec3::UnitZ(); // unit, notch -> hip center
};

// Euclidean fovea-to-notch distance, the scale unit for ring regions.
double femur_length_indicator(const LandmarkSet& landmarks);

// Partition at 10% of the fovea-to-furthest-vertex distance. Vertices
// strictly under the threshold are proximal; the boundary goes distal.
std::pair<VertexRegion, VertexRegion> clip_proximal(const TriMesh& mesh, const Vec3& fovea);

// Algebraic least squares followed by Gauss-Newton refinement of
// sum(|p - c| - r)^2. The refinement never increases the RMS radial residual
// (the algebraic solution is kept if it would).
SphereFit fit_sphere(const std::vector<Vec3>& points);

// Seeded uniform sample of n_points region vertices, then fit_sphere.
SphereFit hip_center(const VertexRegion& head_region, std::size_t n_points, std::uint64_t seed);

// Femoral-head region rule: estimate the head radius from a sphere fit to the
// k vertices nearest the fovea, then keep proximal vertices within
// radius_scale x that estimate of the fovea. The region always contains at
// least the k nearest vertices, even when the radius estimate is poor.
VertexRegion head_surface_region(const TriMesh& mesh, const VertexRegion& proximal,
                                 const Vec3& fovea, std::size_t knn = 150,
                                 double radius_scale = 1.2);

MechanicalAxis mechanical_axis(const Vec3& notch, const SphereFit& hip);

// Unsigned 3D angle between axis directions, degrees in [0, 180].
double axis_angle_deviation(const MechanicalAxis& a, const MechanicalAxis& b);

// Vertex-to-vertex RMSE between index-corresponding vertex sets.
double surface_rmse(const std::vector<Vec3>& a, const std::vector<Vec3>& b);
double surface_rmse(const TriMesh& a, const TriMesh& b);

} // namespace femur
