#pragma once

#include "femur/mesh.hpp"

namespace femur {

// Quadric-error-metric edge collapse down to target_vertex_count vertices.
// target must be in [4, current vertex count]; target == current returns the
// input unchanged. Collapses that would flip a face normal are rejected, so
// the result can end slightly above the target on pathological inputs.
TriMesh decimate(const TriMesh& mesh, std::size_t target_vertex_count);

} // namespace femur
