#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "femur/error.hpp"
#include "femur/rng.hpp"

namespace femur {

using Vec3 = Eigen::Vector3d;
using Face = std::array<std::int32_t, 3>;

// Indexed triangle surface. Positions are in millimetres.
// Immutable by convention after construction; all operations return copies.
struct TriMesh {
    std::vector<Vec3> vertices;
    std::vector<Face> faces;

    std::size_t vertex_count() const { return vertices.size(); }
    std::size_t face_count() const { return faces.size(); }

    // Throws ValidationError on out-of-range face indices, degenerate faces,
    // or non-finite coordinates.
    void validate() const;

    Eigen::AlignedBox3d bounding_box() const;
    double bbox_diagonal() const;

    // Stacked (x0,y0,z0,x1,...) view used by the statistics code.
    Eigen::VectorXd flatten() const;
    static TriMesh from_flat(const Eigen::VectorXd& coords, const std::vector<Face>& faces);
};

// Named anatomical points. Insertion order is preserved (it matters for
// serialization determinism); names are unique.
class LandmarkSet {
public:
    using Entry = std::pair<std::string, Vec3>;

    void set(const std::string& name, const Vec3& p);
    bool contains(const std::string& name) const;
    const Vec3& at(const std::string& name) const; // throws ValidationError if absent
    std::size_t size() const { return entries_.size(); }
    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }

    // Checks finiteness and, when a mesh is given, that each point lies
    // inside the mesh bounding box expanded by 10%.
    void validate(const TriMesh* mesh = nullptr) const;

private:
    std::vector<Entry> entries_;
};

// The six landmarks every cohort member must carry for alignment.
const std::vector<std::string>& canonical_landmark_names();
// The three palpable landmarks of the skin study.
const std::vector<std::string>& skin_landmark_names();

// A subset of a mesh's vertices, by index.
struct VertexRegion {
    const TriMesh* mesh = nullptr;
    std::vector<std::int32_t> indices;

    std::size_t size() const { return indices.size(); }
    void validate() const; // unique, in-range
};

// --- point selection / differential quantities -------------------------------

// Area-weighted per-vertex normals, unit length. Throws ValidationError for a
// vertex with no incident face area.
std::vector<Vec3> vertex_normals(const TriMesh& mesh);

// Vertices v with r_inner <= |v - center| < r_outer. Throws EmptyRegionError
// when nothing matches.
VertexRegion select_ring_region(const TriMesh& mesh, const Vec3& center, double r_inner,
                                double r_outer);

// Farthest-point sampling: seeded random start, then greedy max-min distance.
// Ties break toward the smallest vertex index.
VertexRegion farthest_point_downsample(const VertexRegion& region, std::size_t n,
                                       std::uint64_t seed);

// Index of the vertex closest to query; ties break toward the smallest index.
std::int32_t nearest_vertex(const TriMesh& mesh, const Vec3& query);

// Exact nearest-neighbour index over a fixed point set (kd-tree). Matches the
// brute-force scan including the smallest-index tie-break.
class PointIndex {
public:
    explicit PointIndex(const std::vector<Vec3>& points);
    PointIndex(const std::vector<Vec3>& points, const std::vector<std::int32_t>& subset);

    // Returns index into the original point vector.
    std::int32_t nearest(const Vec3& query) const;
    double nearest_distance(const Vec3& query) const;

private:
    struct Node {
        std::int32_t axis = -1;        // -1 marks a leaf
        double split = 0.0;
        std::int32_t left = -1, right = -1;
        std::int32_t begin = 0, end = 0; // leaf payload range
    };
    void build(std::int32_t node, std::int32_t begin, std::int32_t end, int depth);
    void query(std::int32_t node, const Vec3& q, double& best_d2, std::int32_t& best_idx) const;

    std::vector<Vec3> pts_;
    std::vector<std::int32_t> ids_;   // permutation of original indices
    std::vector<Node> nodes_;
};

// Mirror through the x = 0 plane, reversing face winding so orientation stays
// outward.
TriMesh mirror_sagittal(const TriMesh& mesh);
LandmarkSet mirror_sagittal(const LandmarkSet& landmarks);

} // namespace femur
