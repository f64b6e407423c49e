#include "femur/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

namespace femur {

void TriMesh::validate() const {
    const auto n = static_cast<std::int32_t>(vertices.size());
    for (std::size_t vi = 0; vi < vertices.size(); ++vi) {
        if (!vertices[vi].allFinite())
            throw ValidationError("vertex " + std::to_string(vi) + " has non-finite coordinates");
    }
    for (std::size_t fi = 0; fi < faces.size(); ++fi) {
        const Face& f = faces[fi];
        for (int k = 0; k < 3; ++k) {
            if (f[k] < 0 || f[k] >= n)
                throw ValidationError("face " + std::to_string(fi) + " references vertex " +
                                      std::to_string(f[k]) + " but mesh has " +
                                      std::to_string(n) + " vertices");
        }
        if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
            throw ValidationError("face " + std::to_string(fi) + " is degenerate (repeated vertex)");
    }
}

Eigen::AlignedBox3d TriMesh::bounding_box() const {
    Eigen::AlignedBox3d box;
    for (const Vec3& v : vertices) box.extend(v);
    return box;
}

double TriMesh::bbox_diagonal() const {
    if (vertices.empty()) return 0.0;
    return bounding_box().diagonal().norm();
}

Eigen::VectorXd TriMesh::flatten() const {
    Eigen::VectorXd out(3 * vertices.size());
    for (std::size_t i = 0; i < vertices.size(); ++i) out.segment<3>(3 * i) = vertices[i];
    return out;
}

TriMesh TriMesh::from_flat(const Eigen::VectorXd& coords, const std::vector<Face>& faces) {
    if (coords.size() % 3 != 0) throw ArgumentError("flat coordinate vector length not divisible by 3");
    TriMesh m;
    m.vertices.resize(coords.size() / 3);
    for (std::size_t i = 0; i < m.vertices.size(); ++i) m.vertices[i] = coords.segment<3>(3 * i);
    m.faces = faces;
    return m;
}

void LandmarkSet::set(const std::string& name, const Vec3& p) {
    for (auto& e : entries_) {
        if (e.first == name) {
            e.second = p;
            return;
        }
    }
    entries_.emplace_back(name, p);
}

bool LandmarkSet::contains(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.first == name) return true;
    return false;
}

const Vec3& LandmarkSet::at(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.first == name) return e.second;
    throw ValidationError("landmark '" + name + "' not present");
}

void LandmarkSet::validate(const TriMesh* mesh) const {
    std::unordered_set<std::string> seen;
    for (const auto& [name, p] : entries_) {
        if (!seen.insert(name).second) throw ValidationError("duplicate landmark name '" + name + "'");
        if (!p.allFinite()) throw ValidationError("landmark '" + name + "' has non-finite coordinates");
    }
    if (mesh && !mesh->vertices.empty()) {
        Eigen::AlignedBox3d box = mesh->bounding_box();
        const Vec3 pad = 0.10 * box.diagonal().cwiseAbs().cwiseMax(Vec3::Constant(1e-9));
        box.extend(box.min() - pad);
        box.extend(box.max() + pad);
        for (const auto& [name, p] : entries_) {
            if (!box.contains(p))
                throw ValidationError("landmark '" + name + "' lies outside the expanded mesh bounds");
        }
    }
}

const std::vector<std::string>& canonical_landmark_names() {
    static const std::vector<std::string> names = {
        "fovea",          "greater_trochanter", "lesser_trochanter",
        "medial_condyle", "lateral_condyle",    "intercondylar_notch"};
    return names;
}

const std::vector<std::string>& skin_landmark_names() {
    static const std::vector<std::string> names = {"greater_trochanter", "medial_epicondyle",
                                                   "lateral_epicondyle"};
    return names;
}

void VertexRegion::validate() const {
    if (!mesh) throw ValidationError("VertexRegion has no mesh");
    const auto n = static_cast<std::int32_t>(mesh->vertex_count());
    std::unordered_set<std::int32_t> seen;
    for (std::int32_t i : indices) {
        if (i < 0 || i >= n) throw ValidationError("region index " + std::to_string(i) + " out of range");
        if (!seen.insert(i).second) throw ValidationError("region index " + std::to_string(i) + " repeated");
    }
}

std::vector<Vec3> vertex_normals(const TriMesh& mesh) {
    std::vector<Vec3> acc(mesh.vertex_count(), Vec3::Zero());
    for (const Face& f : mesh.faces) {
        const Vec3& a = mesh.vertices[f[0]];
        const Vec3& b = mesh.vertices[f[1]];
        const Vec3& c = mesh.vertices[f[2]];
        const Vec3 area2 = (b - a).cross(c - a); // twice area, outward for CCW faces
        acc[f[0]] += area2;
        acc[f[1]] += area2;
        acc[f[2]] += area2;
    }
    for (std::size_t i = 0; i < acc.size(); ++i) {
        const double n = acc[i].norm();
        if (n <= 1e-30)
            throw ValidationError("vertex " + std::to_string(i) + " has zero incident face area");
        acc[i] /= n;
    }
    return acc;
}

VertexRegion select_ring_region(const TriMesh& mesh, const Vec3& center, double r_inner,
                                double r_outer) {
    if (r_inner < 0.0 || r_inner >= r_outer)
        throw ArgumentError("ring radii must satisfy 0 <= r_inner < r_outer");
    VertexRegion out{&mesh, {}};
    for (std::size_t i = 0; i < mesh.vertex_count(); ++i) {
        const double d = (mesh.vertices[i] - center).norm();
        if (d >= r_inner && d < r_outer) out.indices.push_back(static_cast<std::int32_t>(i));
    }
    if (out.indices.empty()) throw EmptyRegionError("ring region selected no vertices");
    return out;
}

VertexRegion farthest_point_downsample(const VertexRegion& region, std::size_t n,
                                       std::uint64_t seed) {
    region.validate();
    if (n == 0 || n > region.size())
        throw ArgumentError("farthest_point_downsample: n must be in [1, region size]");
    const TriMesh& mesh = *region.mesh;

    // Work over region positions sorted by vertex index so that the result
    // depends only on the vertex set, not the order indices were listed in.
    std::vector<std::int32_t> sorted = region.indices;
    std::sort(sorted.begin(), sorted.end());

    Rng rng(seed);
    const std::size_t start = rng.uniform_below(sorted.size());

    std::vector<double> min_d2(sorted.size(), std::numeric_limits<double>::infinity());
    std::vector<std::int32_t> picked;
    picked.reserve(n);
    std::size_t current = start;
    for (std::size_t k = 0; k < n; ++k) {
        picked.push_back(sorted[current]);
        const Vec3& p = mesh.vertices[sorted[current]];
        std::size_t best = 0;
        double best_d2 = -1.0;
        for (std::size_t i = 0; i < sorted.size(); ++i) {
            const double d2 = (mesh.vertices[sorted[i]] - p).squaredNorm();
            if (d2 < min_d2[i]) min_d2[i] = d2;
            if (min_d2[i] > best_d2) {
                best_d2 = min_d2[i];
                best = i;
            }
        }
        current = best;
    }
    return VertexRegion{&mesh, std::move(picked)};
}

std::int32_t nearest_vertex(const TriMesh& mesh, const Vec3& query) {
    if (mesh.vertices.empty()) throw ArgumentError("nearest_vertex on empty mesh");
    std::int32_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        const double d2 = (mesh.vertices[i] - query).squaredNorm();
        if (d2 < best_d2) {
            best_d2 = d2;
            best = static_cast<std::int32_t>(i);
        }
    }
    return best;
}

PointIndex::PointIndex(const std::vector<Vec3>& points) {
    pts_ = points;
    ids_.resize(points.size());
    std::iota(ids_.begin(), ids_.end(), 0);
    if (pts_.empty()) throw ArgumentError("PointIndex over empty point set");
    nodes_.reserve(2 * pts_.size() / 8 + 4);
    nodes_.emplace_back();
    build(0, 0, static_cast<std::int32_t>(pts_.size()), 0);
}

PointIndex::PointIndex(const std::vector<Vec3>& points, const std::vector<std::int32_t>& subset) {
    if (subset.empty()) throw ArgumentError("PointIndex over empty subset");
    pts_.reserve(subset.size());
    ids_.reserve(subset.size());
    for (std::int32_t i : subset) {
        pts_.push_back(points[i]);
        ids_.push_back(i);
    }
    nodes_.emplace_back();
    build(0, 0, static_cast<std::int32_t>(pts_.size()), 0);
}

void PointIndex::build(std::int32_t node, std::int32_t begin, std::int32_t end, int depth) {
    constexpr std::int32_t kLeafSize = 16;
    if (end - begin <= kLeafSize) {
        nodes_[node].axis = -1;
        nodes_[node].begin = begin;
        nodes_[node].end = end;
        return;
    }
    // Split on the widest axis at the median.
    Vec3 lo = pts_[begin], hi = pts_[begin];
    for (std::int32_t i = begin; i < end; ++i) {
        lo = lo.cwiseMin(pts_[i]);
        hi = hi.cwiseMax(pts_[i]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const std::int32_t mid = begin + (end - begin) / 2;

    // Co-sort positions and ids. Stable key (coord, id) keeps the build
    // deterministic under duplicated points.
    std::vector<std::int32_t> perm(end - begin);
    std::iota(perm.begin(), perm.end(), begin);
    std::nth_element(perm.begin(), perm.begin() + (mid - begin), perm.end(),
                     [&](std::int32_t a, std::int32_t b) {
                         if (pts_[a][axis] != pts_[b][axis]) return pts_[a][axis] < pts_[b][axis];
                         return ids_[a] < ids_[b];
                     });
    std::vector<Vec3> tmp_p(perm.size());
    std::vector<std::int32_t> tmp_i(perm.size());
    for (std::size_t k = 0; k < perm.size(); ++k) {
        tmp_p[k] = pts_[perm[k]];
        tmp_i[k] = ids_[perm[k]];
    }
    std::copy(tmp_p.begin(), tmp_p.end(), pts_.begin() + begin);
    std::copy(tmp_i.begin(), tmp_i.end(), ids_.begin() + begin);

    nodes_[node].axis = axis;
    nodes_[node].split = pts_[mid][axis];
    const auto left = static_cast<std::int32_t>(nodes_.size());
    nodes_.emplace_back();
    nodes_.emplace_back();
    nodes_[node].left = left;
    nodes_[node].right = left + 1;
    build(left, begin, mid, depth + 1);
    build(left + 1, mid, end, depth + 1);
}

void PointIndex::query(std::int32_t node, const Vec3& q, double& best_d2,
                       std::int32_t& best_idx) const {
    const Node& nd = nodes_[node];
    if (nd.axis < 0) {
        for (std::int32_t i = nd.begin; i < nd.end; ++i) {
            const double d2 = (pts_[i] - q).squaredNorm();
            if (d2 < best_d2 || (d2 == best_d2 && ids_[i] < best_idx)) {
                best_d2 = d2;
                best_idx = ids_[i];
            }
        }
        return;
    }
    const double delta = q[nd.axis] - nd.split;
    const std::int32_t near = delta < 0.0 ? nd.left : nd.right;
    const std::int32_t far = delta < 0.0 ? nd.right : nd.left;
    query(near, q, best_d2, best_idx);
    if (delta * delta <= best_d2) query(far, q, best_d2, best_idx);
}

std::int32_t PointIndex::nearest(const Vec3& q) const {
    double best_d2 = std::numeric_limits<double>::infinity();
    std::int32_t best = std::numeric_limits<std::int32_t>::max();
    query(0, q, best_d2, best);
    return best;
}

double PointIndex::nearest_distance(const Vec3& q) const {
    double best_d2 = std::numeric_limits<double>::infinity();
    std::int32_t best = std::numeric_limits<std::int32_t>::max();
    query(0, q, best_d2, best);
    return std::sqrt(best_d2);
}

TriMesh mirror_sagittal(const TriMesh& mesh) {
    TriMesh out = mesh;
    for (Vec3& v : out.vertices) v.x() = -v.x();
    for (Face& f : out.faces) std::swap(f[1], f[2]);
    return out;
}

LandmarkSet mirror_sagittal(const LandmarkSet& landmarks) {
    LandmarkSet out = landmarks;
    for (auto& e : out.entries()) e.second.x() = -e.second.x();
    return out;
}

} // namespace femur
