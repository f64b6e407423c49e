#include "femur/decimate.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <limits>
#include <queue>
#include <set>
#include <vector>

namespace femur {

namespace {

using Quadric = Eigen::Matrix4d;

Quadric plane_quadric(const Vec3& a, const Vec3& b, const Vec3& c) {
    Vec3 n = (b - a).cross(c - a);
    const double area2 = n.norm();
    if (area2 <= 1e-30) return Quadric::Zero();
    n /= area2;
    const double d = -n.dot(a);
    Eigen::Vector4d p(n.x(), n.y(), n.z(), d);
    // area weighting keeps large faces influential
    return 0.5 * area2 * (p * p.transpose());
}

double quadric_error(const Quadric& q, const Vec3& v) {
    const Eigen::Vector4d h(v.x(), v.y(), v.z(), 1.0);
    return h.dot(q * h);
}

struct Candidate {
    double cost;
    std::int32_t a, b; // a < b, collapse b into a at position pos
    Vec3 pos;
    std::uint64_t stamp; // sum of endpoint versions at creation; stale if changed
    bool operator>(const Candidate& o) const {
        if (cost != o.cost) return cost > o.cost;
        if (a != o.a) return a > o.a;
        return b > o.b;
    }
};

} // namespace

TriMesh decimate(const TriMesh& mesh, std::size_t target_vertex_count) {
    mesh.validate();
    if (target_vertex_count < 4) throw ArgumentError("decimate: target must be at least 4");
    if (target_vertex_count > mesh.vertex_count())
        throw ArgumentError("decimate: target exceeds current vertex count");
    if (target_vertex_count == mesh.vertex_count()) return mesh;

    const auto nv = static_cast<std::int32_t>(mesh.vertex_count());
    std::vector<Vec3> pos = mesh.vertices;

    // Cap the edge length a collapse may create at a few times the spacing of
    // a uniform triangulation with target_vertex_count vertices. Pure quadric
    // cost happily starves flat regions of vertices; the cap keeps coverage
    // roughly even so downstream correspondence search stays well conditioned.
    double total_area = 0.0;
    for (const Face& f : mesh.faces)
        total_area +=
            0.5 * (pos[f[1]] - pos[f[0]]).cross(pos[f[2]] - pos[f[0]]).norm();
    const double uniform_spacing =
        std::sqrt(2.0 * total_area /
                  (std::sqrt(3.0) * static_cast<double>(target_vertex_count)));
    const double max_edge = 3.0 * uniform_spacing;
    std::vector<Quadric> quad(nv, Quadric::Zero());
    std::vector<Face> faces = mesh.faces;
    std::vector<bool> face_alive(faces.size(), true);
    std::vector<std::vector<std::int32_t>> vfaces(nv); // incident face ids
    std::vector<std::uint64_t> version(nv, 0);
    std::vector<bool> valive(nv, true);

    for (std::size_t fi = 0; fi < faces.size(); ++fi) {
        const Face& f = faces[fi];
        const Quadric q = plane_quadric(pos[f[0]], pos[f[1]], pos[f[2]]);
        for (int k = 0; k < 3; ++k) {
            quad[f[k]] += q;
            vfaces[f[k]].push_back(static_cast<std::int32_t>(fi));
        }
    }

    auto optimal_point = [&](std::int32_t a, std::int32_t b, const Quadric& q) -> Vec3 {
        Eigen::Matrix3d A = q.topLeftCorner<3, 3>();
        const Vec3 rhs = -q.topRightCorner<3, 1>();
        const Vec3 mid = 0.5 * (pos[a] + pos[b]);
        Eigen::FullPivLU<Eigen::Matrix3d> lu(A);
        lu.setThreshold(1e-3);
        if (lu.isInvertible()) {
            const Vec3 x = lu.solve(rhs);
            // On near-flat or near-cylindrical patches the system is badly
            // conditioned and the minimizer can fly far along a weakly
            // constrained direction; keep it only if it stays near the edge.
            if (x.allFinite() && (x - mid).norm() <= 3.0 * (pos[a] - pos[b]).norm()) return x;
        }
        // fall back to the best of endpoints and midpoint
        Vec3 best = mid;
        double best_e = quadric_error(q, mid);
        for (const Vec3& cand : {pos[a], pos[b]}) {
            const double e = quadric_error(q, cand);
            if (e < best_e) {
                best_e = e;
                best = cand;
            }
        }
        return best;
    };

    std::priority_queue<Candidate, std::vector<Candidate>, std::greater<Candidate>> heap;
    auto push_edge = [&](std::int32_t a, std::int32_t b) {
        if (a > b) std::swap(a, b);
        const Quadric q = quad[a] + quad[b];
        const Vec3 p = optimal_point(a, b, q);
        heap.push({quadric_error(q, p), a, b, p, version[a] + version[b]});
    };

    {
        std::set<std::pair<std::int32_t, std::int32_t>> edges;
        for (const Face& f : faces)
            for (int k = 0; k < 3; ++k) {
                std::int32_t a = f[k], b = f[(k + 1) % 3];
                if (a > b) std::swap(a, b);
                edges.insert({a, b});
            }
        for (auto [a, b] : edges) push_edge(a, b);
    }

    // Collapse would flip orientation if any surviving face normal reverses.
    auto collapse_ok = [&](std::int32_t keep, std::int32_t drop, const Vec3& p) {
        for (std::int32_t v : {keep, drop}) {
            for (std::int32_t fi : vfaces[v]) {
                if (!face_alive[fi]) continue;
                Face f = faces[fi];
                bool has_keep = false, has_drop = false;
                for (int k = 0; k < 3; ++k) {
                    has_keep |= f[k] == keep;
                    has_drop |= f[k] == drop;
                }
                if (has_keep && has_drop) continue; // face disappears
                Vec3 before[3], after[3];
                for (int k = 0; k < 3; ++k) {
                    before[k] = pos[f[k]];
                    after[k] = (f[k] == keep || f[k] == drop) ? p : pos[f[k]];
                }
                const Vec3 n0 = (before[1] - before[0]).cross(before[2] - before[0]);
                const Vec3 n1 = (after[1] - after[0]).cross(after[2] - after[0]);
                if (n1.norm() <= 1e-20) return false;
                if (n0.dot(n1) < 0.0) return false;
                for (int k = 0; k < 3; ++k)
                    if ((after[k] - after[(k + 1) % 3]).norm() > max_edge) return false;
            }
        }
        return true;
    };

    std::size_t alive_vertices = mesh.vertex_count();
    while (alive_vertices > target_vertex_count && !heap.empty()) {
        Candidate c = heap.top();
        heap.pop();
        if (!valive[c.a] || !valive[c.b]) continue;
        if (c.stamp != version[c.a] + version[c.b]) continue; // stale entry
        if (!collapse_ok(c.a, c.b, c.pos)) {
            // re-insert with a growing penalty; once the penalty saturates the
            // edge is dropped for good (costs can be marginally negative from
            // rounding, so grow from a floor of zero)
            if (std::isfinite(c.cost) && c.cost < 1e9)
                heap.push({std::max(c.cost, 0.0) * 2.0 + 1e-9, c.a, c.b, c.pos, c.stamp});
            continue;
        }

        const std::int32_t keep = c.a, drop = c.b;
        pos[keep] = c.pos;
        quad[keep] += quad[drop];
        valive[drop] = false;
        --alive_vertices;
        ++version[keep];
        ++version[drop];

        // retire faces containing both, remap faces containing drop
        for (std::int32_t fi : vfaces[drop]) {
            if (!face_alive[fi]) continue;
            Face& f = faces[fi];
            bool has_keep = false;
            for (int k = 0; k < 3; ++k) has_keep |= f[k] == keep;
            if (has_keep) {
                face_alive[fi] = false;
            } else {
                for (int k = 0; k < 3; ++k)
                    if (f[k] == drop) f[k] = keep;
                vfaces[keep].push_back(fi);
            }
        }
        vfaces[drop].clear();

        // refresh candidate edges around keep
        std::set<std::int32_t> ring;
        for (std::int32_t fi : vfaces[keep]) {
            if (!face_alive[fi]) continue;
            for (int k = 0; k < 3; ++k)
                if (faces[fi][k] != keep) ring.insert(faces[fi][k]);
        }
        for (std::int32_t nb : ring)
            if (valive[nb]) push_edge(keep, nb);
    }

    // compact
    TriMesh out;
    std::vector<std::int32_t> remap(nv, -1);
    for (std::int32_t v = 0; v < nv; ++v) {
        if (valive[v]) {
            remap[v] = static_cast<std::int32_t>(out.vertices.size());
            out.vertices.push_back(pos[v]);
        }
    }
    for (std::size_t fi = 0; fi < faces.size(); ++fi) {
        if (!face_alive[fi]) continue;
        const Face& f = faces[fi];
        if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) continue;
        out.faces.push_back({remap[f[0]], remap[f[1]], remap[f[2]]});
    }
    out.validate();
    return out;
}

} // namespace femur
