#include "femur/synthetic.hpp"

#include <Eigen/Geometry>
#include <cmath>

namespace femur {

namespace {
constexpr double kPi = 3.14159265358979323846264338327950288;

double smoothstep(double edge0, double edge1, double x) {
    const double t = std::clamp((x - edge0) / (edge1 - edge0), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

double wrap_angle(double a) {
    while (a > kPi) a -= 2.0 * kPi;
    while (a < -kPi) a += 2.0 * kPi;
    return a;
}

struct AngularBump {
    double s_center, s_sigma;   // along the centerline (mm)
    double theta_center, theta_sigma; // radians
    double amplitude;           // mm, additive
    double eval(double s, double theta) const {
        const double ds = (s - s_center) / s_sigma;
        const double dt = wrap_angle(theta - theta_center) / theta_sigma;
        return amplitude * std::exp(-ds * ds - dt * dt);
    }
};

} // namespace

void SyntheticFemurParams::validate() const {
    if (!(length > 0.0 && head_radius > 0.0 && shaft_radius > 0.0 && condyle_width > 0.0 &&
          anteversion > 0.0))
        throw ArgumentError("synthetic femur parameters must be positive");
    if (!(neck_angle > 90.0 && neck_angle < 160.0))
        throw ArgumentError("neck angle must lie in (90, 160) degrees");
}

SyntheticShape generate_synthetic_femur(const SyntheticFemurParams& params, int rings,
                                        int segments) {
    params.validate();
    if (rings < 16 || segments < 8) throw ArgumentError("synthetic femur resolution too coarse");

    const double R = params.head_radius;
    const double shaft_r = params.shaft_radius;
    const double cond_hw = 0.5 * params.condyle_width;
    const double shaft_len = 0.80 * params.length;

    // neck direction: phi from the shaft (+z), anteversion tilts it anteriorly (-y)
    const double phi = (180.0 - params.neck_angle) * kPi / 180.0;
    const double av = params.anteversion * kPi / 180.0;
    const Vec3 neck_dir(std::sin(phi) * std::cos(av), -std::sin(phi) * std::sin(av), std::cos(phi));

    // arclength stations: straight shaft, rounded corner at the neck base,
    // straight neck segment ending at the head pole
    const double neck_len = 3.0 * R; // neck base -> pole; head center R before the pole
    const double s_total = shaft_len + neck_len;
    const double s_neck_base = shaft_len;
    const double corner_half = 0.6 * R;
    const double s_head_center = s_total - R;

    auto tangent_at = [&](double s) -> Vec3 {
        if (s <= s_neck_base - corner_half) return Vec3::UnitZ();
        if (s >= s_neck_base + corner_half) return neck_dir;
        const double t = smoothstep(s_neck_base - corner_half, s_neck_base + corner_half, s);
        // slerp between the two unit tangents
        const double ang = std::acos(std::clamp(Vec3::UnitZ().dot(neck_dir), -1.0, 1.0));
        const Vec3 axis = Vec3::UnitZ().cross(neck_dir).normalized();
        return Eigen::AngleAxisd(t * ang, axis) * Vec3::UnitZ();
    };

    // integrate the centerline and parallel-transport a frame along it
    const int nr = rings;
    std::vector<double> station(nr);
    std::vector<Vec3> center(nr), e1(nr), e2(nr), tan(nr);
    const double ds = s_total / static_cast<double>(nr + 1);
    {
        // fine integration so the head-region centerline is numerically straight
        const int sub = 8;
        Vec3 pos = Vec3::Zero();
        Vec3 f1 = Vec3::UnitX(), f2 = Vec3::UnitY(), prev_t = Vec3::UnitZ();
        double s = 0.0;
        int ring = 0;
        const double h = ds / sub;
        for (int step = 0; ring < nr; ++step) {
            const Vec3 t_here = tangent_at(s);
            // transport the frame by the rotation aligning prev tangent to this one
            const Vec3 cr = prev_t.cross(t_here);
            const double sn = cr.norm(), cs = std::clamp(prev_t.dot(t_here), -1.0, 1.0);
            if (sn > 1e-15) {
                const Eigen::AngleAxisd rot(std::atan2(sn, cs), cr / sn);
                f1 = rot * f1;
                f2 = rot * f2;
            }
            prev_t = t_here;
            if (step % sub == 0 && step > 0) {
                station[ring] = s;
                center[ring] = pos;
                e1[ring] = f1;
                e2[ring] = f2;
                tan[ring] = t_here;
                ++ring;
                if (ring == nr) break;
            }
            pos += h * t_here;
            s += h;
        }
    }

    // the neck segment is straight, so the head center sits on it exactly
    const Vec3 pole = center[nr - 1] + (s_total - station[nr - 1]) * neck_dir;
    const Vec3 head_center = pole - R * neck_dir;

    // base radius profile
    const double cap_len = 0.55 * cond_hw;
    const double cond_r = 0.78 * cond_hw;
    auto base_radius = [&](double s) -> double {
        if (s >= s_head_center - R) {
            const double a = s - s_head_center;
            return std::sqrt(std::max(R * R - a * a, 0.0));
        }
        double r;
        if (s < cap_len) {
            r = cond_r * std::sin(0.5 * kPi * s / cap_len);
        } else {
            // condyle bulk tapering into the shaft
            const double t = smoothstep(0.06 * shaft_len, 0.22 * shaft_len, s);
            r = cond_r * (1.0 - t) + shaft_r * t;
        }
        // narrow toward the neck
        const double neck_r = 0.55 * R;
        const double tn = smoothstep(s_neck_base - 1.0 * R, s_neck_base + 0.9 * R, s);
        r = r * (1.0 - tn) + neck_r * tn;
        // blend the neck radius into the head sphere entry
        const double s_entry = s_head_center - R;
        const double tb = smoothstep(s_entry - 0.5 * R, s_entry, s);
        if (tb > 0.0) {
            const double target = std::sqrt(std::max(R * R - (s - s_head_center) * (s - s_head_center), 0.0));
            r = r * (1.0 - tb) + std::min(target, R) * tb;
        }
        return r;
    };

    // angular features; theta = 0 is +x (medial) at the distal end, y is posterior
    const std::vector<AngularBump> bumps = {
        // posterior condyles
        {0.05 * shaft_len, 0.06 * shaft_len, 0.40 * kPi, 0.45, 0.35 * cond_hw},  // medial
        {0.05 * shaft_len, 0.06 * shaft_len, 0.60 * kPi, 0.45, 0.30 * cond_hw},  // lateral
        // epicondylar flare
        {0.07 * shaft_len, 0.05 * shaft_len, 0.0, 0.55, 0.22 * cond_hw},         // medial
        {0.07 * shaft_len, 0.05 * shaft_len, kPi, 0.55, 0.20 * cond_hw},         // lateral
        // greater trochanter (lateral, at the neck base)
        {s_neck_base - 0.1 * R, 1.1 * R, kPi, 0.75, 0.95 * R},
        // lesser trochanter (medial-posterior, below the neck)
        {s_neck_base - 1.9 * R, 0.55 * R, 0.35 * kPi, 0.5, 0.30 * R},
    };

    TriMesh mesh;
    mesh.vertices.reserve(static_cast<std::size_t>(nr) * segments + 2);
    const double s_sphere_entry = s_head_center - R;
    for (int i = 0; i < nr; ++i) {
        const double s = station[i];
        const bool on_head = s >= s_sphere_entry;
        const double rb = base_radius(s);
        for (int j = 0; j < segments; ++j) {
            const double theta = 2.0 * kPi * j / segments;
            double r = rb;
            if (!on_head) {
                // taper bumps to zero before the head entry so the sphere cap
                // stays exact and the surface stays continuous
                const double fade = 1.0 - smoothstep(s_sphere_entry - 0.8 * R, s_sphere_entry, s);
                for (const AngularBump& b : bumps) r += fade * b.eval(s, theta);
            }
            mesh.vertices.push_back(center[i] + r * (std::cos(theta) * e1[i] + std::sin(theta) * e2[i]));
        }
    }
    const auto apex_distal = static_cast<std::int32_t>(mesh.vertices.size());
    mesh.vertices.push_back(Vec3(0.0, 0.0, -0.35 * cap_len));
    const auto apex_proximal = static_cast<std::int32_t>(mesh.vertices.size());
    mesh.vertices.push_back(pole);

    auto ring_vertex = [&](int i, int j) {
        return static_cast<std::int32_t>(i * segments + (j % segments));
    };
    for (int i = 0; i + 1 < nr; ++i) {
        for (int j = 0; j < segments; ++j) {
            const auto a = ring_vertex(i, j), b = ring_vertex(i, j + 1);
            const auto c = ring_vertex(i + 1, j), d = ring_vertex(i + 1, j + 1);
            mesh.faces.push_back({a, b, d});
            mesh.faces.push_back({a, d, c});
        }
    }
    for (int j = 0; j < segments; ++j) {
        mesh.faces.push_back({apex_distal, ring_vertex(0, j + 1), ring_vertex(0, j)});
        mesh.faces.push_back({apex_proximal, ring_vertex(nr - 1, j), ring_vertex(nr - 1, j + 1)});
    }

    // orient outward: positive enclosed volume
    double vol6 = 0.0;
    for (const Face& f : mesh.faces)
        vol6 += mesh.vertices[f[0]].dot(mesh.vertices[f[1]].cross(mesh.vertices[f[2]]));
    if (vol6 < 0.0)
        for (Face& f : mesh.faces) std::swap(f[1], f[2]);

    // landmarks on mesh vertices
    const Vec3 notch = mesh.vertices[apex_distal];
    auto vertex_near = [&](const Vec3& p) { return mesh.vertices[nearest_vertex(mesh, p)]; };
    const Vec3 neck_base = Vec3(0.0, 0.0, s_neck_base);

    LandmarkSet lms;
    lms.set("fovea", mesh.vertices[apex_proximal]);
    lms.set("greater_trochanter",
            vertex_near(neck_base + (shaft_r + 0.95 * R) * Vec3(-1.0, 0.0, 0.0)));
    lms.set("lesser_trochanter",
            vertex_near(Vec3(0.0, 0.0, s_neck_base - 1.9 * R) +
                        (shaft_r + 0.30 * R) * Vec3(std::cos(0.35 * kPi), std::sin(0.35 * kPi), 0.0)));
    lms.set("medial_condyle",
            vertex_near(Vec3(cond_r * std::cos(0.40 * kPi) * 1.3, cond_r * std::sin(0.40 * kPi) * 1.3,
                             0.05 * shaft_len)));
    lms.set("lateral_condyle",
            vertex_near(Vec3(cond_r * std::cos(0.60 * kPi) * 1.3, cond_r * std::sin(0.60 * kPi) * 1.3,
                             0.05 * shaft_len)));
    lms.set("intercondylar_notch", notch);
    lms.set("medial_epicondyle", vertex_near(Vec3(1.3 * cond_r, 0.0, 0.07 * shaft_len)));
    lms.set("lateral_epicondyle", vertex_near(Vec3(-1.3 * cond_r, 0.0, 0.07 * shaft_len)));

    // uniform scale so the fovea-to-notch indicator equals the requested length
    const double indicator = (lms.at("fovea") - notch).norm();
    const double scale = params.length / indicator;
    for (Vec3& v : mesh.vertices) v *= scale;
    for (auto& e : lms.entries()) e.second *= scale;

    SyntheticShape shape;
    shape.mesh = std::move(mesh);
    shape.mesh.validate();
    shape.landmarks = lms;
    shape.hip_center = head_center * scale;
    shape.head_radius = R * scale;
    shape.axis = mechanical_axis(lms.at("intercondylar_notch"), {shape.hip_center, shape.head_radius, 0.0});
    shape.params = params;
    return shape;
}

std::vector<SyntheticShape> generate_synthetic_cohort(std::size_t n,
                                                      const SyntheticCohortDistribution& dist,
                                                      std::uint64_t seed) {
    if (n < 2) throw ArgumentError("generate_synthetic_cohort: need at least 2 shapes");
    dist.mean.validate();
    std::vector<SyntheticShape> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(mix_seed(seed, 0x5f3759df, i));
        SyntheticFemurParams p;
        p.length = rng.normal(dist.mean.length, dist.stddev.length);
        p.head_radius = rng.normal(dist.mean.head_radius, dist.stddev.head_radius);
        p.neck_angle = rng.normal(dist.mean.neck_angle, dist.stddev.neck_angle);
        p.anteversion = rng.normal(dist.mean.anteversion, dist.stddev.anteversion);
        p.shaft_radius = rng.normal(dist.mean.shaft_radius, dist.stddev.shaft_radius);
        p.condyle_width = rng.normal(dist.mean.condyle_width, dist.stddev.condyle_width);
        // keep samples inside the valid parameter domain
        p.length = std::clamp(p.length, 0.5 * dist.mean.length, 1.5 * dist.mean.length);
        p.head_radius = std::clamp(p.head_radius, 0.6 * dist.mean.head_radius, 1.4 * dist.mean.head_radius);
        p.neck_angle = std::clamp(p.neck_angle, 100.0, 150.0);
        p.anteversion = std::clamp(p.anteversion, 2.0, 25.0);
        p.shaft_radius = std::clamp(p.shaft_radius, 0.6 * dist.mean.shaft_radius, 1.4 * dist.mean.shaft_radius);
        p.condyle_width = std::clamp(p.condyle_width, 0.7 * dist.mean.condyle_width, 1.3 * dist.mean.condyle_width);

        SyntheticShape shape = generate_synthetic_femur(p, dist.rings, dist.segments);

        if (dist.random_pose) {
            const Vec3 axis = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
            const double angle = rng.uniform(-0.25, 0.25); // radians, ~14 degrees max
            const Vec3 t(rng.uniform(-30.0, 30.0), rng.uniform(-30.0, 30.0), rng.uniform(-30.0, 30.0));
            const Eigen::Matrix3d rot = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
            for (Vec3& v : shape.mesh.vertices) v = rot * v + t;
            for (auto& e : shape.landmarks.entries()) e.second = rot * e.second + t;
            shape.hip_center = rot * shape.hip_center + t;
            shape.axis = mechanical_axis(shape.landmarks.at("intercondylar_notch"),
                                         {shape.hip_center, shape.head_radius, 0.0});
        }
        out.push_back(std::move(shape));
    }
    return out;
}

} // namespace femur
