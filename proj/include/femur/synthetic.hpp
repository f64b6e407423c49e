#pragma once

#include <cstdint>
#include <vector>

#include "femur/clinical.hpp"
#include "femur/mesh.hpp"

namespace femur {

struct SyntheticFemurParams {
    double length = 410.0;        // fovea-to-notch indicator, mm
    double head_radius = 22.0;    // mm
    double neck_angle = 128.0;    // degrees, in (90, 160)
    double anteversion = 12.0;    // degrees
    double shaft_radius = 14.0;   // mm
    double condyle_width = 80.0;  // mm, medial-lateral extent at the distal end

    void validate() const;
};

// Per-parameter normal distributions for cohort sampling. Defaults track the
// 410 +/- 26 mm indicator spread.
struct SyntheticCohortDistribution {
    SyntheticFemurParams mean;
    SyntheticFemurParams stddev{26.0, 1.8, 4.0, 3.5, 1.2, 5.0};
    int rings = 104;
    int segments = 48;
    bool random_pose = true; // apply a random rigid motion per shape
};

struct SyntheticShape {
    TriMesh mesh;
    LandmarkSet landmarks; // six canonical names plus the two epicondyles
    Vec3 hip_center = Vec3::Zero(); // exact sphere center of the head cap
    double head_radius = 0.0;
    MechanicalAxis axis;   // ground truth, notch -> hip center
    SyntheticFemurParams params;
};

// One watertight femur-like mesh: capsule-capped swept tube with condylar and
// trochanteric bumps and an exactly spherical head. Deterministic in its
// arguments (no RNG inside).
SyntheticShape generate_synthetic_femur(const SyntheticFemurParams& params, int rings = 104,
                                        int segments = 48);

// n >= 2 shapes with parameters drawn from the distribution; deterministic
// per seed and independent of generation order.
std::vector<SyntheticShape> generate_synthetic_cohort(std::size_t n,
                                                      const SyntheticCohortDistribution& dist,
                                                      std::uint64_t seed);

} // namespace femur
