#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "femur/clinical.hpp"
#include "femur/cpd.hpp"
#include "femur/ssm.hpp"
#include "femur/synthetic.hpp"

namespace femur {

enum class ExperimentKind { RingDistance, LandmarkCount, Displacement, SkinSimulated, SkinReal };

std::string to_string(ExperimentKind kind);
ExperimentKind experiment_kind_from_string(const std::string& s);

struct ExperimentSpec {
    ExperimentKind kind = ExperimentKind::LandmarkCount;
    std::vector<double> grid;   // ring fractions, landmark counts, or displacements (mm)
    int n_landmarks = 5;        // used by the displacement experiment
    int iterations = 10;        // repeats per (shape, setting)
    double noise_sigma = 1.0;   // posterior observation noise, mm
    std::uint64_t seed = 0;
    std::map<std::string, double> skin_offsets; // simulated-skin mode, mm

    void validate() const;
    static std::vector<double> default_grid(ExperimentKind kind);
    static std::map<std::string, double> default_skin_offsets(); // 43 / 14 / 12 mm
};

struct TrialResult {
    std::string shape_id;
    double setting = 0.0;
    int iteration = 0;
    int landmark_count = 0;
    double rmse = 0.0;           // proximal reconstruction RMSE, mm
    double axis_deviation = 0.0; // degrees vs ground truth (NaN when no truth)
    bool converged = true;       // CPD fit convergence
    std::uint64_t seed = 0;      // derived trial seed
};

struct SkippedTrial {
    std::string shape_id;
    double setting = 0.0;
    int iteration = 0;
    std::string reason;
};

struct ExperimentReport {
    ExperimentKind kind;
    std::vector<TrialResult> trials;
    std::vector<SkippedTrial> skipped;
    std::uint64_t seed = 0;
};

struct AggregateRow {
    double setting = 0.0;
    bool by_magnitude = false; // aggregate over |setting| (signed displacement grids)
    int n_trials = 0;
    double rmse_median = 0.0, rmse_iqr = 0.0, rmse_mean = 0.0, rmse_std = 0.0;
    double dev_median = 0.0, dev_iqr = 0.0, dev_mean = 0.0, dev_std = 0.0;
    bool all_converged = true;
};

std::vector<AggregateRow> aggregate_report(const ExperimentReport& report);

enum class ReportFormat { CSV, JSON };

// One row per trial plus per-setting aggregate rows; column order documented
// in the README. CSV and JSON carry identical numbers.
void emit_report(const ExperimentReport& report, const std::filesystem::path& path,
                 ReportFormat format);

// ---------------------------------------------------------------------------

enum class PickRule { Ring, Count };

struct ReconstructOptions {
    PickRule rule = PickRule::Count;
    // When given, the input mesh is rigidly pre-aligned into the model frame
    // through the shared landmark names and the prediction is mapped back.
    std::optional<LandmarkSet> input_landmarks;
    double ring_lo_frac = 0.1, ring_hi_frac = 0.2; // fractions of the length indicator
    int n_landmarks = 5;
    double displacement = 0.0;  // |d| applied to each target along a random direction
    double noise_sigma = 1.0;
    CpdParams cpd;
    std::uint64_t seed = 0;
};

struct Reconstruction {
    TriMesh predicted;
    DeformationField field;
    double fitting_rmse = 0.0;
    bool cpd_converged = true;
};

// The full pipeline for one test mesh: CPD-fit the reference, clip, pick
// landmarks on the fitted distal part, pair with the nearest distal test
// vertices, condition, take the posterior mean. Landmarks never come from the
// test mesh's proximal part.
Reconstruction reconstruct(const ShapeModel& model, const TriMesh& reference,
                           const TriMesh& test_mesh, const ReconstructOptions& options);

// ---------------------------------------------------------------------------

// Caches the per-test-shape CPD fit so the landmark studies reuse it across
// settings and iterations. Trials derive independent RNG streams from
// (seed, shape, setting, iteration) and are reproducible in any order.
class ExperimentEngine {
public:
    ExperimentEngine(ShapeModel model, TriMesh reference, CpdParams cpd_params = {});

    void add_test_shape(std::string id, TriMesh mesh, LandmarkSet landmarks,
                        std::optional<MechanicalAxis> ground_truth_axis = std::nullopt,
                        std::optional<TriMesh> skin_mesh = std::nullopt);

    ExperimentReport run(const ExperimentSpec& spec);

    // Prior-mean baseline RMSE per test shape (same scoring as trials).
    const std::map<std::string, double>& baseline_rmse() const { return baseline_rmse_; }

    const ShapeModel& model() const { return model_; }

private:
    struct PreparedShape {
        std::string id;
        TriMesh mesh;
        LandmarkSet landmarks;
        std::optional<MechanicalAxis> gt_axis;
        std::optional<TriMesh> skin;
        Correspondence fit;
        std::vector<std::int32_t> fitted_distal;  // indices on the fitted mesh
        std::vector<std::int32_t> test_distal;    // indices on the test mesh
        double indicator = 0.0;                   // fitted fovea-to-notch distance
        bool prepared = false;
    };

    PreparedShape& prepare(std::size_t i);
    LandmarkSet model_landmarks() const; // landmark positions on the mean shape
    struct TrialScore {
        double rmse, deviation;
        bool has_deviation;
    };
    TrialScore score(const PreparedShape& shape, const TriMesh& predicted, std::uint64_t hip_seed);
    // Builds the deformation field for one bony/skin landmark trio trial.
    std::vector<std::pair<std::int32_t, Vec3>> named_landmark_pairs(const PreparedShape& shape);

    ShapeModel model_;
    TriMesh reference_;
    CpdParams cpd_params_;
    std::vector<PreparedShape> shapes_;
    std::map<std::string, double> baseline_rmse_;
};

// Displace each named landmark outward along the normal of its nearest mesh
// vertex. Missing landmark names raise ValidationError.
LandmarkSet simulate_skin_landmarks(const TriMesh& mesh, const LandmarkSet& landmarks,
                                    const std::map<std::string, double>& offsets);

} // namespace femur
