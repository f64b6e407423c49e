#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "femur/alignment.hpp"
#include "femur/experiments.hpp"
#include "helpers.hpp"

using namespace femur;
using namespace testutil;
namespace fs = std::filesystem;

namespace {

// type-7 quantile (linear interpolation), independent of the library's
double oracle_quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double h = q * (static_cast<double>(v.size()) - 1.0);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct Fixture {
    ShapeModel model;
    TriMesh reference;
    std::vector<SyntheticShape> tests;
};

// small shared model + posed test shapes; built once
const Fixture& fixture() {
    static const Fixture fx = [] {
        Fixture f;
        SyntheticCohortDistribution dist;
        dist.rings = 24;
        dist.segments = 16;
        dist.random_pose = false;
        const auto train = generate_synthetic_cohort(6, dist, 1001);
        std::vector<TriMesh> meshes;
        std::vector<LandmarkSet> lms;
        for (const auto& s : train) {
            meshes.push_back(s.mesh);
            lms.push_back(s.landmarks);
        }
        const AlignedCohort aligned = align_cohort(meshes, lms);
        f.model = build_ssm(aligned.meshes);
        f.reference = TriMesh::from_flat(f.model.mean, f.model.faces);
        for (const auto& [name, p] : aligned.landmarks[0].entries())
            f.model.landmark_vertices.emplace_back(name, nearest_vertex(f.reference, p));

        SyntheticCohortDistribution test_dist = dist;
        test_dist.random_pose = true;
        f.tests = generate_synthetic_cohort(2, test_dist, 2002);
        return f;
    }();
    return fx;
}

ExperimentEngine make_engine() {
    const Fixture& f = fixture();
    CpdParams cpd;
    cpd.max_iterations = 80;
    ExperimentEngine engine(f.model, f.reference, cpd);
    for (std::size_t i = 0; i < f.tests.size(); ++i)
        engine.add_test_shape("shape" + std::to_string(i), f.tests[i].mesh,
                              f.tests[i].landmarks, f.tests[i].axis);
    return engine;
}

fs::path temp_dir() {
    const fs::path d = fs::temp_directory_path() / "femur_exp_tests";
    fs::create_directories(d);
    return d;
}

} // namespace

TEST_CASE("kind names round trip") {
    for (ExperimentKind k :
         {ExperimentKind::RingDistance, ExperimentKind::LandmarkCount, ExperimentKind::Displacement,
          ExperimentKind::SkinSimulated, ExperimentKind::SkinReal})
        CHECK(experiment_kind_from_string(to_string(k)) == k);
    CHECK_THROWS_AS(experiment_kind_from_string("nope"), ArgumentError);
}

TEST_CASE("spec validation and defaults") {
    ExperimentSpec spec;
    spec.grid = ExperimentSpec::default_grid(spec.kind);
    CHECK_NOTHROW(spec.validate());

    SUBCASE("bad specs raise") {
        spec.grid.clear();
        CHECK_THROWS_AS(spec.validate(), ArgumentError);
        spec.grid = {5};
        spec.iterations = 0;
        CHECK_THROWS_AS(spec.validate(), ArgumentError);
        spec.iterations = 1;
        spec.noise_sigma = 0.0;
        CHECK_THROWS_AS(spec.validate(), ArgumentError);
        spec.noise_sigma = 1.0;
        spec.grid = {5.5};
        CHECK_THROWS_AS(spec.validate(), ArgumentError); // counts must be integers
        spec.kind = ExperimentKind::RingDistance;
        spec.grid = {1.5};
        CHECK_THROWS_AS(spec.validate(), ArgumentError);
    }
    SUBCASE("default grids") {
        CHECK(ExperimentSpec::default_grid(ExperimentKind::RingDistance) ==
              std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8});
        CHECK(ExperimentSpec::default_grid(ExperimentKind::LandmarkCount) ==
              std::vector<double>{5, 55, 105, 155, 205});
        CHECK(ExperimentSpec::default_grid(ExperimentKind::Displacement) ==
              std::vector<double>{-5, -3, -1, 1, 3, 5});
        CHECK(ExperimentSpec::default_grid(ExperimentKind::SkinSimulated) ==
              std::vector<double>{0, 1});
        const auto offsets = ExperimentSpec::default_skin_offsets();
        CHECK(offsets.at("greater_trochanter") == 43.0);
        CHECK(offsets.at("medial_epicondyle") == 14.0);
        CHECK(offsets.at("lateral_epicondyle") == 12.0);
    }
}

TEST_CASE("simulate_skin_landmarks") {
    const TriMesh sphere = uv_sphere(20.0, 16, 24);
    LandmarkSet lms;
    lms.set("greater_trochanter", sphere.vertices[5]);
    lms.set("medial_epicondyle", sphere.vertices[100]);
    lms.set("lateral_epicondyle", sphere.vertices[200]);

    SUBCASE("offsets push outward along the surface normal") {
        const auto offsets = ExperimentSpec::default_skin_offsets();
        const LandmarkSet skin = simulate_skin_landmarks(sphere, lms, offsets);
        for (const auto& [name, off] : offsets) {
            const Vec3 delta = skin.at(name) - lms.at(name);
            // displaced by exactly the offset, along the (near-radial) normal
            CHECK(delta.norm() == doctest::Approx(off).epsilon(1e-12));
            CHECK(delta.normalized().dot(lms.at(name).normalized()) > 0.99);
        }
    }
    SUBCASE("zero offsets change nothing") {
        const LandmarkSet same = simulate_skin_landmarks(
            sphere, lms,
            {{"greater_trochanter", 0.0}, {"medial_epicondyle", 0.0}, {"lateral_epicondyle", 0.0}});
        for (const auto& [name, p] : lms.entries()) CHECK((same.at(name) - p).norm() == 0.0);
    }
    SUBCASE("missing names raise") {
        CHECK_THROWS_AS(simulate_skin_landmarks(sphere, lms, {{"unknown_point", 3.0}}),
                        ValidationError);
    }
}

TEST_CASE("aggregate_report matches a brute-force recomputation") {
    ExperimentReport report;
    report.kind = ExperimentKind::Displacement;
    Rng rng(314);
    for (double setting : {-3.0, -1.0, 1.0, 3.0})
        for (int iter = 0; iter < 7; ++iter) {
            TrialResult t;
            t.shape_id = "s";
            t.setting = setting;
            t.iteration = iter;
            t.rmse = rng.uniform(1.0, 9.0);
            t.axis_deviation = rng.uniform(0.0, 4.0);
            t.converged = true;
            report.trials.push_back(t);
        }
    report.trials[3].axis_deviation = std::numeric_limits<double>::quiet_NaN();

    const auto rows = aggregate_report(report);
    REQUIRE(rows.size() == 4 + 2); // per-setting plus |1| and |3|
    for (const AggregateRow& row : rows) {
        std::vector<double> rmse, dev;
        for (const TrialResult& t : report.trials) {
            const bool in = row.by_magnitude ? std::abs(t.setting) == row.setting
                                             : t.setting == row.setting;
            if (!in) continue;
            rmse.push_back(t.rmse);
            if (std::isfinite(t.axis_deviation)) dev.push_back(t.axis_deviation);
        }
        CHECK(row.n_trials == static_cast<int>(rmse.size()));
        CHECK(row.rmse_median == doctest::Approx(oracle_quantile(rmse, 0.5)).epsilon(1e-12));
        CHECK(row.rmse_iqr == doctest::Approx(oracle_quantile(rmse, 0.75) -
                                              oracle_quantile(rmse, 0.25))
                                  .epsilon(1e-12));
        const double mean =
            std::accumulate(rmse.begin(), rmse.end(), 0.0) / static_cast<double>(rmse.size());
        CHECK(row.rmse_mean == doctest::Approx(mean).epsilon(1e-12));
        double s2 = 0.0;
        for (double x : rmse) s2 += (x - mean) * (x - mean);
        CHECK(row.rmse_std ==
              doctest::Approx(std::sqrt(s2 / static_cast<double>(rmse.size()))).epsilon(1e-12));
        CHECK(row.dev_median == doctest::Approx(oracle_quantile(dev, 0.5)).epsilon(1e-12));
    }
    // magnitude rows only appear for signed grids
    ExperimentReport unsigned_rep = report;
    for (TrialResult& t : unsigned_rep.trials) t.setting = std::abs(t.setting);
    for (const AggregateRow& row : aggregate_report(unsigned_rep)) CHECK_FALSE(row.by_magnitude);
}

TEST_CASE("emit_report") {
    ExperimentReport report;
    report.kind = ExperimentKind::LandmarkCount;
    report.seed = 42;
    TrialResult t;
    t.shape_id = "alpha";
    t.setting = 55;
    t.iteration = 0;
    t.landmark_count = 55;
    t.rmse = 2.25;
    t.axis_deviation = 0.5;
    t.converged = true;
    t.seed = 99;
    report.trials.push_back(t);

    SUBCASE("one trial produces one data row and one aggregate row") {
        const fs::path p = temp_dir() / "one.csv";
        emit_report(report, p, ReportFormat::CSV);
        std::ifstream in(p);
        std::string header, data, agg, extra;
        REQUIRE(std::getline(in, header));
        REQUIRE(std::getline(in, data));
        REQUIRE(std::getline(in, agg));
        CHECK_FALSE(std::getline(in, extra));
        CHECK(header ==
              "kind,setting,shape_id,iteration,n_landmarks,rmse_mm,axis_deviation_deg,converged,"
              "seed");
        CHECK(data == "landmark_count,55,alpha,0,55,2.25,0.5,true,99");
        CHECK(agg == "landmark_count,55,aggregate,1,55,2.25,0.5,true,42");
    }
    SUBCASE("CSV and JSON carry identical numbers") {
        report.trials[0].rmse = 2.3456789012345678;
        const fs::path pc = temp_dir() / "pair.csv";
        const fs::path pj = temp_dir() / "pair.json";
        emit_report(report, pc, ReportFormat::CSV);
        emit_report(report, pj, ReportFormat::JSON);
        std::ifstream jc(pj);
        const auto j = nlohmann::json::parse(jc);
        CHECK(j["kind"] == "landmark_count");
        CHECK(j["trials"].size() == 1);
        CHECK(j["aggregates"].size() == 1);
        const double json_rmse = j["trials"][0]["rmse_mm"].get<double>();
        CHECK(json_rmse == report.trials[0].rmse);

        std::ifstream cc(pc);
        std::string line;
        std::getline(cc, line); // header
        std::getline(cc, line); // data row
        std::stringstream row(line);
        std::string cell;
        for (int i = 0; i <= 5; ++i) std::getline(row, cell, ',');
        CHECK(std::stod(cell) == report.trials[0].rmse);
    }
    SUBCASE("NaN deviation becomes null in JSON") {
        report.trials[0].axis_deviation = std::numeric_limits<double>::quiet_NaN();
        const fs::path pj = temp_dir() / "nan.json";
        emit_report(report, pj, ReportFormat::JSON);
        std::ifstream jc(pj);
        const auto j = nlohmann::json::parse(jc);
        CHECK(j["trials"][0]["axis_deviation_deg"].is_null());
    }
    SUBCASE("empty report is rejected") {
        CHECK_THROWS_AS(emit_report(ExperimentReport{}, temp_dir() / "x.csv", ReportFormat::CSV),
                        ArgumentError);
    }
}

TEST_CASE("experiment engine" * doctest::timeout(600)) {
    SUBCASE("independent engines produce identical reports") {
        ExperimentSpec spec;
        spec.kind = ExperimentKind::LandmarkCount;
        spec.grid = {5, 8};
        spec.iterations = 2;
        spec.seed = 7;
        ExperimentEngine a = make_engine();
        ExperimentEngine b = make_engine();
        const ExperimentReport ra = a.run(spec);
        const ExperimentReport rb = b.run(spec);
        REQUIRE(ra.trials.size() == rb.trials.size());
        for (const auto& s : ra.skipped)
            MESSAGE("skipped " << s.shape_id << " setting " << s.setting << " iter " << s.iteration
                               << ": " << s.reason);
        REQUIRE(ra.trials.size() == 2 * 2 * 2);
        for (std::size_t i = 0; i < ra.trials.size(); ++i) {
            CHECK(ra.trials[i].rmse == rb.trials[i].rmse);
            CHECK(ra.trials[i].seed == rb.trials[i].seed);
            CHECK(ra.trials[i].landmark_count == static_cast<int>(ra.trials[i].setting));
        }
        // trial seeds are unique across the report
        std::vector<std::uint64_t> seeds;
        for (const auto& tr : ra.trials) seeds.push_back(tr.seed);
        std::sort(seeds.begin(), seeds.end());
        CHECK(std::adjacent_find(seeds.begin(), seeds.end()) == seeds.end());
        // the baseline is populated and every trial beats or matches sanity
        CHECK(a.baseline_rmse().size() == 2);
        for (const auto& [id, base] : a.baseline_rmse()) CHECK(base > 0.0);
    }
    SUBCASE("zero displacement is independent of its grid position") {
        ExperimentEngine engine = make_engine();
        ExperimentSpec spec;
        spec.kind = ExperimentKind::Displacement;
        spec.n_landmarks = 5;
        spec.iterations = 2;
        spec.seed = 11;
        spec.grid = {0.0, 3.0};
        const ExperimentReport first = engine.run(spec);
        spec.grid = {3.0, 0.0};
        const ExperimentReport second = engine.run(spec);
        auto zeros = [](const ExperimentReport& r) {
            std::vector<double> v;
            for (const auto& t : r.trials)
                if (t.setting == 0.0) v.push_back(t.rmse);
            return v;
        };
        const auto za = zeros(first), zb = zeros(second);
        REQUIRE(za.size() == 4);
        REQUIRE(za.size() == zb.size());
        for (std::size_t i = 0; i < za.size(); ++i) CHECK(za[i] == zb[i]);
        // and a positive displacement changes the result
        bool any_diff = false;
        for (const auto& t : first.trials)
            if (t.setting == 3.0 && std::abs(t.rmse - za[0]) > 0.0) any_diff = true;
        CHECK(any_diff);
    }
    SUBCASE("all-zero skin offsets reproduce the bony baseline bit-exactly") {
        ExperimentEngine engine = make_engine();
        ExperimentSpec spec;
        spec.kind = ExperimentKind::SkinSimulated;
        spec.grid = {0, 1};
        spec.iterations = 1;
        spec.seed = 23;
        spec.skin_offsets = {{"greater_trochanter", 0.0},
                             {"medial_epicondyle", 0.0},
                             {"lateral_epicondyle", 0.0}};
        const ExperimentReport r = engine.run(spec);
        REQUIRE(r.trials.size() == 4); // 2 shapes x 2 settings
        std::map<std::string, std::map<double, double>> rmse;
        for (const auto& t : r.trials) rmse[t.shape_id][t.setting] = t.rmse;
        for (const auto& [id, by_setting] : rmse) CHECK(by_setting.at(0.0) == by_setting.at(1.0));
    }
    SUBCASE("nonzero skin offsets move the result") {
        ExperimentEngine engine = make_engine();
        ExperimentSpec spec;
        spec.kind = ExperimentKind::SkinSimulated;
        spec.grid = {0, 1};
        spec.iterations = 1;
        spec.seed = 23;
        const ExperimentReport r = engine.run(spec);
        std::map<std::string, std::map<double, double>> rmse;
        for (const auto& t : r.trials) rmse[t.shape_id][t.setting] = t.rmse;
        for (const auto& [id, by_setting] : rmse)
            CHECK(by_setting.at(0.0) != by_setting.at(1.0));
    }
    SUBCASE("impossible settings are skipped, not fatal") {
        ExperimentEngine engine = make_engine();
        ExperimentSpec spec;
        spec.kind = ExperimentKind::LandmarkCount;
        spec.grid = {1000000};
        spec.iterations = 1;
        const ExperimentReport r = engine.run(spec);
        CHECK(r.trials.empty());
        CHECK(r.skipped.size() == 2);
        for (const auto& s : r.skipped) CHECK_FALSE(s.reason.empty());
        const fs::path pj = temp_dir() / "skipped.json";
        emit_report(r, pj, ReportFormat::JSON);
        std::ifstream jc(pj);
        const auto j = nlohmann::json::parse(jc);
        CHECK(j["skipped"].size() == 2);
    }
    SUBCASE("ring experiment runs with three landmarks") {
        ExperimentEngine engine = make_engine();
        ExperimentSpec spec;
        spec.kind = ExperimentKind::RingDistance;
        spec.grid = {0.2};
        spec.iterations = 1;
        const ExperimentReport r = engine.run(spec);
        CHECK(r.trials.size() + r.skipped.size() == 2);
        for (const auto& t : r.trials) {
            CHECK(t.landmark_count == 3);
            CHECK(t.rmse > 0.0);
            CHECK(std::isfinite(t.axis_deviation));
        }
    }
}

TEST_CASE("reconstruct pipeline on a posed input" * doctest::timeout(600)) {
    const Fixture& f = fixture();
    const SyntheticShape& test = f.tests[0];

    ReconstructOptions opt;
    opt.rule = PickRule::Count;
    opt.n_landmarks = 25;
    opt.input_landmarks = test.landmarks;
    opt.cpd.max_iterations = 80;
    const Reconstruction rec = reconstruct(f.model, f.reference, test.mesh, opt);

    CHECK(rec.predicted.vertex_count() == f.model.vertex_count);
    CHECK(rec.field.observations.size() == 25);
    CHECK(rec.fitting_rmse > 0.0);

    // the prediction lands near the test surface in the input frame
    const PointIndex idx(test.mesh.vertices);
    double s2 = 0.0;
    for (const Vec3& v : rec.predicted.vertices) {
        const double d = idx.nearest_distance(v);
        s2 += d * d;
    }
    const double rmse = std::sqrt(s2 / static_cast<double>(rec.predicted.vertex_count()));
    CHECK(rmse < 20.0);

    SUBCASE("asking for more landmarks than the distal part holds raises") {
        ReconstructOptions bad = opt;
        bad.n_landmarks = 1000000;
        CHECK_THROWS_AS(reconstruct(f.model, f.reference, test.mesh, bad), EmptyRegionError);
    }
}
