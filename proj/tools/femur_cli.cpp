// Command-line front end: synthetic cohorts, model building, reconstruction,
// the landmark experiments, and model inspection.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "femur/alignment.hpp"
#include "femur/clinical.hpp"
#include "femur/cpd.hpp"
#include "femur/decimate.hpp"
#include "femur/error.hpp"
#include "femur/experiments.hpp"
#include "femur/mesh_io.hpp"
#include "femur/ssm.hpp"
#include "femur/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string shape_name(std::size_t i) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "%03zu", i);
    return buf;
}

std::string fnv1a64_hex(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw femur::IoError("cannot read '" + path.string() + "'");
    std::uint64_t h = 1469598103934665603ULL;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
        if (!in) break;
    }
    char out[20];
    std::snprintf(out, sizeof(out), "0x%016llx", static_cast<unsigned long long>(h));
    return out;
}

ordered_json vec3_json(const femur::Vec3& v) { return ordered_json::array({v.x(), v.y(), v.z()}); }

femur::Vec3 vec3_from_json(const ordered_json& j) {
    if (!j.is_array() || j.size() != 3) throw femur::FormatError("expected a 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

struct CpdCliOptions {
    femur::CpdParams params;
    void attach(CLI::App* cmd) {
        cmd->add_option("--beta", params.beta, "CPD kernel width");
        cmd->add_option("--lambda", params.lambda, "CPD regularization weight");
        cmd->add_option("--outlier-weight", params.outlier_weight, "CPD outlier weight in [0,1)");
        cmd->add_option("--cpd-iterations", params.max_iterations, "CPD iteration cap");
        cmd->add_option("--cpd-tolerance", params.tolerance, "CPD relative objective tolerance");
    }
};

// ---------------------------------------------------------------------------
// synth: write a cohort directory of PLY meshes, landmark JSON files,
// ground_truth.json and manifest.json.

struct SynthConfig {
    fs::path out_dir;
    std::size_t count = 20;
    std::uint64_t seed = 0;
    int rings = 104;
    int segments = 48;
    bool no_random_pose = false;
    bool emit_skin = false;
};

// A smooth soft-tissue envelope: the bone surface pushed outward along its
// vertex normals by a thickness field peaking at the palpable landmarks.
femur::TriMesh make_skin_mesh(const femur::TriMesh& bone, const femur::LandmarkSet& landmarks,
                              const std::map<std::string, double>& offsets) {
    const std::vector<femur::Vec3> normals = femur::vertex_normals(bone);
    femur::TriMesh skin = bone;
    const double base = 5.0;
    const double falloff = 40.0; // mm
    for (std::size_t v = 0; v < bone.vertex_count(); ++v) {
        double t = base;
        for (const auto& [name, off] : offsets) {
            if (!landmarks.contains(name)) continue;
            const double d = (bone.vertices[v] - landmarks.at(name)).norm();
            t += (off - base) * std::exp(-d * d / (2.0 * falloff * falloff));
        }
        skin.vertices[v] = bone.vertices[v] + t * normals[v];
    }
    return skin;
}

int run_synth(const SynthConfig& cfg) {
    if (cfg.count < 2) throw femur::ArgumentError("--count must be at least 2");
    fs::create_directories(cfg.out_dir);

    femur::SyntheticCohortDistribution dist;
    dist.rings = cfg.rings;
    dist.segments = cfg.segments;
    dist.random_pose = !cfg.no_random_pose;
    const auto cohort = femur::generate_synthetic_cohort(cfg.count, dist, cfg.seed);

    const auto skin_offsets = femur::ExperimentSpec::default_skin_offsets();
    ordered_json truth = ordered_json::object();
    std::vector<fs::path> written;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        const auto& s = cohort[i];
        const std::string name = shape_name(i);
        const fs::path mesh_path = cfg.out_dir / (name + ".ply");
        const fs::path lm_path = cfg.out_dir / (name + ".landmarks.json");
        femur::save_mesh(s.mesh, mesh_path);
        femur::save_landmarks(s.landmarks, lm_path);
        written.push_back(mesh_path);
        written.push_back(lm_path);
        if (cfg.emit_skin) {
            const fs::path skin_path = cfg.out_dir / (name + ".skin.ply");
            femur::save_mesh(make_skin_mesh(s.mesh, s.landmarks, skin_offsets), skin_path);
            written.push_back(skin_path);
        }
        truth[name] = {{"hip_center", vec3_json(s.hip_center)},
                       {"head_radius", s.head_radius},
                       {"axis",
                        {{"notch", vec3_json(s.axis.notch_point)},
                         {"hip_center", vec3_json(s.axis.hip_center)},
                         {"direction", vec3_json(s.axis.direction)}}},
                       {"params",
                        {{"length", s.params.length},
                         {"head_radius", s.params.head_radius},
                         {"neck_angle", s.params.neck_angle},
                         {"anteversion", s.params.anteversion},
                         {"shaft_radius", s.params.shaft_radius},
                         {"condyle_width", s.params.condyle_width}}}};
    }
    const fs::path truth_path = cfg.out_dir / "ground_truth.json";
    femur::atomic_write_text(truth_path, truth.dump(2) + "\n");
    written.push_back(truth_path);

    ordered_json manifest;
    manifest["command"] = "synth";
    manifest["seed"] = cfg.seed;
    manifest["count"] = cfg.count;
    manifest["rings"] = cfg.rings;
    manifest["segments"] = cfg.segments;
    manifest["random_pose"] = !cfg.no_random_pose;
    manifest["skin"] = cfg.emit_skin;
    ordered_json files = ordered_json::object();
    for (const fs::path& p : written) files[p.filename().string()] = {{"fnv1a64", fnv1a64_hex(p)}};
    manifest["files"] = files;
    femur::atomic_write_text(cfg.out_dir / "manifest.json", manifest.dump(2) + "\n");

    std::cout << "wrote " << cohort.size() << " shapes to " << cfg.out_dir.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// cohort loading shared by build-ssm and experiment

struct CohortEntry {
    std::string id;
    femur::TriMesh mesh;
    femur::LandmarkSet landmarks;
    std::optional<femur::MechanicalAxis> gt_axis;
    std::optional<femur::TriMesh> skin;
};

std::vector<CohortEntry> load_cohort_dir(const fs::path& dir, bool want_truth, bool want_skin) {
    if (!fs::is_directory(dir))
        throw femur::IoError("'" + dir.string() + "' is not a directory");
    ordered_json truth;
    if (want_truth) {
        const fs::path tp = dir / "ground_truth.json";
        if (fs::exists(tp)) {
            std::ifstream in(tp);
            try {
                truth = ordered_json::parse(in);
            } catch (const nlohmann::json::parse_error& e) {
                throw femur::FormatError("ground_truth.json: " + std::string(e.what()));
            }
        }
    }
    std::vector<fs::path> mesh_paths;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string fn = entry.path().filename().string();
        if (entry.path().extension() == ".ply" && fn.find(".skin.") == std::string::npos)
            mesh_paths.push_back(entry.path());
    }
    std::sort(mesh_paths.begin(), mesh_paths.end());
    if (mesh_paths.empty()) throw femur::IoError("no .ply meshes in '" + dir.string() + "'");

    std::vector<CohortEntry> out;
    for (const fs::path& mp : mesh_paths) {
        CohortEntry e;
        e.id = mp.stem().string();
        e.mesh = femur::load_mesh(mp);
        const fs::path lmp = dir / (e.id + ".landmarks.json");
        if (!fs::exists(lmp))
            throw femur::IoError("missing landmark file '" + lmp.string() + "'");
        e.landmarks = femur::load_landmarks(lmp);
        if (want_truth && truth.contains(e.id)) {
            const auto& ax = truth[e.id]["axis"];
            femur::MechanicalAxis axis;
            axis.notch_point = vec3_from_json(ax["notch"]);
            axis.hip_center = vec3_from_json(ax["hip_center"]);
            axis.direction = vec3_from_json(ax["direction"]).normalized();
            e.gt_axis = axis;
        }
        if (want_skin) {
            const fs::path sp = dir / (e.id + ".skin.ply");
            if (fs::exists(sp)) e.skin = femur::load_mesh(sp);
        }
        out.push_back(std::move(e));
    }
    return out;
}

// ---------------------------------------------------------------------------
// build-ssm

struct BuildConfig {
    fs::path cohort_dir;
    fs::path out_path;
    std::size_t reference_vertices = 1000;
    CpdCliOptions cpd;
};

int run_build(const BuildConfig& cfg) {
    const auto entries = load_cohort_dir(cfg.cohort_dir, false, false);
    if (entries.size() < 2) throw femur::ValidationError("need at least 2 cohort members");

    std::vector<femur::TriMesh> meshes;
    std::vector<femur::LandmarkSet> landmarks;
    for (const auto& e : entries) {
        meshes.push_back(e.mesh);
        landmarks.push_back(e.landmarks);
    }
    const femur::AlignedCohort aligned = femur::align_cohort(meshes, landmarks);
    const int ref_idx = femur::select_unbiased_reference_index(aligned);
    const femur::TriMesh reference =
        femur::decimate(aligned.meshes[static_cast<std::size_t>(ref_idx)], cfg.reference_vertices);
    std::cerr << "reference: member " << entries[static_cast<std::size_t>(ref_idx)].id
              << ", decimated to " << reference.vertex_count() << " vertices\n";

    std::vector<femur::TriMesh> in_correspondence;
    std::vector<femur::Correspondence> fits;
    for (std::size_t i = 0; i < aligned.meshes.size(); ++i) {
        auto fit = femur::cpd_nonrigid(reference, aligned.meshes[i], cfg.cpd.params);
        std::cerr << "fit " << entries[i].id << ": rmse " << fit.fitting_rmse << " mm, "
                  << fit.iterations << " iterations" << (fit.converged ? "" : " (not converged)")
                  << "\n";
        in_correspondence.push_back(fit.deformed);
        fit.deformed = femur::TriMesh{}; // keep only the diagnostics
        fits.push_back(std::move(fit));
    }

    femur::ShapeModel model = femur::build_ssm(in_correspondence);
    // carry the reference landmarks as model vertex indices
    const auto& ref_landmarks = aligned.landmarks[static_cast<std::size_t>(ref_idx)];
    const auto& ref_fit = in_correspondence[static_cast<std::size_t>(ref_idx)];
    for (const auto& [name, pos] : ref_landmarks.entries())
        model.landmark_vertices.emplace_back(name, femur::nearest_vertex(ref_fit, pos));
    model.validate();
    femur::save_model(model, cfg.out_path);

    // per-shape fitting table plus summary statistics
    double mean = 0.0, sd = 0.0;
    for (const auto& f : fits) mean += f.fitting_rmse;
    mean /= static_cast<double>(fits.size());
    for (const auto& f : fits) sd += (f.fitting_rmse - mean) * (f.fitting_rmse - mean);
    sd = std::sqrt(sd / static_cast<double>(fits.size()));
    ordered_json diag;
    diag["command"] = "build-ssm";
    diag["reference_member"] = entries[static_cast<std::size_t>(ref_idx)].id;
    diag["reference_vertices"] = reference.vertex_count();
    diag["cpd"] = {{"beta", cfg.cpd.params.beta},
                   {"lambda", cfg.cpd.params.lambda},
                   {"outlier_weight", cfg.cpd.params.outlier_weight},
                   {"max_iterations", cfg.cpd.params.max_iterations},
                   {"tolerance", cfg.cpd.params.tolerance}};
    ordered_json per_shape = ordered_json::object();
    for (std::size_t i = 0; i < fits.size(); ++i)
        per_shape[entries[i].id] = {{"fitting_rmse_mm", fits[i].fitting_rmse},
                                    {"iterations", fits[i].iterations},
                                    {"converged", fits[i].converged}};
    diag["fits"] = per_shape;
    diag["fitting_rmse_mean_mm"] = mean;
    diag["fitting_rmse_std_mm"] = sd;
    femur::atomic_write_text(cfg.out_path.string() + ".diagnostics.json", diag.dump(2) + "\n");

    std::cout << "model: " << model.vertex_count << " vertices, " << model.mode_count()
              << " modes -> " << cfg.out_path.string() << "\n"
              << "fitting rmse mean " << mean << " mm, std " << sd << " mm\n";
    return 0;
}

// ---------------------------------------------------------------------------
// reconstruct

struct ReconstructConfig {
    fs::path model_path;
    fs::path input_path;
    fs::path out_path;
    fs::path report_path;
    fs::path landmarks_path;
    fs::path truth_mesh_path;
    std::string rule = "count";
    std::vector<std::string> skin_offset_args; // empty = picked-landmark rules
    femur::ReconstructOptions options;
    CpdCliOptions cpd;
    std::uint64_t hip_seed = 0;
};

std::map<std::string, double> parse_skin_offsets(const std::vector<std::string>& args) {
    std::map<std::string, double> offsets;
    for (const std::string& arg : args) {
        if (arg == "default") {
            for (const auto& [k, v] : femur::ExperimentSpec::default_skin_offsets())
                offsets[k] = v;
            continue;
        }
        const auto eq = arg.find('=');
        if (eq == std::string::npos)
            throw femur::ArgumentError("skin offsets expect 'default' or name=millimetres");
        try {
            offsets[arg.substr(0, eq)] = std::stod(arg.substr(eq + 1));
        } catch (const std::exception&) {
            throw femur::ArgumentError("bad skin offset value in '" + arg + "'");
        }
    }
    return offsets;
}

int run_reconstruct(ReconstructConfig cfg) {
    const femur::ShapeModel model = femur::load_model(cfg.model_path);
    const femur::TriMesh reference = femur::TriMesh::from_flat(model.mean, model.faces);
    const femur::TriMesh input = femur::load_mesh(cfg.input_path);
    if (!cfg.landmarks_path.empty())
        cfg.options.input_landmarks = femur::load_landmarks(cfg.landmarks_path);

    femur::Reconstruction rec;
    if (!cfg.skin_offset_args.empty()) {
        // named-landmark mode: condition directly on the palpable trio, no CPD
        if (!cfg.options.input_landmarks)
            throw femur::ArgumentError("skin offsets need --landmarks for the input mesh");
        const auto offsets = parse_skin_offsets(cfg.skin_offset_args);
        femur::LandmarkSet placed = *cfg.options.input_landmarks;
        if (std::any_of(offsets.begin(), offsets.end(),
                        [](const auto& kv) { return kv.second != 0.0; }))
            placed = femur::simulate_skin_landmarks(input, placed, offsets);
        femur::LandmarkSet model_lms;
        for (const auto& [name, idx] : model.landmark_vertices)
            model_lms.set(name, reference.vertices[static_cast<std::size_t>(idx)]);
        const femur::RigidTransform to_model =
            femur::procrustes_from_landmarks(*cfg.options.input_landmarks, model_lms);
        for (const std::string& name : femur::skin_landmark_names())
            rec.field.observations.emplace_back(model.landmark_vertex(name),
                                                to_model.apply(placed.at(name)));
        rec.field.noise_sigma = cfg.options.noise_sigma;
        rec.predicted = to_model.inverse().apply(
            femur::posterior_mean_shape(femur::posterior_model(model, rec.field)));
        rec.cpd_converged = true;
    } else {
        if (cfg.rule == "ring")
            cfg.options.rule = femur::PickRule::Ring;
        else if (cfg.rule == "count")
            cfg.options.rule = femur::PickRule::Count;
        else
            throw femur::ArgumentError("--rule must be 'ring' or 'count'");
        cfg.options.cpd = cfg.cpd.params;
        rec = femur::reconstruct(model, reference, input, cfg.options);
    }
    femur::save_mesh(rec.predicted, cfg.out_path);

    // mechanical axis of the prediction
    const femur::Vec3 pred_fovea =
        rec.predicted.vertices[static_cast<std::size_t>(model.landmark_vertex("fovea"))];
    const femur::Vec3 pred_notch = rec.predicted.vertices[static_cast<std::size_t>(
        model.landmark_vertex("intercondylar_notch"))];
    auto [prox, dist] = femur::clip_proximal(rec.predicted, pred_fovea);
    const femur::VertexRegion head =
        femur::head_surface_region(rec.predicted, prox, pred_fovea);
    const femur::SphereFit hip =
        femur::hip_center(head, std::min<std::size_t>(30, head.size()), cfg.hip_seed);
    const femur::MechanicalAxis axis = femur::mechanical_axis(pred_notch, hip);

    double truth_rmse = -1.0;
    if (!cfg.truth_mesh_path.empty()) {
        const femur::TriMesh truth = femur::load_mesh(cfg.truth_mesh_path);
        if (truth.vertex_count() == rec.predicted.vertex_count()) {
            truth_rmse = femur::surface_rmse(rec.predicted, truth);
        } else {
            const femur::PointIndex idx(truth.vertices);
            double sum2 = 0.0;
            for (std::int32_t v : prox.indices) {
                const double d = idx.nearest_distance(rec.predicted.vertices[v]);
                sum2 += d * d;
            }
            truth_rmse = std::sqrt(sum2 / static_cast<double>(prox.indices.size()));
        }
        std::cout << "rmse vs truth: " << truth_rmse << " mm\n";
    }
    std::cout << "predicted mesh -> " << cfg.out_path.string() << " (fit rmse "
              << rec.fitting_rmse << " mm" << (rec.cpd_converged ? "" : ", fit not converged")
              << ")\n";

    if (!cfg.report_path.empty()) {
        ordered_json rep;
        rep["model"] = cfg.model_path.string();
        rep["input"] = cfg.input_path.string();
        rep["rule"] = cfg.skin_offset_args.empty() ? cfg.rule : "named_landmarks";
        rep["n_landmarks"] = cfg.skin_offset_args.empty()
                                 ? cfg.options.n_landmarks
                                 : static_cast<int>(rec.field.observations.size());
        rep["ring_lo_frac"] = cfg.options.ring_lo_frac;
        rep["ring_hi_frac"] = cfg.options.ring_hi_frac;
        rep["displacement"] = cfg.options.displacement;
        rep["noise_sigma"] = cfg.options.noise_sigma;
        rep["seed"] = cfg.options.seed;
        rep["hip_seed"] = cfg.hip_seed;
        rep["fitting_rmse_mm"] = rec.fitting_rmse;
        rep["cpd_converged"] = rec.cpd_converged;
        rep["mechanical_axis"] = {{"notch", vec3_json(axis.notch_point)},
                                  {"hip_center", vec3_json(axis.hip_center)},
                                  {"direction", vec3_json(axis.direction)},
                                  {"hip_radius_mm", hip.radius},
                                  {"hip_fit_rms_mm", hip.rms_residual}};
        if (truth_rmse >= 0.0) rep["rmse_vs_truth_mm"] = truth_rmse;
        ordered_json obs = ordered_json::array();
        for (const auto& [idx, p] : rec.field.observations)
            obs.push_back({{"vertex", idx}, {"target", vec3_json(p)}});
        rep["observations"] = obs;
        femur::atomic_write_text(cfg.report_path, rep.dump(2) + "\n");
    }
    return 0;
}

// ---------------------------------------------------------------------------
// experiment

struct ExperimentConfig {
    fs::path model_path;
    fs::path tests_dir;
    fs::path out_path;
    fs::path spec_path;
    std::string kind = "landmark_count";
    std::vector<double> grid;
    femur::ExperimentSpec spec;
    std::vector<std::string> skin_offset_args;
    CpdCliOptions cpd;
    bool strict = false;
};

// Spec file: JSON object with kind, grid, n_landmarks, iterations,
// noise_sigma, seed, skin_offsets. Errors name the bad field by JSON pointer.
femur::ExperimentSpec load_experiment_spec(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw femur::IoError("cannot read '" + path.string() + "'");
    ordered_json j;
    try {
        j = ordered_json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw femur::FormatError("spec file: " + std::string(e.what()));
    }
    femur::ExperimentSpec spec;
    auto bad = [](const char* ptr) -> femur::FormatError {
        return femur::FormatError(std::string("experiment spec: bad field at ") + ptr);
    };
    try {
        if (!j.contains("kind") || !j["kind"].is_string()) throw bad("/kind");
        spec.kind = femur::experiment_kind_from_string(j["kind"].get<std::string>());
    } catch (const femur::ArgumentError&) {
        throw bad("/kind");
    }
    if (j.contains("grid")) {
        if (!j["grid"].is_array()) throw bad("/grid");
        for (std::size_t i = 0; i < j["grid"].size(); ++i) {
            if (!j["grid"][i].is_number()) throw bad(("/grid/" + std::to_string(i)).c_str());
            spec.grid.push_back(j["grid"][i].get<double>());
        }
    } else {
        spec.grid = femur::ExperimentSpec::default_grid(spec.kind);
    }
    auto get_num = [&](const char* key, const char* ptr, auto& out) {
        if (!j.contains(key)) return;
        if (!j[key].is_number()) throw bad(ptr);
        out = j[key].get<std::decay_t<decltype(out)>>();
    };
    get_num("n_landmarks", "/n_landmarks", spec.n_landmarks);
    get_num("iterations", "/iterations", spec.iterations);
    get_num("noise_sigma", "/noise_sigma", spec.noise_sigma);
    get_num("seed", "/seed", spec.seed);
    if (j.contains("skin_offsets")) {
        if (!j["skin_offsets"].is_object()) throw bad("/skin_offsets");
        for (const auto& [k, v] : j["skin_offsets"].items()) {
            if (!v.is_number()) throw bad(("/skin_offsets/" + k).c_str());
            spec.skin_offsets[k] = v.get<double>();
        }
    }
    try {
        spec.validate();
    } catch (const femur::ArgumentError& e) {
        throw femur::FormatError("experiment spec: " + std::string(e.what()));
    }
    return spec;
}

int run_experiment(ExperimentConfig cfg) {
    if (!cfg.spec_path.empty()) {
        cfg.spec = load_experiment_spec(cfg.spec_path);
    } else {
        cfg.spec.kind = femur::experiment_kind_from_string(cfg.kind);
        cfg.spec.grid = cfg.grid.empty() ? femur::ExperimentSpec::default_grid(cfg.spec.kind)
                                         : cfg.grid;
    }
    for (const std::string& arg : cfg.skin_offset_args) {
        const auto eq = arg.find('=');
        if (eq == std::string::npos)
            throw femur::ArgumentError("--skin-offset expects name=millimetres");
        try {
            cfg.spec.skin_offsets[arg.substr(0, eq)] = std::stod(arg.substr(eq + 1));
        } catch (const std::exception&) {
            throw femur::ArgumentError("bad --skin-offset value in '" + arg + "'");
        }
    }
    cfg.spec.validate();

    femur::ShapeModel model = femur::load_model(cfg.model_path);
    femur::TriMesh reference = femur::TriMesh::from_flat(model.mean, model.faces);
    femur::ExperimentEngine engine(std::move(model), std::move(reference), cfg.cpd.params);

    const bool want_skin = cfg.spec.kind == femur::ExperimentKind::SkinReal;
    for (auto& e : load_cohort_dir(cfg.tests_dir, true, want_skin))
        engine.add_test_shape(e.id, std::move(e.mesh), std::move(e.landmarks), e.gt_axis,
                              std::move(e.skin));

    const femur::ExperimentReport report = engine.run(cfg.spec);
    const std::string ext = cfg.out_path.extension().string();
    femur::ReportFormat fmt;
    if (ext == ".csv")
        fmt = femur::ReportFormat::CSV;
    else if (ext == ".json")
        fmt = femur::ReportFormat::JSON;
    else
        throw femur::ArgumentError("--out must end in .csv or .json");
    femur::emit_report(report, cfg.out_path, fmt);
    std::cout << report.trials.size() << " trials (" << report.skipped.size() << " skipped) -> "
              << cfg.out_path.string() << "\n";

    if (cfg.strict) {
        // the reconstruction must beat the prior-mean baseline on at least 90%
        // of eligible trials (>= 5 undisplaced landmarks)
        const auto& baselines = engine.baseline_rmse();
        std::size_t eligible = 0, wins = 0;
        for (const auto& t : report.trials) {
            if (t.landmark_count < 5) continue;
            if (cfg.spec.kind == femur::ExperimentKind::Displacement && t.setting != 0.0)
                continue;
            const auto it = baselines.find(t.shape_id);
            if (it == baselines.end()) continue;
            ++eligible;
            if (t.rmse < it->second) ++wins;
        }
        const double frac =
            eligible == 0 ? 0.0 : static_cast<double>(wins) / static_cast<double>(eligible);
        std::cout << "baseline check: beat prior mean on " << wins << "/" << eligible
                  << " eligible trials\n";
        if (eligible == 0 || frac < 0.9) {
            std::cerr << "error: baseline check failed under --strict\n";
            return 3;
        }
    }
    return 0;
}

// ---------------------------------------------------------------------------
// inspect-model

int run_inspect(const fs::path& model_path, bool as_json) {
    const femur::ShapeModel model = femur::load_model(model_path);
    double total = model.variances.sum();
    if (as_json) {
        ordered_json j;
        j["vertex_count"] = model.vertex_count;
        j["face_count"] = model.faces.size();
        j["mode_count"] = model.mode_count();
        j["variances"] = std::vector<double>(model.variances.data(),
                                             model.variances.data() + model.variances.size());
        ordered_json lms = ordered_json::object();
        for (const auto& [name, idx] : model.landmark_vertices) lms[name] = idx;
        j["landmarks"] = lms;
        std::cout << j.dump(2) << "\n";
        return 0;
    }
    std::cout << "vertices:  " << model.vertex_count << "\n"
              << "faces:     " << model.faces.size() << "\n"
              << "modes:     " << model.mode_count() << "\n";
    double cum = 0.0;
    for (Eigen::Index i = 0; i < model.variances.size(); ++i) {
        cum += model.variances[i];
        std::cout << "  mode " << i << ": variance " << model.variances[i] << " mm^2 ("
                  << 100.0 * cum / total << "% cumulative)\n";
        if (i == 9 && model.variances.size() > 12) {
            std::cout << "  ... " << (model.variances.size() - 10) << " more\n";
            break;
        }
    }
    if (!model.landmark_vertices.empty()) {
        std::cout << "landmarks:\n";
        for (const auto& [name, idx] : model.landmark_vertices)
            std::cout << "  " << name << " -> vertex " << idx << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Statistical shape modelling of the femur: synthetic cohorts, model "
                 "building, proximal reconstruction from sparse landmarks, and the "
                 "landmark-configuration experiments."};
    app.require_subcommand(1);

    SynthConfig synth;
    auto* c_synth = app.add_subcommand("synth", "Generate a synthetic femur cohort directory");
    c_synth->add_option("--out", synth.out_dir, "Output directory")->required();
    c_synth->add_option("--count,--n", synth.count, "Number of shapes");
    c_synth->add_option("--seed", synth.seed, "Cohort seed");
    c_synth->add_option("--rings", synth.rings, "Rings along the bone axis");
    c_synth->add_option("--segments", synth.segments, "Segments around each ring");
    c_synth->add_flag("--no-random-pose", synth.no_random_pose, "Skip the random rigid pose");
    c_synth->add_flag("--skin", synth.emit_skin, "Also write soft-tissue envelope meshes");

    BuildConfig build;
    auto* c_build = app.add_subcommand("build-ssm", "Build a shape model from a cohort directory");
    c_build->add_option("--cohort", build.cohort_dir, "Cohort directory")->required();
    c_build->add_option("--out", build.out_path, "Output model file")->required();
    c_build->add_option("--reference-vertices", build.reference_vertices,
                        "Decimation target for the reference mesh");
    build.cpd.attach(c_build);

    ReconstructConfig rec;
    auto* c_rec = app.add_subcommand("reconstruct",
                                     "Reconstruct the proximal femur of one input mesh");
    c_rec->add_option("--model", rec.model_path, "Model file")->required();
    c_rec->add_option("--input", rec.input_path, "Input mesh (.ply/.obj)")->required();
    c_rec->add_option("--out", rec.out_path, "Predicted mesh output")->required();
    c_rec->add_option("--report", rec.report_path, "Optional JSON report path");
    c_rec->add_option("--landmarks", rec.landmarks_path,
                      "Landmark JSON for the input mesh (enables rigid pre-alignment)");
    c_rec->add_option("--skin-offsets", rec.skin_offset_args,
                      "'default' or name=mm list: condition on the palpable landmark trio");
    c_rec->add_option("--truth-mesh", rec.truth_mesh_path,
                      "Ground-truth mesh; reports the reconstruction RMSE against it");
    c_rec->add_option("--hip-seed", rec.hip_seed, "Seed for the hip-center sphere sample");
    c_rec->add_option("--rule", rec.rule, "Landmark picking rule: ring|count");
    c_rec->add_option("--n-landmarks", rec.options.n_landmarks, "Picked landmark count");
    c_rec->add_option("--ring-lo", rec.options.ring_lo_frac, "Ring inner fraction");
    c_rec->add_option("--ring-hi", rec.options.ring_hi_frac, "Ring outer fraction");
    c_rec->add_option("--displacement", rec.options.displacement,
                      "Random landmark displacement magnitude, mm");
    c_rec->add_option("--noise-sigma", rec.options.noise_sigma, "Posterior noise sigma, mm");
    c_rec->add_option("--seed", rec.options.seed, "Seed");
    rec.cpd.attach(c_rec);

    ExperimentConfig exp;
    auto* c_exp = app.add_subcommand("experiment", "Run a landmark study over a test directory");
    c_exp->add_option("--model", exp.model_path, "Model file")->required();
    c_exp->add_option("--tests", exp.tests_dir, "Test cohort directory")->required();
    c_exp->add_option("--out", exp.out_path, "Report path (.csv or .json)")->required();
    c_exp->add_option("--spec", exp.spec_path, "Experiment spec JSON (overrides kind/grid)");
    c_exp->add_flag("--strict", exp.strict, "Fail if reconstruction does not beat the baseline");
    c_exp->add_option("--kind", exp.kind,
                      "ring_distance|landmark_count|displacement|skin_simulated|skin_real");
    c_exp->add_option("--grid", exp.grid, "Override the setting grid");
    c_exp->add_option("--landmarks", exp.spec.n_landmarks,
                      "Landmark count (displacement study)");
    c_exp->add_option("--iterations", exp.spec.iterations, "Repeats per shape and setting");
    c_exp->add_option("--noise-sigma", exp.spec.noise_sigma, "Posterior noise sigma, mm");
    c_exp->add_option("--seed", exp.spec.seed, "Experiment seed");
    c_exp->add_option("--skin-offset", exp.skin_offset_args,
                      "name=mm override for the simulated skin offsets (repeatable)");
    exp.cpd.attach(c_exp);

    fs::path inspect_path;
    bool inspect_json = false;
    auto* c_ins = app.add_subcommand("inspect-model", "Print a model file summary");
    c_ins->add_option("--model", inspect_path, "Model file")->required();
    c_ins->add_flag("--json", inspect_json, "Machine-readable output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return 2;
    }

    try {
        if (*c_synth) return run_synth(synth);
        if (*c_build) return run_build(build);
        if (*c_rec) return run_reconstruct(std::move(rec));
        if (*c_exp) return run_experiment(std::move(exp));
        if (*c_ins) return run_inspect(inspect_path, inspect_json);
    } catch (const femur::ArgumentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const femur::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 4;
    } catch (const femur::DegenerateError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 4;
    } catch (const femur::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
