#include "femur/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "femur/alignment.hpp"
#include "femur/mesh_io.hpp"

namespace femur {

namespace {

constexpr std::uint64_t kTagPick = 0x7069636bULL; // stream tags for trial RNG derivation
constexpr std::uint64_t kTagDisp = 0x64697370ULL;
constexpr std::uint64_t kTagHip = 0x68697030ULL;

Vec3 random_unit(Rng& rng) {
    Vec3 v;
    do {
        v = Vec3(rng.normal(), rng.normal(), rng.normal());
    } while (v.norm() < 1e-9);
    return v.normalized();
}

double quantile(std::vector<double> v, double q) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const double pos = q * (static_cast<double>(v.size()) - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

std::string to_string(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::RingDistance: return "ring_distance";
        case ExperimentKind::LandmarkCount: return "landmark_count";
        case ExperimentKind::Displacement: return "displacement";
        case ExperimentKind::SkinSimulated: return "skin_simulated";
        case ExperimentKind::SkinReal: return "skin_real";
    }
    throw ArgumentError("unknown experiment kind");
}

ExperimentKind experiment_kind_from_string(const std::string& s) {
    if (s == "ring_distance") return ExperimentKind::RingDistance;
    if (s == "landmark_count") return ExperimentKind::LandmarkCount;
    if (s == "displacement") return ExperimentKind::Displacement;
    if (s == "skin_simulated") return ExperimentKind::SkinSimulated;
    if (s == "skin_real") return ExperimentKind::SkinReal;
    throw ArgumentError("unknown experiment kind '" + s + "'");
}

void ExperimentSpec::validate() const {
    if (grid.empty()) throw ArgumentError("experiment grid must be nonempty");
    if (iterations < 1) throw ArgumentError("iterations must be at least 1");
    if (!(noise_sigma > 0.0)) throw ArgumentError("noise sigma must be positive");
    if (kind == ExperimentKind::LandmarkCount)
        for (double g : grid)
            if (g < 1.0 || g != std::floor(g))
                throw ArgumentError("landmark-count grid entries must be positive integers");
    if (kind == ExperimentKind::RingDistance)
        for (double g : grid)
            if (g < 0.0 || g > 1.0) throw ArgumentError("ring fractions must lie in [0, 1]");
}

std::vector<double> ExperimentSpec::default_grid(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::RingDistance:
            return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8}; // ring [f, f+0.1) x indicator
        case ExperimentKind::LandmarkCount:
            return {5, 55, 105, 155, 205};
        case ExperimentKind::Displacement:
            return {-5, -3, -1, 1, 3, 5};
        case ExperimentKind::SkinSimulated:
        case ExperimentKind::SkinReal:
            return {0, 1}; // 0 = bony baseline, 1 = skin landmarks
    }
    throw ArgumentError("unknown experiment kind");
}

std::map<std::string, double> ExperimentSpec::default_skin_offsets() {
    return {{"greater_trochanter", 43.0}, {"medial_epicondyle", 14.0}, {"lateral_epicondyle", 12.0}};
}

LandmarkSet simulate_skin_landmarks(const TriMesh& mesh, const LandmarkSet& landmarks,
                                    const std::map<std::string, double>& offsets) {
    const std::vector<Vec3> normals = vertex_normals(mesh);
    LandmarkSet out = landmarks;
    for (const auto& [name, offset] : offsets) {
        if (!landmarks.contains(name)) throw ValidationError("missing landmark '" + name + "'");
        const std::int32_t v = nearest_vertex(mesh, landmarks.at(name));
        out.set(name, landmarks.at(name) + offset * normals[v]);
    }
    return out;
}

// ---------------------------------------------------------------------------

Reconstruction reconstruct(const ShapeModel& model, const TriMesh& reference,
                           const TriMesh& test_mesh, const ReconstructOptions& options) {
    model.validate();
    if (reference.vertex_count() != model.vertex_count || reference.faces != model.faces)
        throw ValidationError("reconstruct: reference topology does not match the model");

    // rigid pre-alignment into the model frame when landmarks are available
    RigidTransform to_model; // identity by default
    if (options.input_landmarks) {
        LandmarkSet model_lms;
        for (const auto& [name, idx] : model.landmark_vertices)
            model_lms.set(name, reference.vertices[static_cast<std::size_t>(idx)]);
        to_model = procrustes_from_landmarks(*options.input_landmarks, model_lms);
    }
    const TriMesh aligned_test = to_model.apply(test_mesh);

    const Correspondence fit = cpd_nonrigid(reference, aligned_test, options.cpd, options.seed);
    const Vec3 fitted_fovea = fit.deformed.vertices[model.landmark_vertex("fovea")];
    const Vec3 fitted_notch = fit.deformed.vertices[model.landmark_vertex("intercondylar_notch")];
    const double indicator = (fitted_fovea - fitted_notch).norm();

    const auto [fit_prox, fit_dist] = clip_proximal(fit.deformed, fitted_fovea);
    const auto [test_prox, test_dist] = clip_proximal(aligned_test, fitted_fovea);
    if (fit_dist.indices.empty()) throw EmptyRegionError("fitted mesh has no distal part");

    VertexRegion picked;
    if (options.rule == PickRule::Ring) {
        VertexRegion ring = select_ring_region(fit.deformed, fitted_fovea,
                                               options.ring_lo_frac * indicator,
                                               options.ring_hi_frac * indicator);
        // keep only distal vertices
        std::vector<std::int32_t> distal_sorted = fit_dist.indices;
        std::sort(distal_sorted.begin(), distal_sorted.end());
        VertexRegion ring_distal{&fit.deformed, {}};
        for (std::int32_t i : ring.indices)
            if (std::binary_search(distal_sorted.begin(), distal_sorted.end(), i))
                ring_distal.indices.push_back(i);
        if (ring_distal.indices.size() < static_cast<std::size_t>(options.n_landmarks))
            throw EmptyRegionError("ring region holds fewer vertices than requested landmarks");
        picked = farthest_point_downsample(ring_distal, options.n_landmarks,
                                           mix_seed(options.seed, kTagPick));
    } else {
        if (fit_dist.indices.size() < static_cast<std::size_t>(options.n_landmarks))
            throw EmptyRegionError("distal part holds fewer vertices than requested landmarks");
        picked = farthest_point_downsample(fit_dist, options.n_landmarks,
                                           mix_seed(options.seed, kTagPick));
    }

    auto pairs = extract_landmark_pairs(fit, aligned_test, picked, &test_dist.indices);
    if (options.displacement > 0.0) {
        Rng disp_rng(mix_seed(options.seed, kTagDisp));
        for (auto& [idx, target] : pairs) target += options.displacement * random_unit(disp_rng);
    }

    Reconstruction out;
    out.field.observations = std::move(pairs);
    out.field.noise_sigma = options.noise_sigma;
    out.predicted = to_model.inverse().apply(
        posterior_mean_shape(posterior_model(model, out.field)));
    out.fitting_rmse = fit.fitting_rmse;
    out.cpd_converged = fit.converged;
    return out;
}

// ---------------------------------------------------------------------------

ExperimentEngine::ExperimentEngine(ShapeModel model, TriMesh reference, CpdParams cpd_params)
    : model_(std::move(model)), reference_(std::move(reference)), cpd_params_(cpd_params) {
    model_.validate();
    if (reference_.vertex_count() != model_.vertex_count || reference_.faces != model_.faces)
        throw ValidationError("engine reference topology does not match the model");
    model_.landmark_vertex("fovea");
    model_.landmark_vertex("intercondylar_notch");
}

void ExperimentEngine::add_test_shape(std::string id, TriMesh mesh, LandmarkSet landmarks,
                                      std::optional<MechanicalAxis> ground_truth_axis,
                                      std::optional<TriMesh> skin_mesh) {
    PreparedShape s;
    s.id = std::move(id);
    s.mesh = std::move(mesh);
    s.landmarks = std::move(landmarks);
    s.gt_axis = std::move(ground_truth_axis);
    s.skin = std::move(skin_mesh);
    shapes_.push_back(std::move(s));
}

LandmarkSet ExperimentEngine::model_landmarks() const {
    LandmarkSet out;
    for (const auto& [name, idx] : model_.landmark_vertices)
        out.set(name, reference_.vertices[static_cast<std::size_t>(idx)]);
    return out;
}

ExperimentEngine::PreparedShape& ExperimentEngine::prepare(std::size_t i) {
    PreparedShape& s = shapes_[i];
    if (s.prepared) return s;

    // bring the test shape into the model frame so the nonrigid fit only has
    // to explain shape, not pose
    const RigidTransform to_model = procrustes_from_landmarks(s.landmarks, model_landmarks());
    s.mesh = to_model.apply(s.mesh);
    s.landmarks = to_model.apply(s.landmarks);
    if (s.gt_axis) {
        s.gt_axis->notch_point = to_model.apply(s.gt_axis->notch_point);
        s.gt_axis->hip_center = to_model.apply(s.gt_axis->hip_center);
        s.gt_axis->direction = to_model.rotation * s.gt_axis->direction;
    }
    if (s.skin) s.skin = to_model.apply(*s.skin);

    s.fit = cpd_nonrigid(reference_, s.mesh, cpd_params_, 0);
    const Vec3 fitted_fovea = s.fit.deformed.vertices[model_.landmark_vertex("fovea")];
    const Vec3 fitted_notch =
        s.fit.deformed.vertices[model_.landmark_vertex("intercondylar_notch")];
    s.indicator = (fitted_fovea - fitted_notch).norm();

    auto [fp, fd] = clip_proximal(s.fit.deformed, fitted_fovea);
    s.fitted_distal = std::move(fd.indices);
    std::sort(s.fitted_distal.begin(), s.fitted_distal.end());
    const Vec3 clip_fovea =
        s.landmarks.contains("fovea") ? s.landmarks.at("fovea") : fitted_fovea;
    auto [tp, td] = clip_proximal(s.mesh, clip_fovea);
    s.test_distal = std::move(td.indices);
    s.prepared = true;

    // prior-mean baseline, scored like any trial
    const TriMesh mean_shape = TriMesh::from_flat(model_.mean, model_.faces);
    baseline_rmse_[s.id] = score(s, mean_shape, 0).rmse;
    return s;
}

ExperimentEngine::TrialScore ExperimentEngine::score(const PreparedShape& shape,
                                                     const TriMesh& predicted,
                                                     std::uint64_t hip_seed) {
    const Vec3 pred_fovea = predicted.vertices[model_.landmark_vertex("fovea")];
    const Vec3 pred_notch = predicted.vertices[model_.landmark_vertex("intercondylar_notch")];
    auto [prox, dist] = clip_proximal(predicted, pred_fovea);
    if (prox.indices.empty()) throw EmptyRegionError("predicted mesh has no proximal part");

    const PointIndex test_index(shape.mesh.vertices);
    double sum2 = 0.0;
    for (std::int32_t i : prox.indices) {
        const double d = test_index.nearest_distance(predicted.vertices[i]);
        sum2 += d * d;
    }
    TrialScore out;
    out.rmse = std::sqrt(sum2 / static_cast<double>(prox.indices.size()));
    out.has_deviation = shape.gt_axis.has_value();
    out.deviation = std::numeric_limits<double>::quiet_NaN();
    if (out.has_deviation) {
        const VertexRegion head = head_surface_region(predicted, prox, pred_fovea);
        const SphereFit hip = hip_center(head, std::min<std::size_t>(30, head.size()), hip_seed);
        const MechanicalAxis axis = mechanical_axis(pred_notch, hip);
        out.deviation = axis_angle_deviation(axis, *shape.gt_axis);
    }
    return out;
}

std::vector<std::pair<std::int32_t, Vec3>> ExperimentEngine::named_landmark_pairs(
    const PreparedShape& shape) {
    // bony trio: model landmark vertex -> nearest distal test vertex to its
    // fitted position
    const PointIndex distal_index(shape.mesh.vertices, shape.test_distal);
    std::vector<std::pair<std::int32_t, Vec3>> pairs;
    for (const std::string& name : skin_landmark_names()) {
        const std::int32_t midx = model_.landmark_vertex(name);
        const std::int32_t tvidx = distal_index.nearest(shape.fit.deformed.vertices[midx]);
        pairs.emplace_back(midx, shape.mesh.vertices[tvidx]);
    }
    return pairs;
}

ExperimentReport ExperimentEngine::run(const ExperimentSpec& spec) {
    spec.validate();
    if (shapes_.empty()) throw ArgumentError("experiment engine has no test shapes");

    ExperimentReport report;
    report.kind = spec.kind;
    report.seed = spec.seed;
    const auto kind_tag = static_cast<std::uint64_t>(spec.kind);

    for (std::size_t si = 0; si < shapes_.size(); ++si) {
        PreparedShape& shape = prepare(si);
        std::vector<Vec3> test_normals; // lazily filled for skin modes

        for (std::size_t gi = 0; gi < spec.grid.size(); ++gi) {
            const double setting = spec.grid[gi];
            for (int iter = 0; iter < spec.iterations; ++iter) {
                const auto iter_tag = static_cast<std::uint64_t>(iter);
                const std::uint64_t trial_seed = mix_seed(spec.seed, kind_tag, si, gi, iter_tag);
                // hip sampling must not depend on the setting so a zero
                // displacement reproduces the undisplaced pipeline exactly
                const std::uint64_t hip_seed = mix_seed(spec.seed, kind_tag, si, iter_tag, kTagHip);
                try {
                    std::vector<std::pair<std::int32_t, Vec3>> pairs;
                    int landmark_count = 0;

                    switch (spec.kind) {
                        case ExperimentKind::RingDistance: {
                            landmark_count = 3;
                            const Vec3 fitted_fovea =
                                shape.fit.deformed.vertices[model_.landmark_vertex("fovea")];
                            VertexRegion ring;
                            try {
                                ring = select_ring_region(shape.fit.deformed, fitted_fovea,
                                                          setting * shape.indicator,
                                                          (setting + 0.1) * shape.indicator);
                            } catch (const EmptyRegionError&) {
                                throw EmptyRegionError("ring [" + fmt_double(setting) + ", " +
                                                       fmt_double(setting + 0.1) + ") is empty");
                            }
                            VertexRegion ring_distal{&shape.fit.deformed, {}};
                            for (std::int32_t v : ring.indices)
                                if (std::binary_search(shape.fitted_distal.begin(),
                                                       shape.fitted_distal.end(), v))
                                    ring_distal.indices.push_back(v);
                            if (ring_distal.indices.size() < 3)
                                throw EmptyRegionError("ring holds fewer than 3 distal vertices");
                            const VertexRegion picked = farthest_point_downsample(
                                ring_distal, 3,
                                mix_seed(spec.seed, kind_tag, si, gi, iter_tag, kTagPick));
                            pairs = extract_landmark_pairs(shape.fit, shape.mesh, picked,
                                                           &shape.test_distal);
                            break;
                        }
                        case ExperimentKind::LandmarkCount: {
                            const auto n = static_cast<std::size_t>(setting);
                            landmark_count = static_cast<int>(n);
                            if (n > shape.fitted_distal.size())
                                throw EmptyRegionError("distal part holds only " +
                                                       std::to_string(shape.fitted_distal.size()) +
                                                       " vertices");
                            const VertexRegion distal{&shape.fit.deformed, shape.fitted_distal};
                            const VertexRegion picked = farthest_point_downsample(
                                distal, n,
                                mix_seed(spec.seed, kind_tag, si, gi, iter_tag, kTagPick));
                            pairs = extract_landmark_pairs(shape.fit, shape.mesh, picked,
                                                           &shape.test_distal);
                            break;
                        }
                        case ExperimentKind::Displacement: {
                            landmark_count = spec.n_landmarks;
                            if (static_cast<std::size_t>(spec.n_landmarks) >
                                shape.fitted_distal.size())
                                throw EmptyRegionError("distal part too small for landmark count");
                            const VertexRegion distal{&shape.fit.deformed, shape.fitted_distal};
                            // the pick stream ignores the setting: d = 0 must
                            // reproduce the undisplaced pipeline bit-exactly
                            const VertexRegion picked = farthest_point_downsample(
                                distal, static_cast<std::size_t>(spec.n_landmarks),
                                mix_seed(spec.seed, kind_tag, si, iter_tag, kTagPick));
                            pairs = extract_landmark_pairs(shape.fit, shape.mesh, picked,
                                                           &shape.test_distal);
                            const double magnitude = std::abs(setting);
                            if (magnitude > 0.0) {
                                Rng disp_rng(
                                    mix_seed(spec.seed, kind_tag, si, gi, iter_tag, kTagDisp));
                                for (auto& [idx, target] : pairs)
                                    target += magnitude * random_unit(disp_rng);
                            }
                            break;
                        }
                        case ExperimentKind::SkinSimulated:
                        case ExperimentKind::SkinReal: {
                            landmark_count = static_cast<int>(skin_landmark_names().size());
                            pairs = named_landmark_pairs(shape);
                            if (setting != 0.0) {
                                if (spec.kind == ExperimentKind::SkinSimulated) {
                                    const auto offsets = spec.skin_offsets.empty()
                                                             ? ExperimentSpec::default_skin_offsets()
                                                             : spec.skin_offsets;
                                    if (test_normals.empty())
                                        test_normals = vertex_normals(shape.mesh);
                                    const auto& names = skin_landmark_names();
                                    for (std::size_t k = 0; k < pairs.size(); ++k) {
                                        const auto it = offsets.find(names[k]);
                                        const double off = it == offsets.end() ? 0.0 : it->second;
                                        if (off != 0.0) {
                                            const std::int32_t tv =
                                                nearest_vertex(shape.mesh, pairs[k].second);
                                            pairs[k].second += off * test_normals[tv];
                                        }
                                    }
                                } else {
                                    if (!shape.skin)
                                        throw ArgumentError("shape '" + shape.id +
                                                            "' has no skin mesh");
                                    if (test_normals.empty())
                                        test_normals = vertex_normals(shape.mesh);
                                    for (auto& [midx, target] : pairs) {
                                        const std::int32_t tv = nearest_vertex(shape.mesh, target);
                                        const Vec3 dir = test_normals[tv];
                                        // nearest skin vertex to the outward normal
                                        // ray within a 5 mm corridor
                                        double best_perp = 5.0;
                                        std::int32_t best = -1;
                                        for (std::size_t v = 0; v < shape.skin->vertex_count();
                                             ++v) {
                                            const Vec3 rel = shape.skin->vertices[v] - target;
                                            const double t = rel.dot(dir);
                                            if (t <= 0.0) continue;
                                            const double perp = (rel - t * dir).norm();
                                            if (perp < best_perp) {
                                                best_perp = perp;
                                                best = static_cast<std::int32_t>(v);
                                            }
                                        }
                                        if (best < 0) best = nearest_vertex(*shape.skin, target);
                                        target = shape.skin->vertices[best];
                                    }
                                }
                            }
                            break;
                        }
                    }

                    // the pipeline must never read proximal geometry except
                    // for scoring
                    for (const auto& [idx, target] : pairs)
                        if (!std::binary_search(shape.fitted_distal.begin(),
                                                shape.fitted_distal.end(), idx))
                            throw ValidationError("picked landmark lies in the proximal part");

                    DeformationField field;
                    field.observations = std::move(pairs);
                    field.noise_sigma = spec.noise_sigma;
                    const TriMesh predicted = posterior_mean_shape(posterior_model(model_, field));
                    const TrialScore sc = score(shape, predicted, hip_seed);

                    TrialResult t;
                    t.shape_id = shape.id;
                    t.setting = setting;
                    t.iteration = iter;
                    t.landmark_count = landmark_count;
                    t.rmse = sc.rmse;
                    t.axis_deviation = sc.deviation;
                    t.converged = shape.fit.converged;
                    t.seed = trial_seed;
                    report.trials.push_back(std::move(t));
                } catch (const EmptyRegionError& e) {
                    report.skipped.push_back({shape.id, setting, iter, e.what()});
                } catch (const ArgumentError& e) {
                    report.skipped.push_back({shape.id, setting, iter, e.what()});
                }
            }
        }
    }
    return report;
}

// ---------------------------------------------------------------------------

std::vector<AggregateRow> aggregate_report(const ExperimentReport& report) {
    auto make_row = [&](double setting, bool by_mag,
                        const std::vector<const TrialResult*>& trials) {
        AggregateRow row;
        row.setting = setting;
        row.by_magnitude = by_mag;
        row.n_trials = static_cast<int>(trials.size());
        std::vector<double> rmse, dev;
        for (const TrialResult* t : trials) {
            rmse.push_back(t->rmse);
            if (std::isfinite(t->axis_deviation)) dev.push_back(t->axis_deviation);
            row.all_converged = row.all_converged && t->converged;
        }
        auto stats = [](const std::vector<double>& v, double& med, double& iqr, double& mean,
                        double& sd) {
            med = quantile(v, 0.5);
            iqr = quantile(v, 0.75) - quantile(v, 0.25);
            if (v.empty()) {
                mean = sd = std::numeric_limits<double>::quiet_NaN();
                return;
            }
            mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
            double s2 = 0.0;
            for (double x : v) s2 += (x - mean) * (x - mean);
            sd = std::sqrt(s2 / static_cast<double>(v.size()));
        };
        stats(rmse, row.rmse_median, row.rmse_iqr, row.rmse_mean, row.rmse_std);
        stats(dev, row.dev_median, row.dev_iqr, row.dev_mean, row.dev_std);
        return row;
    };

    std::vector<double> settings;
    for (const TrialResult& t : report.trials)
        if (std::find(settings.begin(), settings.end(), t.setting) == settings.end())
            settings.push_back(t.setting);
    std::sort(settings.begin(), settings.end());

    std::vector<AggregateRow> rows;
    for (double s : settings) {
        std::vector<const TrialResult*> group;
        for (const TrialResult& t : report.trials)
            if (t.setting == s) group.push_back(&t);
        rows.push_back(make_row(s, false, group));
    }

    // a signed displacement grid also gets magnitude-level aggregates
    const bool any_negative = std::any_of(settings.begin(), settings.end(),
                                          [](double s) { return s < 0.0; });
    if (any_negative) {
        std::vector<double> mags;
        for (double s : settings)
            if (std::find(mags.begin(), mags.end(), std::abs(s)) == mags.end())
                mags.push_back(std::abs(s));
        std::sort(mags.begin(), mags.end());
        for (double m : mags) {
            std::vector<const TrialResult*> group;
            for (const TrialResult& t : report.trials)
                if (std::abs(t.setting) == m) group.push_back(&t);
            rows.push_back(make_row(m, true, group));
        }
    }
    return rows;
}

void emit_report(const ExperimentReport& report, const std::filesystem::path& path,
                 ReportFormat format) {
    if (report.trials.empty() && report.skipped.empty())
        throw ArgumentError("emit_report: no results");
    const std::vector<AggregateRow> aggregates = aggregate_report(report);
    const std::string kind = to_string(report.kind);

    if (format == ReportFormat::CSV) {
        std::ostringstream out;
        out << "kind,setting,shape_id,iteration,n_landmarks,rmse_mm,axis_deviation_deg,converged,"
               "seed\n";
        for (const TrialResult& t : report.trials) {
            out << kind << ',' << fmt_double(t.setting) << ',' << t.shape_id << ',' << t.iteration
                << ',' << t.landmark_count << ',' << fmt_double(t.rmse) << ','
                << fmt_double(t.axis_deviation) << ',' << (t.converged ? "true" : "false") << ','
                << t.seed << '\n';
        }
        // one aggregate row per setting carrying the medians; iteration holds
        // the trial count, full statistics live in the JSON form
        for (const AggregateRow& a : aggregates) {
            const int lm = report.trials.empty() ? 0 : report.trials.front().landmark_count;
            out << kind << ',' << fmt_double(a.setting) << ','
                << (a.by_magnitude ? "aggregate_abs" : "aggregate") << ',' << a.n_trials << ','
                << lm << ',' << fmt_double(a.rmse_median) << ',' << fmt_double(a.dev_median)
                << ',' << (a.all_converged ? "true" : "false") << ',' << report.seed << '\n';
        }
        atomic_write_text(path, out.str());
        return;
    }

    nlohmann::ordered_json j;
    j["kind"] = kind;
    j["seed"] = report.seed;
    auto num = [](double v) -> nlohmann::ordered_json {
        if (std::isfinite(v)) return v;
        return nullptr;
    };
    j["trials"] = nlohmann::ordered_json::array();
    for (const TrialResult& t : report.trials) {
        j["trials"].push_back({{"kind", kind},
                               {"setting", t.setting},
                               {"shape_id", t.shape_id},
                               {"iteration", t.iteration},
                               {"n_landmarks", t.landmark_count},
                               {"rmse_mm", t.rmse},
                               {"axis_deviation_deg", num(t.axis_deviation)},
                               {"converged", t.converged},
                               {"seed", t.seed}});
    }
    j["aggregates"] = nlohmann::ordered_json::array();
    for (const AggregateRow& a : aggregates) {
        j["aggregates"].push_back({{"setting", a.setting},
                                   {"by_magnitude", a.by_magnitude},
                                   {"n_trials", a.n_trials},
                                   {"rmse_mm",
                                    {{"median", num(a.rmse_median)},
                                     {"iqr", num(a.rmse_iqr)},
                                     {"mean", num(a.rmse_mean)},
                                     {"std", num(a.rmse_std)}}},
                                   {"axis_deviation_deg",
                                    {{"median", num(a.dev_median)},
                                     {"iqr", num(a.dev_iqr)},
                                     {"mean", num(a.dev_mean)},
                                     {"std", num(a.dev_std)}}},
                                   {"all_converged", a.all_converged}});
    }
    j["skipped"] = nlohmann::ordered_json::array();
    for (const SkippedTrial& s : report.skipped)
        j["skipped"].push_back({{"shape_id", s.shape_id},
                                {"setting", s.setting},
                                {"iteration", s.iteration},
                                {"reason", s.reason}});
    atomic_write_text(path, j.dump(2) + "\n");
}

} // namespace femur
