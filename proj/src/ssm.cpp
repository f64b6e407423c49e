#include "femur/ssm.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "femur/mesh_io.hpp"

namespace femur {

void ShapeModel::validate() const {
    const auto n3 = static_cast<Eigen::Index>(3 * vertex_count);
    if (mean.size() != n3) throw ValidationError("model mean length does not match vertex count");
    if (modes.rows() != n3) throw ValidationError("model mode rows do not match vertex count");
    if (variances.size() != modes.cols())
        throw ValidationError("variance count does not match mode count");
    for (Eigen::Index i = 0; i < variances.size(); ++i) {
        if (!(variances(i) > 0.0)) throw ValidationError("variances must be positive");
        if (i > 0 && variances(i) > variances(i - 1) + 1e-15)
            throw ValidationError("variances must be non-increasing");
    }
    if (modes.cols() > 0) {
        const Eigen::MatrixXd gram = modes.transpose() * modes;
        if ((gram - Eigen::MatrixXd::Identity(modes.cols(), modes.cols())).cwiseAbs().maxCoeff() >
            1e-8)
            throw ValidationError("modes are not orthonormal");
    }
    for (const Face& f : faces)
        for (int k = 0; k < 3; ++k)
            if (f[k] < 0 || f[k] >= static_cast<std::int32_t>(vertex_count))
                throw ValidationError("model face index out of range");
}

std::int32_t ShapeModel::landmark_vertex(const std::string& name) const {
    for (const auto& [n, idx] : landmark_vertices)
        if (n == name) return idx;
    throw ValidationError("model carries no landmark vertex named '" + name + "'");
}

void DeformationField::validate(const ShapeModel& model) const {
    if (!(noise_sigma > 0.0)) throw ArgumentError("DeformationField: noise sigma must be positive");
    std::vector<std::int32_t> seen;
    for (const auto& [idx, p] : observations) {
        if (idx < 0 || idx >= static_cast<std::int32_t>(model.vertex_count))
            throw ValidationError("observation index " + std::to_string(idx) + " out of range");
        if (std::find(seen.begin(), seen.end(), idx) != seen.end())
            throw ValidationError("observation index " + std::to_string(idx) + " repeated");
        seen.push_back(idx);
        if (!p.allFinite()) throw ValidationError("observation position is not finite");
    }
}

ShapeModel build_ssm(const std::vector<TriMesh>& cohort) {
    if (cohort.size() < 2) throw ArgumentError("build_ssm needs at least 2 shapes");
    const std::size_t nv = cohort[0].vertex_count();
    const auto& faces = cohort[0].faces;
    for (std::size_t i = 1; i < cohort.size(); ++i) {
        if (cohort[i].vertex_count() != nv || cohort[i].faces != faces)
            throw ValidationError("shape " + std::to_string(i) +
                                  " does not share the cohort topology");
    }

    const auto n = static_cast<Eigen::Index>(cohort.size());
    const auto d = static_cast<Eigen::Index>(3 * nv);
    Eigen::MatrixXd data(d, n);
    for (Eigen::Index i = 0; i < n; ++i) data.col(i) = cohort[i].flatten();

    ShapeModel model;
    model.faces = faces;
    model.vertex_count = nv;
    model.mean = data.rowwise().mean();
    Eigen::MatrixXd centered = data.colwise() - model.mean;

    // Gram trick: eigendecompose C^T C (n x n) instead of the 3N x 3N covariance.
    const Eigen::MatrixXd gram = centered.transpose() * centered;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    if (eig.info() != Eigen::Success) throw NumericalError("build_ssm: eigendecomposition failed");

    // eigenvalues ascending; covariance eigenvalue = gram eigenvalue / n
    std::vector<std::pair<double, Eigen::Index>> order;
    for (Eigen::Index i = 0; i < n; ++i) order.emplace_back(eig.eigenvalues()(i), i);
    std::sort(order.begin(), order.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });

    const double largest = std::max(order.empty() ? 0.0 : order[0].first, 0.0) / n;
    // identical cohort members leave only rounding noise in the Gram matrix;
    // the absolute floor (scaled to the coordinate magnitude) discards it
    const double noise_floor =
        1e-24 * (1.0 + model.mean.squaredNorm() / static_cast<double>(d));
    std::vector<Eigen::Index> kept;
    for (const auto& [val, idx] : order) {
        const double var = val / n;
        if (var > 1e-10 * largest && var > noise_floor) kept.push_back(idx);
    }
    // rank of centered data is at most n-1
    if (kept.size() >= cohort.size()) kept.resize(cohort.size() - 1);

    model.modes.resize(d, static_cast<Eigen::Index>(kept.size()));
    model.variances.resize(static_cast<Eigen::Index>(kept.size()));
    for (std::size_t k = 0; k < kept.size(); ++k) {
        const double gram_eval = eig.eigenvalues()(kept[k]);
        Eigen::VectorXd mode = centered * eig.eigenvectors().col(kept[k]);
        mode /= std::sqrt(gram_eval);
        model.modes.col(static_cast<Eigen::Index>(k)) = mode;
        model.variances(static_cast<Eigen::Index>(k)) = gram_eval / n;
    }
    model.validate();
    return model;
}

TriMesh sample_shape(const ShapeModel& model, const Eigen::VectorXd& coefficients) {
    if (coefficients.size() != model.modes.cols())
        throw ArgumentError("sample_shape: expected " + std::to_string(model.modes.cols()) +
                            " coefficients, got " + std::to_string(coefficients.size()));
    const Eigen::VectorXd scaled = coefficients.array() * model.variances.array().sqrt();
    const Eigen::VectorXd flat = model.mean + model.modes * scaled;
    return TriMesh::from_flat(flat, model.faces);
}

Eigen::VectorXd project_shape(const ShapeModel& model, const TriMesh& shape,
                              double* residual_rmse) {
    if (shape.vertex_count() != model.vertex_count || shape.faces != model.faces)
        throw ValidationError("project_shape: topology does not match the model");
    const Eigen::VectorXd delta = shape.flatten() - model.mean;
    const Eigen::VectorXd raw = model.modes.transpose() * delta; // orthonormal => least squares
    if (residual_rmse) {
        const Eigen::VectorXd res = delta - model.modes * raw;
        double sum2 = 0.0;
        for (std::size_t v = 0; v < model.vertex_count; ++v)
            sum2 += res.segment<3>(3 * static_cast<Eigen::Index>(v)).squaredNorm();
        *residual_rmse = std::sqrt(sum2 / static_cast<double>(model.vertex_count));
    }
    return raw.array() / model.variances.array().sqrt();
}

PosteriorModel posterior_model(const ShapeModel& model, const DeformationField& field) {
    model.validate();
    field.validate(model);
    if (field.observations.empty()) return model;

    const auto m = model.modes.cols();
    const auto k = static_cast<Eigen::Index>(field.observations.size());
    const double s2 = field.noise_sigma * field.noise_sigma;

    // Q = modes * diag(sqrt(var)); restrict rows to the observed coordinates.
    Eigen::MatrixXd qs(3 * k, m);
    Eigen::VectorXd delta(3 * k);
    const Eigen::VectorXd sqrt_var = model.variances.array().sqrt();
    for (Eigen::Index i = 0; i < k; ++i) {
        const auto& [vidx, p] = field.observations[static_cast<std::size_t>(i)];
        const Eigen::Index row = 3 * static_cast<Eigen::Index>(vidx);
        qs.middleRows(3 * i, 3) = model.modes.middleRows(row, 3) * sqrt_var.asDiagonal();
        delta.segment<3>(3 * i) = p - model.mean.segment<3>(row);
    }

    Eigen::MatrixXd a = qs.transpose() * qs;
    a.diagonal().array() += s2;
    const Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success)
        throw NumericalError("posterior_model: normal matrix factorization failed");

    const Eigen::VectorXd alpha = llt.solve(qs.transpose() * delta); // posterior coefficient mean
    // posterior coefficient covariance: s2 * A^{-1}
    Eigen::MatrixXd cov = s2 * llt.solve(Eigen::MatrixXd::Identity(m, m));

    // Shape covariance = Phi * B * Phi^T with B = diag(sv) cov diag(sv);
    // re-diagonalize B so the posterior satisfies the ShapeModel contract.
    const Eigen::MatrixXd b =
        sqrt_var.asDiagonal() * ((cov + cov.transpose()) * 0.5) * sqrt_var.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(b);
    if (eig.info() != Eigen::Success)
        throw NumericalError("posterior_model: covariance re-diagonalization failed");

    PosteriorModel post;
    post.faces = model.faces;
    post.vertex_count = model.vertex_count;
    post.landmark_vertices = model.landmark_vertices;
    post.mean = model.mean + model.modes * (sqrt_var.asDiagonal() * alpha);
    post.modes.resize(model.modes.rows(), m);
    post.variances.resize(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const Eigen::Index src = m - 1 - i; // descending order
        post.modes.col(i) = model.modes * eig.eigenvectors().col(src);
        post.variances(i) = std::max(eig.eigenvalues()(src), 1e-12);
    }
    // enforce non-increasing order despite the floor
    for (Eigen::Index i = 1; i < m; ++i)
        post.variances(i) = std::min(post.variances(i), post.variances(i - 1));
    return post;
}

TriMesh posterior_mean_shape(const PosteriorModel& posterior) {
    return sample_shape(posterior, Eigen::VectorXd::Zero(posterior.modes.cols()));
}

namespace {
constexpr char kMagic[9] = "SSMB0001"; // 8 chars + NUL

void append_doubles(std::string& out, const double* data, std::size_t count) {
    out.append(reinterpret_cast<const char*>(data), count * sizeof(double));
}
} // namespace

void save_model(const ShapeModel& model, const std::filesystem::path& path) {
    model.validate();
    nlohmann::ordered_json header;
    header["version"] = 1;
    header["vertex_count"] = model.vertex_count;
    header["mode_count"] = model.mode_count();
    header["face_count"] = model.faces.size();
    header["provenance"] = "femur-ssm";
    if (!model.landmark_vertices.empty()) {
        nlohmann::ordered_json lms = nlohmann::ordered_json::object();
        for (const auto& [name, idx] : model.landmark_vertices) lms[name] = idx;
        header["landmarks"] = lms;
    }
    const std::string head = header.dump();

    std::string out;
    out.append(kMagic, 8);
    const std::uint64_t hlen = head.size();
    out.append(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out += head;
    for (const Face& f : model.faces)
        out.append(reinterpret_cast<const char*>(f.data()), 3 * sizeof(std::int32_t));
    append_doubles(out, model.mean.data(), static_cast<std::size_t>(model.mean.size()));
    append_doubles(out, model.modes.data(), static_cast<std::size_t>(model.modes.size()));
    append_doubles(out, model.variances.data(), static_cast<std::size_t>(model.variances.size()));
    atomic_write_binary(path, out);
}

ShapeModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model file '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string buf = ss.str();

    auto need = [&](std::size_t pos, std::size_t bytes, const char* what) {
        if (pos + bytes > buf.size())
            throw FormatError(path.string() + ": truncated model file (" + what + ")");
    };
    need(0, 8, "magic");
    if (std::memcmp(buf.data(), kMagic, 8) != 0)
        throw FormatError(path.string() + ": not a model file or unsupported version");
    std::size_t pos = 8;
    need(pos, 8, "header length");
    std::uint64_t hlen;
    std::memcpy(&hlen, buf.data() + pos, 8);
    pos += 8;
    need(pos, hlen, "header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(buf.substr(pos, hlen));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(path.string() + ": bad model header: " + e.what());
    }
    pos += hlen;
    if (header.value("version", 0) != 1)
        throw FormatError(path.string() + ": unsupported model version");

    ShapeModel model;
    model.vertex_count = header.at("vertex_count").get<std::size_t>();
    const auto mode_count = header.at("mode_count").get<std::size_t>();
    const auto face_count = header.at("face_count").get<std::size_t>();
    if (header.contains("landmarks"))
        for (const auto& [name, idx] : header.at("landmarks").items())
            model.landmark_vertices.emplace_back(name, idx.get<std::int32_t>());

    need(pos, face_count * 12, "faces");
    model.faces.resize(face_count);
    std::memcpy(model.faces.data(), buf.data() + pos, face_count * 12);
    pos += face_count * 12;

    const std::size_t d = 3 * model.vertex_count;
    need(pos, d * 8, "mean");
    model.mean.resize(static_cast<Eigen::Index>(d));
    std::memcpy(model.mean.data(), buf.data() + pos, d * 8);
    pos += d * 8;
    need(pos, d * mode_count * 8, "modes");
    model.modes.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(mode_count));
    std::memcpy(model.modes.data(), buf.data() + pos, d * mode_count * 8);
    pos += d * mode_count * 8;
    need(pos, mode_count * 8, "variances");
    model.variances.resize(static_cast<Eigen::Index>(mode_count));
    std::memcpy(model.variances.data(), buf.data() + pos, mode_count * 8);

    model.validate();
    return model;
}

} // namespace femur
