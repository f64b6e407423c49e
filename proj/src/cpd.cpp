#include "femur/cpd.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace femur {

void CpdParams::validate() const {
    if (beta <= 0.0) throw ArgumentError("CpdParams: beta must be positive");
    if (lambda <= 0.0) throw ArgumentError("CpdParams: lambda must be positive");
    if (outlier_weight < 0.0 || outlier_weight >= 1.0)
        throw ArgumentError("CpdParams: outlier weight must lie in [0, 1)");
    if (max_iterations < 1) throw ArgumentError("CpdParams: max_iterations must be positive");
    if (tolerance <= 0.0) throw ArgumentError("CpdParams: tolerance must be positive");
}

Correspondence cpd_nonrigid(const TriMesh& source, const TriMesh& target, const CpdParams& params,
                            std::uint64_t /*seed*/) {
    params.validate();
    if (source.vertices.empty() || target.vertices.empty())
        throw ArgumentError("cpd_nonrigid: empty point set");

    const auto m_count = static_cast<Eigen::Index>(source.vertex_count());
    const auto n_count = static_cast<Eigen::Index>(target.vertex_count());

    Eigen::MatrixXd y(m_count, 3), x(n_count, 3);
    for (Eigen::Index i = 0; i < m_count; ++i) y.row(i) = source.vertices[i];
    for (Eigen::Index i = 0; i < n_count; ++i) x.row(i) = target.vertices[i];

    // normalize: per-cloud centroids, one shared isotropic scale
    const Eigen::RowVector3d ym = y.colwise().mean();
    const Eigen::RowVector3d xm = x.colwise().mean();
    y.rowwise() -= ym;
    x.rowwise() -= xm;
    const double spread2 =
        (y.squaredNorm() + x.squaredNorm()) / static_cast<double>(m_count + n_count);
    const double scale = std::sqrt(std::max(spread2, 1e-300));
    y /= scale;
    x /= scale;

    // Gaussian kernel over source points
    Eigen::MatrixXd g(m_count, m_count);
    {
        const double inv2b2 = 1.0 / (2.0 * params.beta * params.beta);
        const Eigen::VectorXd ynorm = y.rowwise().squaredNorm();
        g.noalias() = -2.0 * y * y.transpose();
        g.colwise() += ynorm;
        g.rowwise() += ynorm.transpose();
        g = (-inv2b2 * g.array()).exp();
    }

    double sigma2;
    {
        const double sum_y2 = y.squaredNorm();
        const double sum_x2 = x.squaredNorm();
        const Eigen::RowVector3d sy = y.colwise().sum();
        const Eigen::RowVector3d sx = x.colwise().sum();
        sigma2 = (static_cast<double>(n_count) * sum_y2 + static_cast<double>(m_count) * sum_x2 -
                  2.0 * sy.dot(sx)) /
                 (3.0 * static_cast<double>(m_count) * static_cast<double>(n_count));
    }

    Eigen::MatrixXd w_field = Eigen::MatrixXd::Zero(m_count, 3);
    Eigen::MatrixXd t = y; // current deformed source

    Correspondence result;
    result.deformed.faces = source.faces;
    const double w = params.outlier_weight;
    double prev_objective = std::numeric_limits<double>::infinity();
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    constexpr Eigen::Index kBlock = 4096;

    for (int iter = 0; iter < params.max_iterations; ++iter) {
        // E-step, blockwise over target points
        const double inv2s2 = 1.0 / (2.0 * sigma2);
        const double c = w > 0.0
                             ? std::pow(kTwoPi * sigma2, 1.5) * w * static_cast<double>(m_count) /
                                   ((1.0 - w) * static_cast<double>(n_count))
                             : 0.0;
        Eigen::VectorXd p1 = Eigen::VectorXd::Zero(m_count);
        Eigen::VectorXd pt1 = Eigen::VectorXd::Zero(n_count);
        Eigen::MatrixXd px = Eigen::MatrixXd::Zero(m_count, 3);
        double log_sum = 0.0;
        const Eigen::VectorXd tnorm = t.rowwise().squaredNorm();
        for (Eigen::Index b0 = 0; b0 < n_count; b0 += kBlock) {
            const Eigen::Index bs = std::min(kBlock, n_count - b0);
            const auto xb = x.middleRows(b0, bs);
            Eigen::MatrixXd k(m_count, bs);
            k.noalias() = -2.0 * t * xb.transpose();
            k.colwise() += tnorm;
            k.rowwise() += xb.rowwise().squaredNorm().transpose();
            k = (-inv2s2 * k.array()).exp();
            Eigen::RowVectorXd denom = k.colwise().sum();
            denom.array() += c;
            denom = denom.cwiseMax(1e-300);
            log_sum += denom.array().log().sum();
            pt1.segment(b0, bs) = 1.0 - c / denom.array();
            const Eigen::VectorXd invd = denom.transpose().cwiseInverse();
            p1.noalias() += k * invd;
            px.noalias() += k * invd.asDiagonal() * xb;
        }

        const double reg = 0.5 * params.lambda * (w_field.transpose() * g * w_field).trace();
        const double objective =
            -log_sum -
            static_cast<double>(n_count) *
                std::log((1.0 - w) / (static_cast<double>(m_count) * std::pow(kTwoPi * sigma2, 1.5))) +
            reg;
        result.objective_history.push_back(objective);
        if (objective > prev_objective + 1e-8 * (1.0 + std::abs(prev_objective)))
            result.objective_monotone = false;
        const bool done =
            std::isfinite(prev_objective) &&
            std::abs(prev_objective - objective) < params.tolerance * (1.0 + std::abs(objective));
        prev_objective = objective;
        result.iterations = iter + 1;
        if (done) {
            result.converged = true;
            break;
        }

        // M-step: (diag(P1) G + lambda sigma2 I) W = PX - diag(P1) Y
        Eigen::MatrixXd lhs = p1.asDiagonal() * g;
        lhs.diagonal().array() += params.lambda * sigma2;
        const Eigen::MatrixXd rhs = px - p1.asDiagonal() * y;
        w_field = lhs.partialPivLu().solve(rhs);
        if (!w_field.allFinite())
            throw NumericalError("cpd_nonrigid: singular system in M-step at iteration " +
                                 std::to_string(iter));
        t = y + g * w_field;

        const double np = p1.sum();
        if (np <= 1e-300)
            throw NumericalError("cpd_nonrigid: all points classified as outliers at iteration " +
                                 std::to_string(iter));
        const double xpx = (x.array().square().rowwise().sum() * pt1.array()).sum();
        const double trpxt = (px.array() * t.array()).sum();
        const double tpt = (t.array().square().rowwise().sum() * p1.array()).sum();
        sigma2 = std::max((xpx - 2.0 * trpxt + tpt) / (3.0 * np), 1e-10);
    }

    // denormalize into the target frame
    result.deformed.vertices.resize(m_count);
    for (Eigen::Index i = 0; i < m_count; ++i)
        result.deformed.vertices[i] = (t.row(i) * scale + xm).transpose();

    const PointIndex target_index(target.vertices);
    double sum2 = 0.0;
    for (const Vec3& v : result.deformed.vertices) {
        const double d = target_index.nearest_distance(v);
        sum2 += d * d;
    }
    result.fitting_rmse = std::sqrt(sum2 / static_cast<double>(m_count));
    return result;
}

std::vector<std::pair<std::int32_t, Vec3>> extract_landmark_pairs(
    const Correspondence& fitted, const TriMesh& target, const VertexRegion& picked,
    const std::vector<std::int32_t>* target_subset) {
    const auto m = static_cast<std::int32_t>(fitted.deformed.vertex_count());
    for (std::int32_t i : picked.indices)
        if (i < 0 || i >= m)
            throw ValidationError("picked index " + std::to_string(i) +
                                  " out of range for fitted mesh");
    const PointIndex index = target_subset ? PointIndex(target.vertices, *target_subset)
                                           : PointIndex(target.vertices);
    std::vector<std::pair<std::int32_t, Vec3>> pairs;
    pairs.reserve(picked.size());
    for (std::int32_t i : picked.indices) {
        const std::int32_t tv = index.nearest(fitted.deformed.vertices[i]);
        pairs.emplace_back(i, target.vertices[tv]);
    }
    return pairs;
}

} // namespace femur
