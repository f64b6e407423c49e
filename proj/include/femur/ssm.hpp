#pragma once

#include <filesystem>

#include "femur/mesh.hpp"

namespace femur {

// PCA shape model over a fixed triangulation: mean (3N), orthonormal modes
// (3N x M) and per-mode variances (mm^2, non-increasing). Covariance divisor
// is n (the probabilistic convention), not n-1.
struct ShapeModel {
    std::vector<Face> faces;
    std::size_t vertex_count = 0;
    Eigen::VectorXd mean;       // 3N
    Eigen::MatrixXd modes;      // 3N x M, orthonormal columns
    Eigen::VectorXd variances;  // M, > 0, non-increasing
    // Optional: landmark name -> model vertex index, carried from the
    // reference mesh so reconstruction can locate the fovea and notch.
    std::vector<std::pair<std::string, std::int32_t>> landmark_vertices;

    std::size_t mode_count() const { return static_cast<std::size_t>(modes.cols()); }
    void validate() const;
    std::int32_t landmark_vertex(const std::string& name) const; // throws if absent
};

// PosteriorModel has the same contract; variances may be near zero
// (floored at 1e-12).
using PosteriorModel = ShapeModel;

// Sparse observations driving posterior conditioning: model vertex index ->
// observed position, with isotropic noise sigma (mm).
struct DeformationField {
    std::vector<std::pair<std::int32_t, Vec3>> observations;
    double noise_sigma = 1.0;

    void validate(const ShapeModel& model) const;
};

// Mean + eigenmodes of the sample covariance of the stacked vertex vectors,
// computed through the cohort-size-dimension (Gram) trick. Modes with
// variance below 1e-10 x the largest are discarded.
ShapeModel build_ssm(const std::vector<TriMesh>& cohort);

// vertices = mean + sum_i c_i sqrt(var_i) mode_i; coefficients are in units
// of standard deviations.
TriMesh sample_shape(const ShapeModel& model, const Eigen::VectorXd& coefficients);

// Least-squares coefficients (standard-deviation units) of a shape sharing
// the model topology; optionally reports the reconstruction residual RMSE.
Eigen::VectorXd project_shape(const ShapeModel& model, const TriMesh& shape,
                              double* residual_rmse = nullptr);

// Gaussian conditioning on the observed vertex positions. An empty field
// returns the prior unchanged.
PosteriorModel posterior_model(const ShapeModel& model, const DeformationField& field);

TriMesh posterior_mean_shape(const PosteriorModel& posterior);

// Model file: magic + JSON header + binary little-endian payload; lossless
// round trip. See README for the byte layout.
void save_model(const ShapeModel& model, const std::filesystem::path& path);
ShapeModel load_model(const std::filesystem::path& path);

} // namespace femur
