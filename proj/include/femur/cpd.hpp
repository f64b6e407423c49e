#pragma once

#include <cstdint>
#include <vector>

#include "femur/mesh.hpp"

namespace femur {

// Nonrigid CPD hyperparameters. beta/lambda are expressed in the normalized
// (zero-mean, unit-spread) frame so they transfer across bone sizes.
struct CpdParams {
    double beta = 2.0;        // Gaussian kernel width
    double lambda = 3.0;      // displacement-field regularization weight
    double outlier_weight = 0.1; // w in [0, 1)
    int max_iterations = 150;
    double tolerance = 1e-6;  // relative objective change

    void validate() const;
};

// Deformed source vertices (source topology unchanged) plus fit diagnostics.
struct Correspondence {
    TriMesh deformed;            // source faces, displaced vertices
    double fitting_rmse = 0.0;   // mean nearest-vertex RMSE to the target
    int iterations = 0;
    bool converged = false;
    bool objective_monotone = true;
    std::vector<double> objective_history; // penalized negative log-likelihood per iteration
};

// Nonrigid coherent point drift: source vertices act as GMM centroids fitted
// to the target vertices by EM; the displacement field is smoothed by a
// Gaussian kernel. Deterministic: the algorithm itself draws nothing, the
// seed only feeds potential callers' bookkeeping and is echoed nowhere.
Correspondence cpd_nonrigid(const TriMesh& source, const TriMesh& target, const CpdParams& params,
                            std::uint64_t seed = 0);

// For each picked vertex of the fitted source, pair its (reference) index
// with the position of the nearest target vertex. When target_subset is
// non-null the nearest-vertex search is restricted to those indices.
std::vector<std::pair<std::int32_t, Vec3>> extract_landmark_pairs(
    const Correspondence& fitted, const TriMesh& target, const VertexRegion& picked,
    const std::vector<std::int32_t>* target_subset = nullptr);

} // namespace femur
