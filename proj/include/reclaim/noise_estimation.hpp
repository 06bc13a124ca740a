#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "reclaim/scm.hpp"

namespace reclaim {

/// Per-regime observation matrices, rows are samples; aligned with family.regimes.
using RegimeData = std::vector<Eigen::MatrixXd>;

inline constexpr double kVarianceFloor = 1e-6;

/// Every node is targeted by at least one regime.
bool check_channel_identifiability(const InterventionFamily& family, int d);

/// sigma_i^2 = Var(Y_i) - sigma_I^2 in a regime that clamps node i, averaged over covering
/// regimes and floored at kVarianceFloor.
Eigen::VectorXd estimate_gan_variances(const RegimeData& datasets, const InterventionFamily& family);

/// Orthonormal basis (p x r) of the null space of A_{-i}^T, A with column i removed.
Eigen::MatrixXd null_space_basis(const Eigen::MatrixXd& A, int i);

/// Projection rows used to separate channel noise in the linear system.
struct ProjectionSet {
    Eigen::MatrixXd directions;     // m x p, unit-norm projection vectors t
    Eigen::MatrixXd T2;             // m x p, rows t (.) t
    Eigen::VectorXd b;              // m, filled by estimate_linear_variances
    std::vector<int> source_node;   // node i isolated by each row

    int rows() const noexcept { return static_cast<int>(T2.rows()); }
};

struct ProjectionSamplerOptions {
    int m = 0;                // target row count; 0 means 2p
    double eps_sig = 0.1;     // minimum |a_i^T t| after normalisation
    double delta = 0.05;      // reject if cosine to an accepted row exceeds 1 - delta
};

/// Rejection sampler for projection vectors. Stops once m rows are collected and T2 has
/// full column rank; nodes whose null space cannot yield new diverse rows are retired early.
/// Throws SamplingError (with the achieved rank) after 10^4 * m draws.
ProjectionSet sample_projection_vectors(const Eigen::MatrixXd& A, std::uint64_t seed,
                                        ProjectionSamplerOptions options = {});

int numerical_rank(const Eigen::MatrixXd& M, double rel_tol = 1e-10);

struct NnlsResult {
    Eigen::VectorXd x;
    double kkt_residual = 0.0;
    int iterations = 0;
};

/// min_{x >= 0} ||M x - b||^2 by accelerated projected gradient, finished by a
/// free-set solve once the active set settles.
NnlsResult nnls_projected_gradient(const Eigen::MatrixXd& M, const Eigen::VectorXd& b,
                                   double kkt_tol = 1e-8, int max_iter = 200000);

/// Noise variances of the linear channel. Fills proj.b.
Eigen::VectorXd estimate_linear_variances(const RegimeData& datasets,
                                          const InterventionFamily& family,
                                          const Eigen::MatrixXd& A, ProjectionSet& proj);

/// Noise variances of the linear channel from every entry of the null-space-projected
/// covariance of each clamped regime. The clamped node's empirical variance is a nuisance
/// unknown anchored at sigma_I^2 by its sampling distribution; rows are weighted by their
/// approximate standard errors.
Eigen::VectorXd estimate_linear_variances_pooled(const RegimeData& datasets,
                                                 const InterventionFamily& family,
                                                 const Eigen::MatrixXd& A);

double sample_variance(const Eigen::VectorXd& v);

} // namespace reclaim
