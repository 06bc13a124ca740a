#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "reclaim/graph.hpp"

namespace reclaim {

/// Surgical intervention: targets are clamped to draws from N(mean, sigma_I_sq).
struct InterventionRegime {
    std::vector<int> targets;
    double sigma_I_sq = 1.0;
    double mean = 0.0;

    void validate(int d) const;
    bool targets_node(int i) const;
    /// 1.0 at intervened coordinates, 0.0 elsewhere.
    Eigen::VectorXd intervened_mask(int d) const;
};

struct InterventionFamily {
    std::vector<InterventionRegime> regimes;

    /// Observational regime (optional) followed by one single-node regime per node.
    static InterventionFamily single_node(int d, bool include_observational = true,
                                          double sigma_I_sq = 1.0);
};

/// Ground-truth generator x = (1 - beta) W^T x + beta tanh(W^T x) + z.
/// W(i, j) != 0 only when the graph has edge i -> j.
struct GroundTruthScm {
    DirectedGraph graph;
    Eigen::MatrixXd W;
    double beta = 1.0;
    Eigen::VectorXd sigma_z;

    int size() const noexcept { return graph.size(); }
    void validate() const;
};

Eigen::MatrixXd rescale_to_contractive(const Eigen::MatrixXd& W, double target_lipschitz);

double spectral_norm(const Eigen::MatrixXd& W);

/// Benchmark weights: |W_ij| ~ U[0.2, 0.9] with random sign on every edge, then
/// rescaled to spectral norm <= target_lipschitz.
GroundTruthScm sample_benchmark_scm(const DirectedGraph& graph, double beta, std::uint64_t seed,
                                    double target_lipschitz = 0.9, double sigma_z = 1.0);

Eigen::VectorXd mechanism(const GroundTruthScm& scm, const Eigen::VectorXd& x);

struct FixedPointOptions {
    double tol = 1e-8;
    int max_iter = 1000;
};

/// Equilibrium of x = U' f(x) + U' z + c, where U' keeps non-intervened coordinates and
/// intervened coordinates are held at `values`. Iterates from x0 = z.
/// Throws ConvergenceError if the inf-norm residual stays above tol.
Eigen::VectorXd solve_fixed_point(const GroundTruthScm& scm, const Eigen::VectorXd& z,
                                  const InterventionRegime& regime,
                                  const Eigen::VectorXd& values,
                                  FixedPointOptions options = {});

/// n x d latent samples under the regime; row r uses its own derived stream.
Eigen::MatrixXd sample_latents(const GroundTruthScm& scm, const InterventionRegime& regime,
                               int n, std::uint64_t seed);

/// Exact log-density of x for the linear (beta = 0) SCM under an intervention.
double linear_latent_logpdf_oracle(const Eigen::MatrixXd& W, const Eigen::VectorXd& sigma_z,
                                   const InterventionRegime& regime, const Eigen::VectorXd& x);

} // namespace reclaim
