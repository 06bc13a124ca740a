#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "reclaim/flow_model.hpp"
#include "reclaim/measurement.hpp"
#include "reclaim/scm.hpp"

namespace reclaim {

struct WeightedParticles {
    Eigen::MatrixXd xs;          // S x d proposals
    Eigen::VectorXd log_w;       // unnormalised log weights
    Eigen::VectorXd norm_w;      // normalised, sums to 1
    std::vector<int> indices;    // resampled proposal indices
    Eigen::MatrixXd resampled;   // R x d
    bool widened = false;        // proposal covariance was doubled after a degenerate first pass
};

/// Diagonal Gaussian proposal q(x | y).
struct Proposal {
    Eigen::VectorXd mean;
    Eigen::VectorXd var;

    static Proposal from_channel(const MeasurementChannel& channel, const Eigen::VectorXd& y);
    double logpdf(const Eigen::VectorXd& x) const;
};

struct SirOptions {
    int S = 64;
    int R = 16;
    /// ESS below this triggers one retry with doubled proposal covariance.
    double min_ess = 2.0;
};

/// Sampling importance resampling from p(x | y) under the model (mask M) and channel.
/// Log-weights are latent_logpdf + channel logpdf - proposal logpdf, with the exact
/// log-determinant. Throws DegeneratePosteriorError if no weight is finite.
WeightedParticles sir_sample(const Eigen::VectorXd& y, const ModelParams& params,
                             const Eigen::MatrixXd& M, const MeasurementChannel& channel,
                             const InterventionRegime& regime, const SirOptions& options,
                             Rng& rng);

/// Same, with an explicit proposal and no retry.
WeightedParticles sir_sample(const Eigen::VectorXd& y, const ModelParams& params,
                             const Eigen::MatrixXd& M, const MeasurementChannel& channel,
                             const InterventionRegime& regime, const Proposal& proposal, int S,
                             int R, Rng& rng);

double effective_sample_size(const WeightedParticles& particles);

/// log(mean(exp(log_w))) computed stably.
double log_mean_exp(const Eigen::VectorXd& log_w);

} // namespace reclaim
