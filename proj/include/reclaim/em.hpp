#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "reclaim/flow_model.hpp"
#include "reclaim/measurement.hpp"
#include "reclaim/noise_estimation.hpp"
#include "reclaim/posterior.hpp"
#include "reclaim/scm.hpp"

namespace reclaim {

struct EmConfig {
    double lambda = 1e-3;
    double learning_rate = 1e-2;
    int em_rounds = 200;
    int m_steps_per_round = 50;
    int batch_size = 256;
    int S = 64;
    int R = 16;
    double temperature = 1.0;
    bool hard_mask_training = false;
    LogDetConfig logdet;
    LogDetMode train_logdet = LogDetMode::Unbiased;
    std::uint64_t seed = 0;
    double convergence_tol = 1e-4;
    double init_std = 0.1;
    double lipschitz_target = 0.9;
    /// Proposal count for the per-round ELBO estimate in the trace; 0 disables it.
    int elbo_samples = 0;
    /// E-step fails if more than this fraction of observations is degenerate.
    double max_skip_fraction = 0.05;

    void validate() const;
};

/// Resampled posterior particles, frozen for the duration of an M-step.
struct ParticleCache {
    Eigen::MatrixXd xs;               // N x d
    std::vector<int> regime;          // regime index per particle
    std::vector<int> observation;     // row within the regime's dataset
    std::vector<double> ess;          // per observation
    int skipped = 0;
    int widened = 0;

    int size() const noexcept { return static_cast<int>(xs.rows()); }
    double median_ess() const;
};

ParticleCache e_step(const ModelParams& theta, const MeasurementChannel& phi_hat,
                     const RegimeData& datasets, const InterventionFamily& family,
                     const EmConfig& cfg, int round);

/// Mean latent log-density of the cached particles under a given mask, exact log-det.
double surrogate_q(const ModelParams& theta, const ParticleCache& cache,
                   const InterventionFamily& family, const Eigen::MatrixXd& M);
/// Same with one relaxed Gumbel mask sample drawn from `seed`.
double surrogate_q(const ModelParams& theta, const ParticleCache& cache,
                   const InterventionFamily& family, const EmConfig& cfg, std::uint64_t seed);

/// Mean channel log-density of the cached particles; independent of theta.
double channel_term(const ParticleCache& cache, const MeasurementChannel& phi_hat,
                    const RegimeData& datasets);

/// Frozen randomness for one minibatch objective evaluation.
struct BatchDraw {
    std::vector<int> particles;
    MaskSample mask;
    std::vector<SeriesPlan> plans;   // empty for exact log-det
};

BatchDraw draw_batch(const ModelParams& theta, const ParticleCache& cache, const EmConfig& cfg,
                     Rng& rng);

struct ObjectiveValue {
    double value = 0.0;            // mean latent logpdf - lambda * sum sigmoid(Gamma)
    Eigen::VectorXd gradient;      // in ModelParams::pack() order
};

/// Penalised minibatch objective and its analytic gradient.
ObjectiveValue batch_objective(const ModelParams& theta, const ParticleCache& cache,
                               const InterventionFamily& family, const BatchDraw& draw,
                               double lambda);

struct AdamState {
    Eigen::VectorXd m, v;
    long long step = 0;
    double learning_rate = 1e-2;
    bool lr_halved = false;

    static AdamState fresh(const ModelParams& theta, double learning_rate);
};

struct MStepResult {
    ModelParams theta;
    bool aborted = false;   // non-finite objective hit; theta is the last finite iterate
    double mean_objective = 0.0;
};

MStepResult m_step(const ModelParams& theta_t, const ParticleCache& cache,
                   const InterventionFamily& family, const EmConfig& cfg, AdamState& adam,
                   int round);

struct ElboEstimate {
    double value = 0.0;
    double std_error = 0.0;
};

/// Importance estimate of sum_k sum_l log p(y | theta, phi_hat, I_k) from fresh proposals.
ElboEstimate elbo_estimate(const ModelParams& theta, const MeasurementChannel& phi_hat,
                           const RegimeData& datasets, const InterventionFamily& family, int S,
                           std::uint64_t seed);

enum class LinearNoiseMethod {
    Pooled,       // estimate_linear_variances_pooled
    Projection,   // sampled projection rows and unweighted NNLS
};

struct ChannelSpec {
    ChannelKind kind = ChannelKind::GaussianAdditive;
    Eigen::MatrixXd A;                              // linear channel only
    std::optional<Eigen::VectorXd> known_sigma_sq;  // skips noise estimation when set
    LinearNoiseMethod linear_method = LinearNoiseMethod::Pooled;
    ProjectionSamplerOptions projection;
};

/// Channel variances estimated from interventional data (or taken as known).
MeasurementChannel estimate_channel(const RegimeData& datasets, const InterventionFamily& family,
                                    const ChannelSpec& spec, std::uint64_t seed);

struct TraceRow {
    int round = 0;
    double q_value = 0.0;
    double elbo = 0.0;   // NaN when not tracked
    double ess_median = 0.0;
};

/// Everything needed to continue a fit after round `rounds_completed`.
struct FitState {
    ModelParams theta;
    AdamState adam;
    int rounds_completed = 0;
    bool converged = false;
    std::vector<TraceRow> trace;
    int skipped_observations = 0;
    int widened_proposals = 0;
};

struct FitReport {
    EdgeScoreMatrix edge_scores{Eigen::MatrixXd::Zero(1, 1)};
    ModelParams theta;
    MeasurementChannel phi_hat = MeasurementChannel::gaussian_additive(Eigen::VectorXd::Ones(1));
    std::vector<TraceRow> trace;
    bool converged = false;
    int skipped_observations = 0;
    int widened_proposals = 0;
    std::string train_logdet;
    FitState state;
};

using RoundCallback = std::function<void(const FitState&)>;

FitReport fit(const RegimeData& datasets, const InterventionFamily& family,
              const ChannelSpec& channel_spec, const EmConfig& cfg,
              const std::optional<FitState>& resume = std::nullopt,
              const RoundCallback& on_round = {});

} // namespace reclaim
