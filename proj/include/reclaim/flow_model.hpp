#pragma once

#include <cstdint>
#include <optional>

#include <Eigen/Core>

#include "reclaim/graph.hpp"
#include "reclaim/random.hpp"
#include "reclaim/scm.hpp"

namespace reclaim {

enum class Activation { Tanh, Identity };

// Persistent power-iteration vectors for one weight matrix.
struct PowerIterationState {
    Eigen::VectorXd left;
    Eigen::VectorXd right;
};

/// Learned latent mechanism: a single hidden layer network whose i-th output only sees
/// the inputs selected by column i of the dependency mask, plus the mask logits.
///
///   pre(i)   = W1^T (M_{*,i} .* x) + b1          (h)
///   F_i(x)   = W2_{*,i}^T act(pre(i)) + b2_i
///
/// Gamma(j, i) is the logit of edge j -> i; its diagonal is pinned to -infinity.
struct ModelParams {
    int d = 0;
    int h = 0;
    Eigen::MatrixXd W1;   // d x h
    Eigen::VectorXd b1;   // h
    Eigen::MatrixXd W2;   // h x d
    Eigen::VectorXd b2;   // d
    Eigen::MatrixXd gamma;
    double lipschitz_target = 0.9;
    Eigen::VectorXd sigma_z;
    Activation activation = Activation::Tanh;
    PowerIterationState power1;
    PowerIterationState power2;

    /// Zero weights, Gamma off-diagonal 0, sigma_z = 1, hidden width h (0 means d).
    static ModelParams zeros(int d, int h = 0);
    /// Weights ~ N(0, init_std^2) followed by spectral normalisation.
    static ModelParams initialize(int d, std::uint64_t seed, double init_std = 0.1,
                                  double lipschitz_target = 0.9, int h = 0);

    void validate() const;

    /// Number of free parameters in pack()/unpack() order: W1, b1, W2, b2, Gamma off-diagonal.
    Eigen::Index parameter_count() const;
    Eigen::VectorXd pack() const;
    void unpack(const Eigen::VectorXd& flat);
};

/// Rescales W1 and W2 by min(1, sqrt(c) / sigma_max) each, so the layer product is <= c.
/// sigma_max comes from 5 power-iteration steps on persistent vectors (seeded from an SVD
/// the first time).
ModelParams spectral_normalize(ModelParams params);
void spectral_normalize_in_place(ModelParams& params);

struct MaskSample {
    Eigen::MatrixXd M;      // value used in the forward pass, zero diagonal
    Eigen::MatrixXd soft;   // relaxed sample; carries the gradient for hard masks
    double temperature = 1.0;
    bool hard = false;
};

/// Binary Gumbel-softmax sample sigmoid((Gamma + g1 - g0) / temperature) per off-diagonal
/// entry. `hard` thresholds at 0.5 with a straight-through gradient.
MaskSample sample_mask(const Eigen::MatrixXd& gamma, double temperature, bool hard, Rng& rng);
/// Same with the logistic noise g1 - g0 supplied (d x d), for frozen-randomness evaluations.
MaskSample mask_from_noise(const Eigen::MatrixXd& gamma, const Eigen::MatrixXd& noise,
                           double temperature, bool hard);
/// sigmoid(Gamma) with zero diagonal: the mean of the mask distribution.
MaskSample expected_mask(const Eigen::MatrixXd& gamma);

Eigen::VectorXd masked_forward(const ModelParams& params, const Eigen::MatrixXd& M,
                               const Eigen::VectorXd& x);

/// Jacobian of x -> U' F(x), where rows of intervened nodes (intervened(i) != 0) are zero.
Eigen::MatrixXd jacobian(const ModelParams& params, const Eigen::MatrixXd& M,
                         const Eigen::VectorXd& intervened, const Eigen::VectorXd& x);

double log_det_exact(const ModelParams& params, const Eigen::MatrixXd& M,
                     const Eigen::VectorXd& intervened, const Eigen::VectorXd& x);

struct LogDetConfig {
    double poisson_rate = 4.0;
    int min_terms = 1;
    int n_probes = 1;

    void validate() const;
};

/// P(N >= m) for N = min_terms + Poisson(rate).
double roulette_tail_probability(const LogDetConfig& cfg, int m);

/// A frozen draw of the series estimator: -sum_m coeffs[m-1] sum_k w_k^T J^m w_k.
struct SeriesPlan {
    Eigen::MatrixXd probes;   // d x K
    Eigen::VectorXd coeffs;   // one per term

    int terms() const noexcept { return static_cast<int>(coeffs.size()); }
};

/// Truncated power series, Hutchinson average over the given probe columns.
SeriesPlan truncated_series_plan(int n_terms, Eigen::MatrixXd probes);
/// Truncated series with exact traces (probes are the standard basis).
SeriesPlan exact_trace_series_plan(int d, int n_terms);
/// Russian-roulette draw: random cut-off, tail-reweighted terms, Rademacher probes.
SeriesPlan roulette_series_plan(int d, const LogDetConfig& cfg, Rng& rng);

Eigen::MatrixXd rademacher_probes(int d, int k, Rng& rng);

double log_det_series(const ModelParams& params, const Eigen::MatrixXd& M,
                      const Eigen::VectorXd& intervened, const Eigen::VectorXd& x,
                      const SeriesPlan& plan);
double log_det_series(const ModelParams& params, const Eigen::MatrixXd& M,
                      const Eigen::VectorXd& intervened, const Eigen::VectorXd& x, int n_terms,
                      int n_probes, Rng& rng);
double log_det_unbiased(const ModelParams& params, const Eigen::MatrixXd& M,
                        const Eigen::VectorXd& intervened, const Eigen::VectorXd& x,
                        const LogDetConfig& cfg, Rng& rng);

enum class LogDetMode { Exact, Unbiased };

/// Log-density of x under the intervened model: interventional Gaussian on targets,
/// N(0, sigma_z^2) on the residual z = x - U' F(x) elsewhere, plus log|det(I - U' J)|.
/// `rng` is required in Unbiased mode.
double latent_logpdf(const ModelParams& params, const Eigen::MatrixXd& M,
                     const InterventionRegime& regime, const Eigen::VectorXd& x,
                     LogDetMode mode = LogDetMode::Exact, const LogDetConfig& cfg = {},
                     Rng* rng = nullptr);

/// Gradient accumulator in the shapes of ModelParams, plus d L / d M.
struct ParamGradient {
    Eigen::MatrixXd W1, W2, M;
    Eigen::VectorXd b1, b2;

    explicit ParamGradient(const ModelParams& params);
    void set_zero();
    ParamGradient& operator+=(const ParamGradient& other);
    ParamGradient& operator*=(double s);
};

/// Scratch buffers for repeated evaluations; reuse one per thread.
class LatentEvaluator {
public:
    explicit LatentEvaluator(const ModelParams& params);

    /// Value of latent_logpdf with the log-det term given by `plan` (exact if empty).
    double value(const ModelParams& params, const Eigen::MatrixXd& M,
                 const InterventionRegime& regime, const Eigen::VectorXd& x,
                 const SeriesPlan* plan = nullptr);

    /// Value and gradient (added into grad, scaled by `weight`) w.r.t. the network
    /// weights and the mask entries. Particles x are constants.
    double value_and_gradient(const ModelParams& params, const Eigen::MatrixXd& M,
                              const InterventionRegime& regime, const Eigen::VectorXd& x,
                              const SeriesPlan* plan, double weight, ParamGradient& grad);

private:
    void forward(const ModelParams& params, const Eigen::MatrixXd& M, const Eigen::VectorXd& x);
    void build_jacobian(const ModelParams& params, const Eigen::MatrixXd& M,
                        const Eigen::VectorXd& intervened);
    double log_det_value(const SeriesPlan* plan);
    void log_det_gradient(const SeriesPlan* plan);

    Eigen::MatrixXd P_, pre_, H_, D_, E_, EW_, J_, G_, lu_work_, dE_, dPre_, dP_;
    Eigen::VectorXd F_, z_, g_, intervened_;
    Eigen::MatrixXd fwd_, bwd_;
};

/// Chain rule from d/dM to d/dGamma for a relaxed mask sample.
Eigen::MatrixXd mask_gradient_to_logits(const MaskSample& mask, const Eigen::MatrixXd& dM);

/// Flat gradient in ModelParams::pack() order from weight gradients and d/dGamma.
Eigen::VectorXd pack_gradient(const ModelParams& params, const ParamGradient& grad,
                              const Eigen::MatrixXd& dgamma);

/// Equilibrium of the learned model: x = U' F(x) + U' z + values (intervened coords clamped).
Eigen::VectorXd solve_model_fixed_point(const ModelParams& params, const Eigen::MatrixXd& M,
                                        const InterventionRegime& regime,
                                        const Eigen::VectorXd& z, const Eigen::VectorXd& values,
                                        FixedPointOptions options = {});

/// sigmoid(Gamma) with exact zero diagonal.
EdgeScoreMatrix edge_scores(const ModelParams& params);

double sigmoid(double v);

} // namespace reclaim
