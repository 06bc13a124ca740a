#include "reclaim/em.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

#include "reclaim/errors.hpp"

namespace reclaim {

namespace {

constexpr std::uint64_t kEStepTag = 0xE5ULL;
constexpr std::uint64_t kMStepTag = 0x35ULL;
constexpr std::uint64_t kQTag = 0x51ULL;
constexpr std::uint64_t kElboTag = 0xEB0ULL;

double penalty(const ModelParams& theta) {
    double acc = 0.0;
    for (int i = 0; i < theta.d; ++i)
        for (int j = 0; j < theta.d; ++j)
            if (i != j) acc += sigmoid(theta.gamma(i, j));
    return acc;
}

} // namespace

void EmConfig::validate() const {
    if (lambda < 0.0) throw ParameterError("lambda must be non-negative");
    if (!(learning_rate >= 0.0)) throw ParameterError("learning rate must be non-negative");
    if (em_rounds < 0 || m_steps_per_round < 0) throw ParameterError("round counts must be >= 0");
    if (batch_size < 1) throw ParameterError("batch size must be positive");
    if (!(S >= R && R >= 1)) throw ParameterError("SIR needs S >= R >= 1");
    if (!(temperature > 0.0)) throw ParameterError("temperature must be positive");
    if (!(convergence_tol >= 0.0)) throw ParameterError("convergence tolerance must be >= 0");
    if (elbo_samples < 0) throw ParameterError("elbo sample count must be >= 0");
    logdet.validate();
}

double ParticleCache::median_ess() const {
    if (ess.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::vector<double> sorted = ess;
    const auto mid = sorted.begin() + static_cast<long>(sorted.size() / 2);
    std::nth_element(sorted.begin(), mid, sorted.end());
    return *mid;
}

ParticleCache e_step(const ModelParams& theta, const MeasurementChannel& phi_hat,
                     const RegimeData& datasets, const InterventionFamily& family,
                     const EmConfig& cfg, int round) {
    if (datasets.size() != family.regimes.size())
        throw ParameterError("one data matrix per regime is required");
    const int d = theta.d;
    const MaskSample mask = expected_mask(theta.gamma);
    SirOptions sir{cfg.S, cfg.R};

    Eigen::Index total = 0;
    for (const auto& data : datasets) total += data.rows();

    ParticleCache cache;
    cache.xs.resize(total * cfg.R, d);
    cache.regime.reserve(total * cfg.R);
    cache.observation.reserve(total * cfg.R);
    cache.ess.reserve(total);
    Eigen::Index filled = 0;
    for (std::size_t k = 0; k < datasets.size(); ++k) {
        for (Eigen::Index l = 0; l < datasets[k].rows(); ++l) {
            Rng rng(derive_seed(cfg.seed, {kEStepTag, static_cast<std::uint64_t>(round), k,
                                           static_cast<std::uint64_t>(l)}));
            const Eigen::VectorXd y = datasets[k].row(l).transpose();
            try {
                const WeightedParticles wp =
                    sir_sample(y, theta, mask.M, phi_hat, family.regimes[k], sir, rng);
                cache.xs.middleRows(filled, cfg.R) = wp.resampled;
                for (int r = 0; r < cfg.R; ++r) {
                    cache.regime.push_back(static_cast<int>(k));
                    cache.observation.push_back(static_cast<int>(l));
                }
                filled += cfg.R;
                cache.ess.push_back(effective_sample_size(wp));
                cache.widened += wp.widened ? 1 : 0;
            } catch (const DegeneratePosteriorError& e) {
                std::cerr << "warning: skipping observation " << l << " of regime " << k << ": "
                          << e.what() << "\n";
                ++cache.skipped;
            }
        }
    }
    cache.xs.conservativeResize(filled, d);
    if (total > 0 && cache.skipped > cfg.max_skip_fraction * static_cast<double>(total))
        throw EStepError("E-step failed: " + std::to_string(cache.skipped) + " of " +
                         std::to_string(total) + " observations have degenerate posteriors");
    return cache;
}

double surrogate_q(const ModelParams& theta, const ParticleCache& cache,
                   const InterventionFamily& family, const Eigen::MatrixXd& M) {
    if (cache.size() == 0) return 0.0;
    LatentEvaluator eval(theta);
    double acc = 0.0;
    Eigen::VectorXd x(theta.d);
    for (int n = 0; n < cache.size(); ++n) {
        x = cache.xs.row(n).transpose();
        acc += eval.value(theta, M, family.regimes[cache.regime[n]], x);
    }
    return acc / cache.size();
}

double surrogate_q(const ModelParams& theta, const ParticleCache& cache,
                   const InterventionFamily& family, const EmConfig& cfg, std::uint64_t seed) {
    Rng rng(derive_seed(seed, {kQTag}));
    const MaskSample mask = sample_mask(theta.gamma, cfg.temperature, cfg.hard_mask_training, rng);
    return surrogate_q(theta, cache, family, mask.M);
}

double channel_term(const ParticleCache& cache, const MeasurementChannel& phi_hat,
                    const RegimeData& datasets) {
    if (cache.size() == 0) return 0.0;
    double acc = 0.0;
    for (int n = 0; n < cache.size(); ++n) {
        const Eigen::VectorXd y = datasets[cache.regime[n]].row(cache.observation[n]).transpose();
        acc += phi_hat.logpdf(y, cache.xs.row(n).transpose());
    }
    return acc / cache.size();
}

BatchDraw draw_batch(const ModelParams& theta, const ParticleCache& cache, const EmConfig& cfg,
                     Rng& rng) {
    if (cache.size() == 0) throw ParameterError("cannot draw a batch from an empty cache");
    BatchDraw draw;
    const int n = cache.size();
    if (n <= cfg.batch_size) {
        draw.particles.resize(n);
        for (int k = 0; k < n; ++k) draw.particles[k] = k;
    } else {
        std::uniform_int_distribution<int> pick(0, n - 1);
        draw.particles.resize(cfg.batch_size);
        for (auto& p : draw.particles) p = pick(rng);
    }
    draw.mask = sample_mask(theta.gamma, cfg.temperature, cfg.hard_mask_training, rng);
    if (cfg.train_logdet == LogDetMode::Unbiased) {
        draw.plans.reserve(draw.particles.size());
        for (std::size_t k = 0; k < draw.particles.size(); ++k)
            draw.plans.push_back(roulette_series_plan(theta.d, cfg.logdet, rng));
    }
    return draw;
}

ObjectiveValue batch_objective(const ModelParams& theta, const ParticleCache& cache,
                               const InterventionFamily& family, const BatchDraw& draw,
                               double lambda) {
    LatentEvaluator eval(theta);
    ParamGradient grad(theta);
    const double weight = 1.0 / static_cast<double>(draw.particles.size());
    double acc = 0.0;
    Eigen::VectorXd x(theta.d);
    for (std::size_t k = 0; k < draw.particles.size(); ++k) {
        const int n = draw.particles[k];
        x = cache.xs.row(n).transpose();
        const SeriesPlan* plan = draw.plans.empty() ? nullptr : &draw.plans[k];
        acc += eval.value_and_gradient(theta, draw.mask.M, family.regimes[cache.regime[n]], x,
                                       plan, weight, grad);
    }
    ObjectiveValue out;
    out.value = acc * weight - lambda * penalty(theta);
    Eigen::MatrixXd dgamma = mask_gradient_to_logits(draw.mask, grad.M);
    for (int i = 0; i < theta.d; ++i)
        for (int j = 0; j < theta.d; ++j)
            if (i != j) {
                const double s = sigmoid(theta.gamma(i, j));
                dgamma(i, j) -= lambda * s * (1.0 - s);
            }
    out.gradient = pack_gradient(theta, grad, dgamma);
    return out;
}

AdamState AdamState::fresh(const ModelParams& theta, double learning_rate) {
    AdamState s;
    s.m = Eigen::VectorXd::Zero(theta.parameter_count());
    s.v = Eigen::VectorXd::Zero(theta.parameter_count());
    s.learning_rate = learning_rate;
    return s;
}

MStepResult m_step(const ModelParams& theta_t, const ParticleCache& cache,
                   const InterventionFamily& family, const EmConfig& cfg, AdamState& adam,
                   int round) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    MStepResult res{theta_t, false, 0.0};
    if (cache.size() == 0 || cfg.m_steps_per_round == 0) return res;
    if (adam.m.size() != theta_t.parameter_count()) adam = AdamState::fresh(theta_t, adam.learning_rate);

    double objective_sum = 0.0;
    for (int step = 0; step < cfg.m_steps_per_round; ++step) {
        Rng rng(derive_seed(cfg.seed, {kMStepTag, static_cast<std::uint64_t>(round),
                                       static_cast<std::uint64_t>(step)}));
        const BatchDraw draw = draw_batch(res.theta, cache, cfg, rng);
        const ObjectiveValue obj = batch_objective(res.theta, cache, family, draw, cfg.lambda);
        if (!std::isfinite(obj.value) || !obj.gradient.allFinite()) {
            res.aborted = true;
            if (!adam.lr_halved) {
                adam.learning_rate *= 0.5;
                adam.lr_halved = true;
            }
            break;
        }
        objective_sum += obj.value;
        ++adam.step;
        adam.m = beta1 * adam.m + (1.0 - beta1) * obj.gradient;
        adam.v = beta2 * adam.v + (1.0 - beta2) * obj.gradient.cwiseAbs2();
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(adam.step));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(adam.step));
        Eigen::VectorXd flat = res.theta.pack();
        flat.array() += adam.learning_rate * (adam.m.array() / c1) /
                        ((adam.v.array() / c2).sqrt() + eps);
        res.theta.unpack(flat);
        spectral_normalize_in_place(res.theta);
        res.mean_objective = objective_sum / (step + 1);
    }
    return res;
}

ElboEstimate elbo_estimate(const ModelParams& theta, const MeasurementChannel& phi_hat,
                           const RegimeData& datasets, const InterventionFamily& family, int S,
                           std::uint64_t seed) {
    if (S < 1) throw ParameterError("ELBO estimate needs S >= 1");
    const MaskSample mask = expected_mask(theta.gamma);
    ElboEstimate out;
    double var_acc = 0.0;
    for (std::size_t k = 0; k < datasets.size(); ++k) {
        for (Eigen::Index l = 0; l < datasets[k].rows(); ++l) {
            Rng rng(derive_seed(seed, {kElboTag, k, static_cast<std::uint64_t>(l)}));
            const Eigen::VectorXd y = datasets[k].row(l).transpose();
            const Proposal proposal = Proposal::from_channel(phi_hat, y);
            const WeightedParticles wp =
                sir_sample(y, theta, mask.M, phi_hat, family.regimes[k], proposal, S, 1, rng);
            out.value += log_mean_exp(wp.log_w);
            // Delta method: Var(log mean w) ~ Var(w) / (S mean(w)^2).
            const double top = wp.log_w.maxCoeff();
            const Eigen::ArrayXd w = (wp.log_w.array() - top).exp();
            const double mean = w.mean();
            const double var = S > 1 ? (w - mean).square().sum() / (S - 1) : 0.0;
            var_acc += var / (S * mean * mean);
        }
    }
    out.std_error = std::sqrt(var_acc);
    return out;
}

MeasurementChannel estimate_channel(const RegimeData& datasets, const InterventionFamily& family,
                                    const ChannelSpec& spec, std::uint64_t seed) {
    if (spec.kind == ChannelKind::GaussianAdditive) {
        if (spec.known_sigma_sq) return MeasurementChannel::gaussian_additive(*spec.known_sigma_sq);
        return MeasurementChannel::gaussian_additive(estimate_gan_variances(datasets, family));
    }
    if (spec.known_sigma_sq) return MeasurementChannel::linear(spec.A, *spec.known_sigma_sq);
    if (!check_channel_identifiability(family, static_cast<int>(spec.A.cols())))
        throw IdentifiabilityError(
            "intervention family does not target every node; channel noise is not identifiable");
    if (spec.linear_method == LinearNoiseMethod::Pooled)
        return MeasurementChannel::linear(spec.A,
                                          estimate_linear_variances_pooled(datasets, family, spec.A));
    ProjectionSet proj =
        sample_projection_vectors(spec.A, derive_seed(seed, {0x7E0ULL}), spec.projection);
    return MeasurementChannel::linear(spec.A,
                                      estimate_linear_variances(datasets, family, spec.A, proj));
}

FitReport fit(const RegimeData& datasets, const InterventionFamily& family,
              const ChannelSpec& channel_spec, const EmConfig& cfg,
              const std::optional<FitState>& resume, const RoundCallback& on_round) {
    cfg.validate();
    if (datasets.size() != family.regimes.size())
        throw ParameterError("one data matrix per regime is required");
    const MeasurementChannel phi_hat = estimate_channel(datasets, family, channel_spec, cfg.seed);
    const int d = phi_hat.latent_dim();
    for (const auto& regime : family.regimes) regime.validate(d);

    FitState state;
    if (resume) {
        state = *resume;
        if (state.theta.d != d) throw ParameterError("checkpoint dimension does not match data");
    } else {
        state.theta = ModelParams::initialize(d, derive_seed(cfg.seed, {0x1A17ULL}), cfg.init_std,
                                              cfg.lipschitz_target);
        state.adam = AdamState::fresh(state.theta, cfg.learning_rate);
    }

    FitReport report;
    report.train_logdet = cfg.train_logdet == LogDetMode::Exact ? "exact" : "unbiased";
    double prev_q = state.trace.empty() ? std::numeric_limits<double>::quiet_NaN()
                                        : state.trace.back().q_value;
    while (!state.converged && state.rounds_completed < cfg.em_rounds) {
        const int round = state.rounds_completed;
        const ParticleCache cache = e_step(state.theta, phi_hat, datasets, family, cfg, round);
        state.skipped_observations += cache.skipped;
        state.widened_proposals += cache.widened;
        MStepResult step = m_step(state.theta, cache, family, cfg, state.adam, round);
        state.theta = std::move(step.theta);

        TraceRow row;
        row.round = round;
        row.q_value = surrogate_q(state.theta, cache, family, cfg,
                                  derive_seed(cfg.seed, {static_cast<std::uint64_t>(round)}));
        row.ess_median = cache.median_ess();
        row.elbo = cfg.elbo_samples > 0
                       ? elbo_estimate(state.theta, phi_hat, datasets, family, cfg.elbo_samples,
                                       derive_seed(cfg.seed, {kElboTag}))
                             .value
                       : std::numeric_limits<double>::quiet_NaN();
        state.trace.push_back(row);
        state.rounds_completed = round + 1;
        if (std::isfinite(prev_q) &&
            std::abs(row.q_value - prev_q) < cfg.convergence_tol * std::abs(row.q_value))
            state.converged = true;
        prev_q = row.q_value;
        if (on_round) on_round(state);
    }

    report.edge_scores = edge_scores(state.theta);
    report.theta = state.theta;
    report.phi_hat = phi_hat;
    report.trace = state.trace;
    report.converged = state.converged;
    report.skipped_observations = state.skipped_observations;
    report.widened_proposals = state.widened_proposals;
    report.state = std::move(state);
    return report;
}

} // namespace reclaim
