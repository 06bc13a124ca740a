#include "reclaim/posterior.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "reclaim/errors.hpp"

namespace reclaim {

Proposal Proposal::from_channel(const MeasurementChannel& channel, const Eigen::VectorXd& y) {
    return {channel.proposal_mean(y), channel.proposal_variance()};
}

double Proposal::logpdf(const Eigen::VectorXd& x) const {
    static const double log2pi = std::log(2.0 * std::numbers::pi);
    double lp = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double r = x[i] - mean[i];
        lp += -0.5 * (log2pi + std::log(var[i])) - 0.5 * r * r / var[i];
    }
    return lp;
}

double log_mean_exp(const Eigen::VectorXd& log_w) {
    const double top = log_w.maxCoeff();
    if (!std::isfinite(top)) return top;
    return top + std::log((log_w.array() - top).exp().mean());
}

double effective_sample_size(const WeightedParticles& particles) {
    return 1.0 / particles.norm_w.squaredNorm();
}

WeightedParticles sir_sample(const Eigen::VectorXd& y, const ModelParams& params,
                             const Eigen::MatrixXd& M, const MeasurementChannel& channel,
                             const InterventionRegime& regime, const Proposal& proposal, int S,
                             int R, Rng& rng) {
    if (!(S >= R && R >= 1)) throw ParameterError("SIR needs S >= R >= 1");
    const int d = params.d;
    if (proposal.mean.size() != d || proposal.var.size() != d)
        throw ParameterError("proposal dimension mismatch");

    WeightedParticles out;
    out.xs.resize(S, d);
    out.log_w.resize(S);
    LatentEvaluator eval(params);
    std::normal_distribution<double> nd(0.0, 1.0);
    Eigen::VectorXd x(d);
    for (int s = 0; s < S; ++s) {
        for (int i = 0; i < d; ++i) x[i] = proposal.mean[i] + std::sqrt(proposal.var[i]) * nd(rng);
        out.xs.row(s) = x.transpose();
        double lw;
        try {
            lw = eval.value(params, M, regime, x) + channel.logpdf(y, x) - proposal.logpdf(x);
        } catch (const NumericError&) {
            lw = -std::numeric_limits<double>::infinity();
        }
        out.log_w[s] = std::isnan(lw) ? -std::numeric_limits<double>::infinity() : lw;
    }
    const double top = out.log_w.maxCoeff();
    if (!std::isfinite(top)) throw DegeneratePosteriorError("all importance weights vanish");
    out.norm_w = (out.log_w.array() - top).exp().matrix();
    out.norm_w /= out.norm_w.sum();

    std::discrete_distribution<int> pick(out.norm_w.data(), out.norm_w.data() + S);
    out.indices.resize(R);
    out.resampled.resize(R, d);
    for (int r = 0; r < R; ++r) {
        out.indices[r] = pick(rng);
        out.resampled.row(r) = out.xs.row(out.indices[r]);
    }
    return out;
}

WeightedParticles sir_sample(const Eigen::VectorXd& y, const ModelParams& params,
                             const Eigen::MatrixXd& M, const MeasurementChannel& channel,
                             const InterventionRegime& regime, const SirOptions& options,
                             Rng& rng) {
    Proposal proposal = Proposal::from_channel(channel, y);
    WeightedParticles first = sir_sample(y, params, M, channel, regime, proposal, options.S,
                                         options.R, rng);
    if (effective_sample_size(first) >= options.min_ess) return first;
    proposal.var *= 2.0;
    WeightedParticles second;
    try {
        second = sir_sample(y, params, M, channel, regime, proposal, options.S, options.R, rng);
    } catch (const DegeneratePosteriorError&) {
        return first;
    }
    second.widened = true;
    return effective_sample_size(second) > effective_sample_size(first) ? second : first;
}

} // namespace reclaim
