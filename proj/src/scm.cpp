#include "reclaim/scm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include <Eigen/LU>
#include <Eigen/SVD>

#include "reclaim/errors.hpp"
#include "reclaim/random.hpp"

namespace reclaim {

void InterventionRegime::validate(int d) const {
    if (!(sigma_I_sq > 0.0)) throw ParameterError("interventional variance must be positive");
    std::set<int> seen;
    for (int t : targets) {
        if (t < 0 || t >= d) throw ParameterError("intervention target out of range");
        if (!seen.insert(t).second) throw ParameterError("duplicate intervention target");
    }
}

bool InterventionRegime::targets_node(int i) const {
    return std::find(targets.begin(), targets.end(), i) != targets.end();
}

Eigen::VectorXd InterventionRegime::intervened_mask(int d) const {
    Eigen::VectorXd u = Eigen::VectorXd::Zero(d);
    for (int t : targets) u[t] = 1.0;
    return u;
}

InterventionFamily InterventionFamily::single_node(int d, bool include_observational,
                                                   double sigma_I_sq) {
    InterventionFamily family;
    if (include_observational) family.regimes.push_back({{}, sigma_I_sq, 0.0});
    for (int i = 0; i < d; ++i) family.regimes.push_back({{i}, sigma_I_sq, 0.0});
    return family;
}

void GroundTruthScm::validate() const {
    const int d = size();
    if (W.rows() != d || W.cols() != d) throw ParameterError("W must be d x d");
    if (sigma_z.size() != d) throw ParameterError("sigma_z must have d entries");
    if (beta < 0.0 || beta > 1.0) throw ParameterError("beta must lie in [0, 1]");
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            if (W(i, j) != 0.0 && !graph.has_edge(i, j))
                throw ParameterError("W has support outside the graph");
}

double spectral_norm(const Eigen::MatrixXd& W) {
    if (W.size() == 0) return 0.0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(W);
    return svd.singularValues()(0);
}

Eigen::MatrixXd rescale_to_contractive(const Eigen::MatrixXd& W, double target_lipschitz) {
    if (!(target_lipschitz > 0.0 && target_lipschitz < 1.0))
        throw ParameterError("target Lipschitz constant must lie in (0, 1)");
    const double norm = spectral_norm(W);
    if (norm <= target_lipschitz) return W;
    return W * (target_lipschitz / norm);
}

GroundTruthScm sample_benchmark_scm(const DirectedGraph& graph, double beta, std::uint64_t seed,
                                    double target_lipschitz, double sigma_z) {
    const int d = graph.size();
    Rng rng(derive_seed(seed, {0x5C4DULL}));
    std::uniform_real_distribution<double> magnitude(0.2, 0.9);
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(d, d);
    for (auto [i, j] : graph.edges()) {
        const double m = magnitude(rng);
        W(i, j) = rademacher(rng) * m;
    }
    GroundTruthScm scm{graph, rescale_to_contractive(W, target_lipschitz), beta,
                       Eigen::VectorXd::Constant(d, sigma_z)};
    scm.validate();
    return scm;
}

Eigen::VectorXd mechanism(const GroundTruthScm& scm, const Eigen::VectorXd& x) {
    const Eigen::VectorXd pre = scm.W.transpose() * x;
    return (1.0 - scm.beta) * pre + scm.beta * pre.array().tanh().matrix();
}

Eigen::VectorXd solve_fixed_point(const GroundTruthScm& scm, const Eigen::VectorXd& z,
                                  const InterventionRegime& regime,
                                  const Eigen::VectorXd& values, FixedPointOptions options) {
    const int d = scm.size();
    if (z.size() != d || values.size() != d) throw ParameterError("solve_fixed_point: size mismatch");
    if (!(options.tol > 0.0)) throw ParameterError("tolerance must be positive");
    const Eigen::VectorXd clamped = regime.intervened_mask(d);
    const Eigen::MatrixXd Wt = scm.W.transpose();
    const double beta = scm.beta;

    Eigen::VectorXd x = z, next(d), pre(d);
    for (int i = 0; i < d; ++i)
        if (clamped[i] != 0.0) x[i] = values[i];
    // Once the residual is below tol the answer is accepted; the remaining budget is spent
    // polishing it, since the distance to the true fixed point can exceed the residual.
    double residual = 0.0;
    bool converged = false;
    for (int it = 0; it < options.max_iter; ++it) {
        pre.noalias() = Wt * x;
        residual = 0.0;
        for (int i = 0; i < d; ++i) {
            next[i] = clamped[i] != 0.0
                          ? values[i]
                          : (1.0 - beta) * pre[i] + beta * std::tanh(pre[i]) + z[i];
            residual = std::max(residual, std::abs(next[i] - x[i]));
        }
        if (std::isnan(next.sum())) residual = std::numeric_limits<double>::quiet_NaN();
        x.swap(next);
        if (!std::isfinite(residual)) break;
        if (residual <= options.tol) converged = true;
        if (residual <= 1e-3 * options.tol) break;
    }
    if (converged && std::isfinite(residual)) return x;
    std::ostringstream msg;
    msg << "fixed-point iteration did not converge in " << options.max_iter
        << " iterations (residual " << residual << ")";
    throw ConvergenceError(msg.str(), residual);
}

Eigen::MatrixXd sample_latents(const GroundTruthScm& scm, const InterventionRegime& regime,
                               int n, std::uint64_t seed) {
    const int d = scm.size();
    if (n < 0) throw ParameterError("sample count must be non-negative");
    regime.validate(d);
    Eigen::MatrixXd out(n, d);
    const double sd_I = std::sqrt(regime.sigma_I_sq);
    for (int r = 0; r < n; ++r) {
        StreamRng rng(derive_seed(seed, {static_cast<std::uint64_t>(r)}));
        std::normal_distribution<double> nd(0.0, 1.0);
        Eigen::VectorXd z(d), values = Eigen::VectorXd::Zero(d);
        for (int i = 0; i < d; ++i) z[i] = scm.sigma_z[i] * nd(rng);
        for (int t : regime.targets) values[t] = regime.mean + sd_I * nd(rng);
        out.row(r) = solve_fixed_point(scm, z, regime, values).transpose();
    }
    return out;
}

double linear_latent_logpdf_oracle(const Eigen::MatrixXd& W, const Eigen::VectorXd& sigma_z,
                                   const InterventionRegime& regime, const Eigen::VectorXd& x) {
    const int d = static_cast<int>(W.rows());
    const Eigen::VectorXd u = regime.intervened_mask(d);
    const double log2pi = std::log(2.0 * std::numbers::pi);

    // Rows of W^T for intervened nodes are severed.
    Eigen::MatrixXd WtKept = W.transpose();
    for (int i = 0; i < d; ++i)
        if (u[i] != 0.0) WtKept.row(i).setZero();
    const Eigen::VectorXd residual = x - WtKept * x;

    double lp = 0.0;
    for (int i = 0; i < d; ++i) {
        if (u[i] != 0.0) {
            const double dev = x[i] - regime.mean;
            lp += -0.5 * (log2pi + std::log(regime.sigma_I_sq)) - 0.5 * dev * dev / regime.sigma_I_sq;
        } else {
            const double var = sigma_z[i] * sigma_z[i];
            lp += -0.5 * (log2pi + std::log(var)) - 0.5 * residual[i] * residual[i] / var;
        }
    }
    const Eigen::MatrixXd forward = Eigen::MatrixXd::Identity(d, d) - WtKept;
    lp += std::log(std::abs(forward.determinant()));
    return lp;
}

} // namespace reclaim
