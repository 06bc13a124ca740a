#include "reclaim/flow_model.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include <Eigen/LU>
#include <Eigen/SVD>

#include "reclaim/errors.hpp"

namespace reclaim {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr int kPowerIterations = 5;

void pin_diagonal(Eigen::MatrixXd& gamma) {
    for (Eigen::Index i = 0; i < gamma.rows(); ++i) gamma(i, i) = kNegInf;
}

double power_iterate(const Eigen::MatrixXd& W, PowerIterationState& state) {
    if (W.size() == 0) return 0.0;
    if (state.left.size() != W.rows() || state.right.size() != W.cols()) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(W, Eigen::ComputeThinU | Eigen::ComputeThinV);
        state.left = svd.matrixU().col(0);
        state.right = svd.matrixV().col(0);
    }
    for (int it = 0; it < kPowerIterations; ++it) {
        Eigen::VectorXd right = W.transpose() * state.left;
        const double rn = right.norm();
        if (!(rn > 0.0)) return 0.0;
        state.right = right / rn;
        Eigen::VectorXd left = W * state.right;
        const double ln = left.norm();
        if (!(ln > 0.0)) return 0.0;
        state.left = left / ln;
    }
    return state.left.dot(W * state.right);
}

} // namespace

double sigmoid(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

// ---------------------------------------------------------------------------------------
// ModelParams

ModelParams ModelParams::zeros(int d, int h) {
    if (d < 1) throw ParameterError("model needs d >= 1");
    ModelParams p;
    p.d = d;
    p.h = h > 0 ? h : d;
    p.W1 = Eigen::MatrixXd::Zero(d, p.h);
    p.b1 = Eigen::VectorXd::Zero(p.h);
    p.W2 = Eigen::MatrixXd::Zero(p.h, d);
    p.b2 = Eigen::VectorXd::Zero(d);
    p.gamma = Eigen::MatrixXd::Zero(d, d);
    pin_diagonal(p.gamma);
    p.sigma_z = Eigen::VectorXd::Ones(d);
    return p;
}

ModelParams ModelParams::initialize(int d, std::uint64_t seed, double init_std,
                                    double lipschitz_target, int h) {
    ModelParams p = zeros(d, h);
    p.lipschitz_target = lipschitz_target;
    Rng rng(derive_seed(seed, {0x1417ULL}));
    std::normal_distribution<double> nd(0.0, init_std);
    for (Eigen::Index k = 0; k < p.W1.size(); ++k) p.W1.data()[k] = nd(rng);
    for (Eigen::Index k = 0; k < p.W2.size(); ++k) p.W2.data()[k] = nd(rng);
    spectral_normalize_in_place(p);
    return p;
}

void ModelParams::validate() const {
    if (d < 1 || h < 1) throw ParameterError("model dimensions must be positive");
    if (W1.rows() != d || W1.cols() != h || W2.rows() != h || W2.cols() != d ||
        b1.size() != h || b2.size() != d || gamma.rows() != d || gamma.cols() != d ||
        sigma_z.size() != d)
        throw ParameterError("model parameter shapes are inconsistent");
    if (!(lipschitz_target > 0.0 && lipschitz_target < 1.0))
        throw ParameterError("Lipschitz target must lie in (0, 1)");
    for (int i = 0; i < d; ++i)
        if (gamma(i, i) != kNegInf) throw ParameterError("Gamma diagonal must be -infinity");
}

Eigen::Index ModelParams::parameter_count() const {
    return W1.size() + b1.size() + W2.size() + b2.size() + static_cast<Eigen::Index>(d) * (d - 1);
}

Eigen::VectorXd ModelParams::pack() const {
    Eigen::VectorXd flat(parameter_count());
    Eigen::Index k = 0;
    for (Eigen::Index a = 0; a < W1.size(); ++a) flat[k++] = W1.data()[a];
    for (Eigen::Index a = 0; a < b1.size(); ++a) flat[k++] = b1[a];
    for (Eigen::Index a = 0; a < W2.size(); ++a) flat[k++] = W2.data()[a];
    for (Eigen::Index a = 0; a < b2.size(); ++a) flat[k++] = b2[a];
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            if (i != j) flat[k++] = gamma(i, j);
    return flat;
}

void ModelParams::unpack(const Eigen::VectorXd& flat) {
    if (flat.size() != parameter_count()) throw ParameterError("flat parameter size mismatch");
    Eigen::Index k = 0;
    for (Eigen::Index a = 0; a < W1.size(); ++a) W1.data()[a] = flat[k++];
    for (Eigen::Index a = 0; a < b1.size(); ++a) b1[a] = flat[k++];
    for (Eigen::Index a = 0; a < W2.size(); ++a) W2.data()[a] = flat[k++];
    for (Eigen::Index a = 0; a < b2.size(); ++a) b2[a] = flat[k++];
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            if (i != j) gamma(i, j) = flat[k++];
}

void spectral_normalize_in_place(ModelParams& params) {
    const double per_layer = std::sqrt(params.lipschitz_target);
    const double s1 = power_iterate(params.W1, params.power1);
    if (s1 > per_layer) params.W1 *= per_layer / s1;
    const double s2 = power_iterate(params.W2, params.power2);
    if (s2 > per_layer) params.W2 *= per_layer / s2;
}

ModelParams spectral_normalize(ModelParams params) {
    spectral_normalize_in_place(params);
    return params;
}

// ---------------------------------------------------------------------------------------
// Masks

MaskSample mask_from_noise(const Eigen::MatrixXd& gamma, const Eigen::MatrixXd& noise,
                           double temperature, bool hard) {
    if (!(temperature > 0.0)) throw ParameterError("temperature must be positive");
    const Eigen::Index d = gamma.rows();
    MaskSample s;
    s.temperature = temperature;
    s.hard = hard;
    s.soft = Eigen::MatrixXd::Zero(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j)
            if (i != j) s.soft(i, j) = sigmoid((gamma(i, j) + noise(i, j)) / temperature);
    if (hard)
        s.M = (s.soft.array() > 0.5).cast<double>().matrix();
    else
        s.M = s.soft;
    return s;
}

MaskSample sample_mask(const Eigen::MatrixXd& gamma, double temperature, bool hard, Rng& rng) {
    const Eigen::Index d = gamma.rows();
    std::uniform_real_distribution<double> unif(std::numeric_limits<double>::min(), 1.0);
    auto gumbel = [&] { return -std::log(-std::log(unif(rng))); };
    Eigen::MatrixXd noise = Eigen::MatrixXd::Zero(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j)
            if (i != j) noise(i, j) = gumbel() - gumbel();
    return mask_from_noise(gamma, noise, temperature, hard);
}

MaskSample expected_mask(const Eigen::MatrixXd& gamma) {
    return mask_from_noise(gamma, Eigen::MatrixXd::Zero(gamma.rows(), gamma.cols()), 1.0, false);
}

Eigen::MatrixXd mask_gradient_to_logits(const MaskSample& mask, const Eigen::MatrixXd& dM) {
    Eigen::MatrixXd dgamma =
        (dM.array() * mask.soft.array() * (1.0 - mask.soft.array()) / mask.temperature).matrix();
    dgamma.diagonal().setZero();
    return dgamma;
}

// ---------------------------------------------------------------------------------------
// Log-det plans

void LogDetConfig::validate() const {
    if (!(poisson_rate > 0.0) || min_terms < 1 || n_probes < 1)
        throw ParameterError("log-det configuration values must be positive");
}

double roulette_tail_probability(const LogDetConfig& cfg, int m) {
    const int k = m - cfg.min_terms;  // need Poisson >= k
    if (k <= 0) return 1.0;
    const double rate = cfg.poisson_rate;
    // Lower tail is summed for small k, the upper tail directly once it is the smaller side.
    if (k <= rate + 1.0) {
        double pmf = std::exp(-rate), cdf = 0.0;
        for (int j = 0; j < k; ++j) {
            cdf += pmf;
            pmf *= rate / (j + 1);
        }
        return std::max(1.0 - cdf, 0.0);
    }
    double log_pmf = -rate + k * std::log(rate) - std::lgamma(k + 1.0);
    double tail = 0.0;
    for (int j = k; j < k + 2000; ++j) {
        const double term = std::exp(log_pmf);
        tail += term;
        if (term < tail * 1e-17) break;
        log_pmf += std::log(rate) - std::log(j + 1.0);
    }
    return tail;
}

Eigen::MatrixXd rademacher_probes(int d, int k, Rng& rng) {
    Eigen::MatrixXd w(d, k);
    for (Eigen::Index a = 0; a < w.size(); ++a) w.data()[a] = rademacher(rng);
    return w;
}

SeriesPlan truncated_series_plan(int n_terms, Eigen::MatrixXd probes) {
    if (n_terms < 1) throw ParameterError("series needs at least one term");
    if (probes.cols() < 1) throw ParameterError("series needs at least one probe");
    SeriesPlan plan;
    plan.coeffs.resize(n_terms);
    const double scale = 1.0 / static_cast<double>(probes.cols());
    for (int m = 1; m <= n_terms; ++m) plan.coeffs[m - 1] = scale / m;
    plan.probes = std::move(probes);
    return plan;
}

SeriesPlan exact_trace_series_plan(int d, int n_terms) {
    SeriesPlan plan = truncated_series_plan(n_terms, Eigen::MatrixXd::Identity(d, d));
    plan.coeffs *= static_cast<double>(d);  // sum of e_i^T J^m e_i, not the average
    return plan;
}

SeriesPlan roulette_series_plan(int d, const LogDetConfig& cfg, Rng& rng) {
    cfg.validate();
    std::poisson_distribution<int> pois(cfg.poisson_rate);
    const int n = cfg.min_terms + pois(rng);
    SeriesPlan plan;
    plan.probes = rademacher_probes(d, cfg.n_probes, rng);
    plan.coeffs.resize(n);
    const double scale = 1.0 / cfg.n_probes;
    for (int m = 1; m <= n; ++m)
        plan.coeffs[m - 1] = scale / (m * roulette_tail_probability(cfg, m));
    return plan;
}

// ---------------------------------------------------------------------------------------
// Evaluator

ParamGradient::ParamGradient(const ModelParams& params)
    : W1(Eigen::MatrixXd::Zero(params.d, params.h)),
      W2(Eigen::MatrixXd::Zero(params.h, params.d)),
      M(Eigen::MatrixXd::Zero(params.d, params.d)),
      b1(Eigen::VectorXd::Zero(params.h)),
      b2(Eigen::VectorXd::Zero(params.d)) {}

void ParamGradient::set_zero() {
    W1.setZero();
    W2.setZero();
    M.setZero();
    b1.setZero();
    b2.setZero();
}

ParamGradient& ParamGradient::operator+=(const ParamGradient& o) {
    W1 += o.W1;
    W2 += o.W2;
    M += o.M;
    b1 += o.b1;
    b2 += o.b2;
    return *this;
}

ParamGradient& ParamGradient::operator*=(double s) {
    W1 *= s;
    W2 *= s;
    M *= s;
    b1 *= s;
    b2 *= s;
    return *this;
}

LatentEvaluator::LatentEvaluator(const ModelParams& params) {
    const int d = params.d, h = params.h;
    P_.resize(d, d);
    pre_.resize(d, h);
    H_.resize(d, h);
    D_.resize(d, h);
    E_.resize(d, h);
    EW_.resize(d, d);
    J_.resize(d, d);
    G_.resize(d, d);
    lu_work_.resize(d, d);
    dE_.resize(d, h);
    dPre_.resize(d, h);
    dP_.resize(d, d);
    F_.resize(d);
    z_.resize(d);
    g_.resize(d);
}

void LatentEvaluator::forward(const ModelParams& params, const Eigen::MatrixXd& M,
                              const Eigen::VectorXd& x) {
    const int d = params.d;
    if (x.size() != d || M.rows() != d || M.cols() != d)
        throw ParameterError("latent evaluation: dimension mismatch");
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) P_(i, j) = M(j, i) * x[j];
    pre_.noalias() = P_ * params.W1;
    pre_.rowwise() += params.b1.transpose();
    if (params.activation == Activation::Tanh) {
        H_ = pre_.array().tanh().matrix();
        D_ = (1.0 - H_.array().square()).matrix();
    } else {
        H_ = pre_;
        D_.setOnes();
    }
    for (int i = 0; i < d; ++i) F_[i] = H_.row(i).dot(params.W2.col(i)) + params.b2[i];
}

void LatentEvaluator::build_jacobian(const ModelParams& params, const Eigen::MatrixXd& M,
                                     const Eigen::VectorXd& intervened) {
    const int d = params.d;
    E_ = (D_.array() * params.W2.transpose().array()).matrix();
    EW_.noalias() = E_ * params.W1.transpose();
    for (int i = 0; i < d; ++i) {
        if (intervened[i] != 0.0) {
            J_.row(i).setZero();
            continue;
        }
        for (int j = 0; j < d; ++j) J_(i, j) = M(j, i) * EW_(i, j);
    }
}

double LatentEvaluator::log_det_value(const SeriesPlan* plan) {
    const Eigen::Index d = J_.rows();
    if (plan == nullptr) {
        lu_work_ = Eigen::MatrixXd::Identity(d, d) - J_;
        Eigen::PartialPivLU<Eigen::Ref<Eigen::MatrixXd>> lu(lu_work_);
        double acc = 0.0;
        for (Eigen::Index i = 0; i < d; ++i) {
            const double u = std::abs(lu_work_(i, i));
            if (!(u > 0.0)) throw NumericError("I - J is singular");
            acc += std::log(u);
        }
        return acc;
    }
    double acc = 0.0;
    Eigen::VectorXd v(d), next(d);
    for (Eigen::Index k = 0; k < plan->probes.cols(); ++k) {
        const auto w = plan->probes.col(k);
        v = w;
        for (int m = 0; m < plan->terms(); ++m) {
            next.noalias() = J_ * v;
            v.swap(next);
            acc += plan->coeffs[m] * w.dot(v);
        }
    }
    return -acc;
}

void LatentEvaluator::log_det_gradient(const SeriesPlan* plan) {
    const Eigen::Index d = J_.rows();
    if (plan == nullptr) {
        lu_work_ = Eigen::MatrixXd::Identity(d, d) - J_;
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(lu_work_);
        G_ = -lu.inverse().transpose();
        return;
    }
    G_.setZero();
    const int n = plan->terms();
    fwd_.resize(d, n);
    bwd_.resize(d, n);
    Eigen::VectorXd acc(d);
    for (Eigen::Index k = 0; k < plan->probes.cols(); ++k) {
        fwd_.col(0) = plan->probes.col(k);
        bwd_.col(0) = plan->probes.col(k);
        for (int j = 1; j < n; ++j) {
            fwd_.col(j).noalias() = J_ * fwd_.col(j - 1);
            bwd_.col(j).noalias() = J_.transpose() * bwd_.col(j - 1);
        }
        // d/dJ of w^T J^m w is sum_{a+b=m-1} (J^T)^a w (J^b w)^T.
        for (int a = 0; a < n; ++a) {
            acc.setZero();
            for (int b = 0; a + b < n; ++b) acc += plan->coeffs[a + b] * fwd_.col(b);
            G_.noalias() -= bwd_.col(a) * acc.transpose();
        }
    }
}

double LatentEvaluator::value(const ModelParams& params, const Eigen::MatrixXd& M,
                              const InterventionRegime& regime, const Eigen::VectorXd& x,
                              const SeriesPlan* plan) {
    const int d = params.d;
    intervened_ = regime.intervened_mask(d);
    forward(params, M, x);
    build_jacobian(params, M, intervened_);
    static const double log2pi = std::log(2.0 * std::numbers::pi);
    double lp = 0.0;
    for (int i = 0; i < d; ++i) {
        if (intervened_[i] != 0.0) {
            const double dev = x[i] - regime.mean;
            lp += -0.5 * (log2pi + std::log(regime.sigma_I_sq)) - 0.5 * dev * dev / regime.sigma_I_sq;
        } else {
            const double var = params.sigma_z[i] * params.sigma_z[i];
            const double zi = x[i] - F_[i];
            z_[i] = zi;
            lp += -0.5 * (log2pi + std::log(var)) - 0.5 * zi * zi / var;
        }
    }
    return lp + log_det_value(plan);
}

double LatentEvaluator::value_and_gradient(const ModelParams& params, const Eigen::MatrixXd& M,
                                           const InterventionRegime& regime,
                                           const Eigen::VectorXd& x, const SeriesPlan* plan,
                                           double weight, ParamGradient& grad) {
    const double lp = value(params, M, regime, x, plan);
    const int d = params.d;
    const bool tanh_act = params.activation == Activation::Tanh;

    for (int i = 0; i < d; ++i)
        g_[i] = intervened_[i] != 0.0 ? 0.0 : z_[i] / (params.sigma_z[i] * params.sigma_z[i]);
    log_det_gradient(plan);
    for (int i = 0; i < d; ++i)
        if (intervened_[i] != 0.0) G_.row(i).setZero();

    // F_i = H(i,:) . W2(:,i) + b2_i
    for (int i = 0; i < d; ++i) {
        const double gi = weight * g_[i];
        grad.W2.col(i) += gi * H_.row(i).transpose();
        grad.b2[i] += gi;
        dPre_.row(i) = g_[i] * params.W2.col(i).transpose();  // dL/dH for now
    }
    // J(i,j) = M(j,i) EW(i,j),  EW = E W1^T,  E = D .* W2^T
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            grad.M(j, i) += weight * G_(i, j) * EW_(i, j);
            dP_(i, j) = G_(i, j) * M(j, i);  // G .* M^T
        }
    dE_.noalias() = dP_ * params.W1;
    grad.W1.noalias() += weight * (dP_.transpose() * E_);
    grad.W2 += weight * (dE_.array() * D_.array()).matrix().transpose();
    if (tanh_act) {
        // dD = dE .* W2^T, D = 1 - H^2
        dPre_.array() += dE_.array() * params.W2.transpose().array() * (-2.0 * H_.array());
        dPre_.array() *= D_.array();
    }
    grad.b1 += weight * dPre_.colwise().sum().transpose();
    grad.W1.noalias() += weight * (P_.transpose() * dPre_);
    dP_.noalias() = dPre_ * params.W1.transpose();
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) grad.M(j, i) += weight * dP_(i, j) * x[j];
    return lp;
}

// ---------------------------------------------------------------------------------------
// Free functions

Eigen::VectorXd masked_forward(const ModelParams& params, const Eigen::MatrixXd& M,
                               const Eigen::VectorXd& x) {
    const int d = params.d;
    if (x.size() != d || M.rows() != d || M.cols() != d)
        throw ParameterError("masked_forward: dimension mismatch");
    Eigen::VectorXd out(d);
    for (int i = 0; i < d; ++i) {
        const Eigen::VectorXd input = M.col(i).cwiseProduct(x);
        Eigen::VectorXd hidden = params.W1.transpose() * input + params.b1;
        if (params.activation == Activation::Tanh) hidden = hidden.array().tanh().matrix();
        out[i] = params.W2.col(i).dot(hidden) + params.b2[i];
    }
    return out;
}

Eigen::MatrixXd jacobian(const ModelParams& params, const Eigen::MatrixXd& M,
                         const Eigen::VectorXd& intervened, const Eigen::VectorXd& x) {
    const int d = params.d;
    if (intervened.size() != d) throw ParameterError("jacobian: mask size mismatch");
    Eigen::MatrixXd J(d, d);
    for (int i = 0; i < d; ++i) {
        if (intervened[i] != 0.0) {
            J.row(i).setZero();
            continue;
        }
        const Eigen::VectorXd input = M.col(i).cwiseProduct(x);
        const Eigen::VectorXd pre = params.W1.transpose() * input + params.b1;
        Eigen::VectorXd slope = Eigen::VectorXd::Ones(params.h);
        if (params.activation == Activation::Tanh)
            slope = (1.0 - pre.array().tanh().square()).matrix();
        const Eigen::VectorXd through = params.W1 * slope.cwiseProduct(params.W2.col(i));
        J.row(i) = M.col(i).cwiseProduct(through).transpose();
    }
    return J;
}

double log_det_exact(const ModelParams& params, const Eigen::MatrixXd& M,
                     const Eigen::VectorXd& intervened, const Eigen::VectorXd& x) {
    const Eigen::MatrixXd J = jacobian(params, M, intervened, x);
    const Eigen::Index d = J.rows();
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(Eigen::MatrixXd::Identity(d, d) - J);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
        const double u = std::abs(lu.matrixLU()(i, i));
        if (!(u > 0.0)) throw NumericError("I - J is singular");
        acc += std::log(u);
    }
    return acc;
}

double log_det_series(const ModelParams& params, const Eigen::MatrixXd& M,
                      const Eigen::VectorXd& intervened, const Eigen::VectorXd& x,
                      const SeriesPlan& plan) {
    const Eigen::MatrixXd J = jacobian(params, M, intervened, x);
    double acc = 0.0;
    for (Eigen::Index k = 0; k < plan.probes.cols(); ++k) {
        const Eigen::VectorXd w = plan.probes.col(k);
        Eigen::VectorXd v = w;
        for (int m = 0; m < plan.terms(); ++m) {
            v = J * v;
            acc += plan.coeffs[m] * w.dot(v);
        }
    }
    return -acc;
}

double log_det_series(const ModelParams& params, const Eigen::MatrixXd& M,
                      const Eigen::VectorXd& intervened, const Eigen::VectorXd& x, int n_terms,
                      int n_probes, Rng& rng) {
    return log_det_series(params, M, intervened, x,
                          truncated_series_plan(n_terms, rademacher_probes(params.d, n_probes, rng)));
}

double log_det_unbiased(const ModelParams& params, const Eigen::MatrixXd& M,
                        const Eigen::VectorXd& intervened, const Eigen::VectorXd& x,
                        const LogDetConfig& cfg, Rng& rng) {
    return log_det_series(params, M, intervened, x, roulette_series_plan(params.d, cfg, rng));
}

double latent_logpdf(const ModelParams& params, const Eigen::MatrixXd& M,
                     const InterventionRegime& regime, const Eigen::VectorXd& x, LogDetMode mode,
                     const LogDetConfig& cfg, Rng* rng) {
    LatentEvaluator eval(params);
    if (mode == LogDetMode::Exact) return eval.value(params, M, regime, x, nullptr);
    if (rng == nullptr) throw ParameterError("unbiased log-det needs a random generator");
    const SeriesPlan plan = roulette_series_plan(params.d, cfg, *rng);
    return eval.value(params, M, regime, x, &plan);
}

Eigen::VectorXd pack_gradient(const ModelParams& params, const ParamGradient& grad,
                              const Eigen::MatrixXd& dgamma) {
    Eigen::VectorXd flat(params.parameter_count());
    Eigen::Index k = 0;
    for (Eigen::Index a = 0; a < grad.W1.size(); ++a) flat[k++] = grad.W1.data()[a];
    for (Eigen::Index a = 0; a < grad.b1.size(); ++a) flat[k++] = grad.b1[a];
    for (Eigen::Index a = 0; a < grad.W2.size(); ++a) flat[k++] = grad.W2.data()[a];
    for (Eigen::Index a = 0; a < grad.b2.size(); ++a) flat[k++] = grad.b2[a];
    for (int i = 0; i < params.d; ++i)
        for (int j = 0; j < params.d; ++j)
            if (i != j) flat[k++] = dgamma(i, j);
    return flat;
}

Eigen::VectorXd solve_model_fixed_point(const ModelParams& params, const Eigen::MatrixXd& M,
                                        const InterventionRegime& regime,
                                        const Eigen::VectorXd& z, const Eigen::VectorXd& values,
                                        FixedPointOptions options) {
    const int d = params.d;
    const Eigen::VectorXd clamped = regime.intervened_mask(d);
    Eigen::VectorXd x = z;
    for (int i = 0; i < d; ++i)
        if (clamped[i] != 0.0) x[i] = values[i];
    double residual = 0.0;
    for (int it = 0; it < options.max_iter; ++it) {
        Eigen::VectorXd next = masked_forward(params, M, x) + z;
        for (int i = 0; i < d; ++i)
            if (clamped[i] != 0.0) next[i] = values[i];
        residual = (next - x).lpNorm<Eigen::Infinity>();
        x = std::move(next);
        if (residual <= options.tol) return x;
        if (!std::isfinite(residual)) break;
    }
    std::ostringstream msg;
    msg << "model fixed-point iteration did not converge (residual " << residual << ")";
    throw ConvergenceError(msg.str(), residual);
}

EdgeScoreMatrix edge_scores(const ModelParams& params) {
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(params.d, params.d);
    for (int i = 0; i < params.d; ++i)
        for (int j = 0; j < params.d; ++j)
            if (i != j) s(i, j) = sigmoid(params.gamma(i, j));
    return EdgeScoreMatrix(std::move(s));
}

} // namespace reclaim
