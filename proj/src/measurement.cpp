#include "reclaim/measurement.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/SVD>

#include "reclaim/errors.hpp"

namespace reclaim {

namespace {

void check_variances(const Eigen::VectorXd& sigma_sq) {
    if (sigma_sq.size() == 0) throw ParameterError("channel needs at least one variance");
    for (Eigen::Index j = 0; j < sigma_sq.size(); ++j)
        if (!(sigma_sq[j] > 0.0) || !std::isfinite(sigma_sq[j]))
            throw ParameterError("channel variances must be positive and finite");
}

Eigen::VectorXd log_normalizers(const Eigen::VectorXd& sigma_sq) {
    const double log2pi = std::log(2.0 * std::numbers::pi);
    return (-0.5 * (log2pi + sigma_sq.array().log())).matrix();
}

} // namespace

MeasurementChannel MeasurementChannel::gaussian_additive(Eigen::VectorXd sigma_sq) {
    check_variances(sigma_sq);
    MeasurementChannel ch;
    ch.kind_ = ChannelKind::GaussianAdditive;
    ch.latent_dim_ = static_cast<int>(sigma_sq.size());
    ch.A_ = Eigen::MatrixXd::Identity(ch.latent_dim_, ch.latent_dim_);
    ch.log_norm_ = log_normalizers(sigma_sq);
    ch.sigma_sq_ = std::move(sigma_sq);
    return ch;
}

MeasurementChannel MeasurementChannel::linear(Eigen::MatrixXd A, Eigen::VectorXd sigma_sq) {
    check_variances(sigma_sq);
    if (A.rows() != sigma_sq.size()) throw ParameterError("A must have one row per variance");
    if (A.cols() < 1 || A.rows() < A.cols()) throw ParameterError("linear channel needs p >= d >= 1");
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
    if (!(svd.singularValues()(A.cols() - 1) > 1e-10))
        throw RankError("measurement matrix is not full column rank");
    MeasurementChannel ch;
    ch.kind_ = ChannelKind::Linear;
    ch.latent_dim_ = static_cast<int>(A.cols());
    ch.qr_ = std::make_shared<const Eigen::ColPivHouseholderQR<Eigen::MatrixXd>>(A);
    ch.A_ = std::move(A);
    ch.log_norm_ = log_normalizers(sigma_sq);
    ch.sigma_sq_ = std::move(sigma_sq);
    return ch;
}

MeasurementChannel MeasurementChannel::with_sigma_sq(Eigen::VectorXd sigma_sq) const {
    if (sigma_sq.size() != sigma_sq_.size()) throw ParameterError("variance vector size mismatch");
    check_variances(sigma_sq);
    MeasurementChannel ch = *this;
    ch.log_norm_ = log_normalizers(sigma_sq);
    ch.sigma_sq_ = std::move(sigma_sq);
    return ch;
}

Eigen::VectorXd MeasurementChannel::measure(const Eigen::VectorXd& x, Rng& rng) const {
    if (x.size() != latent_dim_) throw ParameterError("measure: latent dimension mismatch");
    std::normal_distribution<double> nd(0.0, 1.0);
    Eigen::VectorXd y = kind_ == ChannelKind::Linear ? Eigen::VectorXd(A_ * x) : x;
    for (Eigen::Index j = 0; j < y.size(); ++j) y[j] += std::sqrt(sigma_sq_[j]) * nd(rng);
    return y;
}

Eigen::MatrixXd MeasurementChannel::measure_rows(const Eigen::MatrixXd& latents,
                                                 std::uint64_t seed) const {
    if (latents.cols() != latent_dim_) throw ParameterError("measure: latent dimension mismatch");
    Eigen::MatrixXd out = kind_ == ChannelKind::Linear ? Eigen::MatrixXd(latents * A_.transpose())
                                                       : latents;
    const Eigen::VectorXd sd = sigma_sq_.cwiseSqrt();
    std::normal_distribution<double> nd(0.0, 1.0);
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        StreamRng rng(derive_seed(seed, {static_cast<std::uint64_t>(r)}));
        for (Eigen::Index j = 0; j < out.cols(); ++j) out(r, j) += sd[j] * nd(rng);
        nd.reset();
    }
    return out;
}

double MeasurementChannel::logpdf(const Eigen::VectorXd& y, const Eigen::VectorXd& x) const {
    if (y.size() != observed_dim() || x.size() != latent_dim_)
        throw ParameterError("channel logpdf: dimension mismatch");
    double lp = 0.0;
    if (kind_ == ChannelKind::GaussianAdditive) {
        for (Eigen::Index j = 0; j < y.size(); ++j) {
            const double r = y[j] - x[j];
            lp += log_norm_[j] - 0.5 * r * r / sigma_sq_[j];
        }
    } else {
        for (Eigen::Index j = 0; j < y.size(); ++j) {
            const double r = y[j] - A_.row(j).dot(x);
            lp += log_norm_[j] - 0.5 * r * r / sigma_sq_[j];
        }
    }
    return lp;
}

Eigen::VectorXd MeasurementChannel::proposal_mean(const Eigen::VectorXd& y) const {
    if (y.size() != observed_dim()) throw ParameterError("proposal_mean: dimension mismatch");
    if (kind_ == ChannelKind::GaussianAdditive) return y;
    return qr_->solve(y);
}

Eigen::VectorXd MeasurementChannel::proposal_variance() const {
    if (kind_ == ChannelKind::GaussianAdditive) return sigma_sq_;
    return Eigen::VectorXd::Constant(latent_dim_, sigma_sq_.mean());
}

} // namespace reclaim
