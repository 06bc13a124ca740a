#pragma once

#include <memory>

#include <Eigen/Core>
#include <Eigen/QR>

#include "reclaim/random.hpp"

namespace reclaim {

enum class ChannelKind { GaussianAdditive, Linear };

/// Measurement channel y | x ~ N(x, D) (additive) or N(A x, D) (linear), D diagonal.
/// Immutable after construction.
class MeasurementChannel {
public:
    static MeasurementChannel gaussian_additive(Eigen::VectorXd sigma_sq);
    /// Rejects A unless p >= d and its smallest singular value exceeds 1e-10.
    static MeasurementChannel linear(Eigen::MatrixXd A, Eigen::VectorXd sigma_sq);

    ChannelKind kind() const noexcept { return kind_; }
    int latent_dim() const noexcept { return latent_dim_; }
    int observed_dim() const noexcept { return static_cast<int>(sigma_sq_.size()); }
    const Eigen::VectorXd& sigma_sq() const noexcept { return sigma_sq_; }
    /// Measurement matrix; identity for the additive channel.
    const Eigen::MatrixXd& matrix() const noexcept { return A_; }

    /// Same channel with different noise variances.
    MeasurementChannel with_sigma_sq(Eigen::VectorXd sigma_sq) const;

    Eigen::VectorXd measure(const Eigen::VectorXd& x, Rng& rng) const;
    Eigen::MatrixXd measure_rows(const Eigen::MatrixXd& latents, std::uint64_t seed) const;

    double logpdf(const Eigen::VectorXd& y, const Eigen::VectorXd& x) const;

    /// y for the additive channel, (A^T A)^{-1} A^T y for the linear one.
    Eigen::VectorXd proposal_mean(const Eigen::VectorXd& y) const;
    /// Diagonal of the d-dimensional proposal covariance.
    Eigen::VectorXd proposal_variance() const;

private:
    MeasurementChannel() = default;

    ChannelKind kind_ = ChannelKind::GaussianAdditive;
    int latent_dim_ = 0;
    Eigen::VectorXd sigma_sq_;
    Eigen::VectorXd log_norm_;  // -0.5 log(2 pi sigma_j^2)
    Eigen::MatrixXd A_;
    std::shared_ptr<const Eigen::ColPivHouseholderQR<Eigen::MatrixXd>> qr_;
};

} // namespace reclaim
