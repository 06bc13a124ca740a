#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "reclaim/errors.hpp"
#include "reclaim/experiment.hpp"
#include "reclaim/noise_estimation.hpp"

using namespace reclaim;

namespace {

Eigen::MatrixXd gaussian_matrix(int rows, int cols, double var, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> nd(0.0, std::sqrt(var));
    Eigen::MatrixXd A(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) A(i, j) = nd(rng);
    return A;
}

// Minimiser of ||M x - b||^2 over x >= 0 by trying every support set.
Eigen::VectorXd nnls_by_support_enumeration(const Eigen::MatrixXd& M, const Eigen::VectorXd& b) {
    const int n = static_cast<int>(M.cols());
    Eigen::VectorXd best = Eigen::VectorXd::Zero(n);
    double best_obj = b.squaredNorm();
    for (int mask = 1; mask < (1 << n); ++mask) {
        std::vector<int> cols;
        for (int j = 0; j < n; ++j)
            if (mask & (1 << j)) cols.push_back(j);
        Eigen::MatrixXd sub(M.rows(), cols.size());
        for (std::size_t k = 0; k < cols.size(); ++k) sub.col(k) = M.col(cols[k]);
        const Eigen::VectorXd sol = sub.colPivHouseholderQr().solve(b);
        if ((sol.array() < 0.0).any()) continue;
        Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
        for (std::size_t k = 0; k < cols.size(); ++k) x[cols[k]] = sol[k];
        const double obj = (M * x - b).squaredNorm();
        if (obj < best_obj) {
            best_obj = obj;
            best = x;
        }
    }
    return best;
}

double kkt_residual(const Eigen::MatrixXd& M, const Eigen::VectorXd& b, const Eigen::VectorXd& x) {
    const Eigen::VectorXd grad = M.transpose() * (M * x - b);
    return (x - (x - grad).cwiseMax(0.0)).lpNorm<Eigen::Infinity>();
}

// Observations with a clamped node whose column has an exact prescribed sample variance.
RegimeData column_with_variance(double var, int n) {
    Eigen::MatrixXd y(n, 1);
    for (int r = 0; r < n; ++r) y(r, 0) = (r % 2 == 0 ? 1.0 : -1.0);
    y *= std::sqrt(var * (n - 1) / n);
    return {y};
}

InterventionFamily all_single_nodes(int d) { return InterventionFamily::single_node(d, false); }

} // namespace

TEST(ChannelIdentifiability, CoverageOfAllNodes) {
    EXPECT_TRUE(check_channel_identifiability(all_single_nodes(4), 4));
    EXPECT_FALSE(check_channel_identifiability(InterventionFamily{{InterventionRegime{}}}, 4));
    InterventionFamily partial;
    partial.regimes = {InterventionRegime{{0}}, InterventionRegime{{2}}};
    EXPECT_FALSE(check_channel_identifiability(partial, 3));
    partial.regimes.push_back(InterventionRegime{{1, 2}});
    EXPECT_TRUE(check_channel_identifiability(partial, 3));
}

TEST(GanVariances, SubtractionIdentityAndFloor) {
    InterventionFamily fam;
    fam.regimes = {InterventionRegime{{0}}};
    EXPECT_NEAR(estimate_gan_variances(column_with_variance(1.25, 1000), fam)[0], 0.25, 1e-12);
    EXPECT_EQ(estimate_gan_variances(column_with_variance(0.7, 1000), fam)[0], kVarianceFloor);
    EXPECT_THROW(estimate_gan_variances(column_with_variance(1.25, 1000), InterventionFamily{{{}}}),
                 IdentifiabilityError);
}

TEST(GanVariances, NoiselessDataHitsFloor) {
    ProblemSpec spec;
    spec.d = 4;
    spec.n = 500;
    spec.sigma_min = spec.sigma_max = 1e-9;
    const Problem pr = simulate_problem(spec, 3);
    const Eigen::VectorXd est = estimate_gan_variances(pr.observations, pr.family);
    // Sampling error of Var(X_i) around 1 is ~0.06 here; the subtraction clips roughly half.
    for (int i = 0; i < 4; ++i) EXPECT_LE(est[i], 0.3);
    const Eigen::VectorXd exact = estimate_gan_variances(pr.latents, pr.family);
    for (int i = 0; i < 4; ++i) {
        const int k = i + 1;
        const double v = sample_variance(pr.latents[k].col(i));
        EXPECT_NEAR(exact[i], std::max(v - 1.0, kVarianceFloor), 1e-12);
    }
}

TEST(GanVariances, AveragesOverCoveringRegimes) {
    InterventionFamily fam;
    fam.regimes = {InterventionRegime{{0}}, InterventionRegime{{0}, 2.0}};
    RegimeData data = {column_with_variance(1.5, 200)[0], column_with_variance(2.1, 200)[0]};
    EXPECT_NEAR(estimate_gan_variances(data, fam)[0], 0.5 * (0.5 + 0.1), 1e-12);
}

TEST(GanVariances, ErrorWithinSamplingBand) {
    ProblemSpec spec;
    spec.d = 6;
    spec.n = 20000;
    spec.include_observational = false;
    const Problem pr = simulate_problem(spec, 11);
    const Eigen::VectorXd est = estimate_gan_variances(pr.observations, pr.family);
    for (int i = 0; i < 6; ++i) {
        const double s2 = pr.channel.sigma_sq()[i];
        const double se = std::sqrt(2.0 / (spec.n - 1)) * (1.0 + s2);
        EXPECT_NEAR(est[i], s2, 4.0 * se) << i;
    }
}

TEST(GanVariances, MedianErrorShrinksWithSampleSize) {
    // W = 0 keeps the simulation cheap; the estimator only sees clamped columns anyway.
    const int d = 3;
    GroundTruthScm scm{DirectedGraph(d), Eigen::MatrixXd::Zero(d, d), 1.0, Eigen::VectorXd::Ones(d)};
    const auto channel = MeasurementChannel::gaussian_additive(Eigen::Vector3d(0.1, 0.2, 0.3));
    const auto fam = all_single_nodes(d);
    double prev = 1e9;
    for (int n : {1000, 10000, 100000}) {
        std::vector<double> errs;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const Eigen::VectorXd est = estimate_gan_variances(
                simulate_observations(scm, fam, channel, n, seed), fam);
            errs.push_back((est - channel.sigma_sq()).cwiseAbs().maxCoeff());
        }
        std::nth_element(errs.begin(), errs.begin() + 10, errs.end());
        EXPECT_LT(errs[10], prev) << "n=" << n;
        prev = errs[10];
    }
}

TEST(NullSpaceBasis, IdentityAndPaddedIdentity) {
    const Eigen::MatrixXd B = null_space_basis(Eigen::MatrixXd::Identity(4, 4), 0);
    ASSERT_EQ(B.cols(), 1);
    EXPECT_NEAR(std::abs(B(0, 0)), 1.0, 1e-12);
    EXPECT_NEAR(B.col(0).tail(3).norm(), 0.0, 1e-12);

    Eigen::MatrixXd padded = Eigen::MatrixXd::Zero(5, 4);
    padded.topRows(4).setIdentity();
    const Eigen::MatrixXd B2 = null_space_basis(padded, 0);
    ASSERT_EQ(B2.cols(), 2);
    // Projector onto the span must equal the projector onto {e0, e4}.
    Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(5, 5);
    expected(0, 0) = expected(4, 4) = 1.0;
    EXPECT_LE((B2 * B2.transpose() - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(NullSpaceBasis, RandomMatrixResidualAndOrthonormality) {
    const Eigen::MatrixXd A = gaussian_matrix(15, 10, 1.5, 2);
    for (int i = 0; i < 10; ++i) {
        const Eigen::MatrixXd B = null_space_basis(A, i);
        ASSERT_EQ(B.cols(), 6);
        Eigen::MatrixXd rest(15, 9);
        for (int c = 0, k = 0; c < 10; ++c)
            if (c != i) rest.col(k++) = A.col(c);
        EXPECT_LE((rest.transpose() * B).lpNorm<Eigen::Infinity>(), 1e-10);
        EXPECT_LE((B.transpose() * B - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(NullSpaceBasis, RejectsDependentColumns) {
    Eigen::MatrixXd A = gaussian_matrix(6, 4, 1.0, 3);
    A.col(2) = A.col(1) * 2.0;
    EXPECT_THROW(null_space_basis(A, 0), RankError);
}

TEST(ProjectionSampler, PaddedIdentityReachesFullRank) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(3, 2);
    A.topRows(2).setIdentity();
    const ProjectionSet set = sample_projection_vectors(A, 1);
    EXPECT_EQ(numerical_rank(set.T2), 3);
}

TEST(ProjectionSampler, SquareSystemUsesEveryNode) {
    const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(6, 6) + 0.2 * gaussian_matrix(6, 6, 1.0, 4);
    const ProjectionSet set = sample_projection_vectors(A, 2);
    EXPECT_EQ(numerical_rank(set.T2), 6);
    std::vector<int> nodes = set.source_node;
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
    EXPECT_EQ(nodes.size(), 6u);
}

TEST(ProjectionSampler, AcceptedRowsSatisfyBothTestsAndFullRank) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const Eigen::MatrixXd A = gaussian_matrix(15, 10, 1.5, 1000 + seed);
        const ProjectionSamplerOptions opts;
        const ProjectionSet set = sample_projection_vectors(A, seed, opts);
        ASSERT_EQ(numerical_rank(set.T2), 15) << "seed " << seed;
        EXPECT_EQ(set.rows(), 30);
        for (int k = 0; k < set.rows(); ++k) {
            const Eigen::VectorXd t = set.directions.row(k).transpose();
            const int i = set.source_node[k];
            Eigen::VectorXd others = A.transpose() * t;
            others[i] = 0.0;
            EXPECT_LE(others.lpNorm<Eigen::Infinity>(), 1e-8);
            EXPECT_GE(std::abs(A.col(i).dot(t)), opts.eps_sig);
            EXPECT_NEAR(t.norm(), 1.0, 1e-12);
            EXPECT_LE((set.T2.row(k).transpose() - t.cwiseProduct(t)).norm(), 1e-15);
            for (int l = 0; l < k; ++l) {
                const double cosine =
                    set.T2.row(k).dot(set.T2.row(l)) / (set.T2.row(k).norm() * set.T2.row(l).norm());
                EXPECT_LE(cosine, 1.0 - opts.delta);
            }
        }
    }
}

TEST(ProjectionSampler, ReportsAchievedRankWhenBudgetRunsOut) {
    const Eigen::MatrixXd A = gaussian_matrix(5, 3, 1.0, 6);
    ProjectionSamplerOptions opts;
    opts.eps_sig = 1e6;  // unreachable signal threshold
    opts.m = 5;
    try {
        sample_projection_vectors(A, 1, opts);
        FAIL() << "expected SamplingError";
    } catch (const SamplingError& e) {
        EXPECT_EQ(e.achieved_rank(), 0);
    }
}

TEST(Nnls, MatchesSupportEnumeration) {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 1 + trial % 6;
        const int rows = n + trial % 5;
        const Eigen::MatrixXd M = gaussian_matrix(rows, n, 1.0, 50 + trial);
        const Eigen::VectorXd b = gaussian_matrix(rows, 1, 1.0, 900 + trial);
        const NnlsResult res = nnls_projected_gradient(M, b);
        const Eigen::VectorXd oracle = nnls_by_support_enumeration(M, b);
        EXPECT_LE(res.kkt_residual, 1e-8);
        EXPECT_LE(kkt_residual(M, b, res.x), 1e-8);
        EXPECT_GE(res.x.minCoeff(), 0.0);
        EXPECT_LE((res.x - oracle).norm(), 1e-6) << "trial " << trial;
    }
}

TEST(Nnls, ExactRecoveryOnSquareSystem) {
    const Eigen::MatrixXd T2 = gaussian_matrix(6, 6, 1.0, 8).cwiseAbs2();
    const Eigen::VectorXd truth = Eigen::VectorXd::LinSpaced(6, 0.1, 0.6);
    const NnlsResult res = nnls_projected_gradient(T2, T2 * truth);
    EXPECT_LE((res.x - truth).lpNorm<Eigen::Infinity>(), 1e-8);
}

TEST(Nnls, RowRescalingLeavesConsistentSolutionUnchanged) {
    const Eigen::MatrixXd T2 = gaussian_matrix(12, 5, 1.0, 9).cwiseAbs2();
    const Eigen::VectorXd truth = Eigen::VectorXd::LinSpaced(5, 0.05, 0.4);
    const Eigen::VectorXd b = T2 * truth;
    Eigen::MatrixXd scaled = T2;
    Eigen::VectorXd scaled_b = b;
    for (int k = 0; k < 12; ++k) {
        // Rescaling t by c scales t (.) t and the variance of t^T y by c^2.
        const double c2 = std::pow(0.2 + 0.3 * k, 2);
        scaled.row(k) *= c2;
        scaled_b[k] *= c2;
    }
    EXPECT_LE((nnls_projected_gradient(T2, b).x - nnls_projected_gradient(scaled, scaled_b).x)
                  .lpNorm<Eigen::Infinity>(),
              1e-8);
}

TEST(LinearVariances, IdentityChannelMatchesAdditiveEstimator) {
    ProblemSpec spec;
    spec.d = 4;
    spec.n = 3000;
    spec.include_observational = false;
    Problem pr = simulate_problem(spec, 21);
    const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(4, 4);
    ProjectionSet proj;
    proj.directions = A;
    proj.T2 = A;
    proj.source_node = {0, 1, 2, 3};
    const Eigen::VectorXd linear = estimate_linear_variances(pr.observations, pr.family, A, proj);
    const Eigen::VectorXd additive = estimate_gan_variances(pr.observations, pr.family);
    EXPECT_LE((linear - additive).lpNorm<Eigen::Infinity>(), 1e-10);
    for (int i = 0; i < 4; ++i)
        EXPECT_NEAR(proj.b[i], sample_variance(pr.observations[i].col(i)) - 1.0, 1e-12);
}

TEST(LinearVariances, RequiresCoverageAndFullRank) {
    const Eigen::MatrixXd A = gaussian_matrix(5, 3, 1.0, 1);
    ProjectionSet proj = sample_projection_vectors(A, 1);
    RegimeData data(1, Eigen::MatrixXd::Zero(10, 5));
    EXPECT_THROW(estimate_linear_variances(data, InterventionFamily{{{}}}, A, proj),
                 IdentifiabilityError);
    ProjectionSet thin = proj;
    thin.T2 = proj.T2.topRows(2);
    thin.directions = proj.directions.topRows(2);
    RegimeData three(3, Eigen::MatrixXd::Zero(10, 5));
    EXPECT_THROW(estimate_linear_variances(three, all_single_nodes(3), A, thin), RankError);
}

TEST(ProjectionSampler, SquareSystemWithWeakNodeReportsRank) {
    // The only admissible direction for node 0 is e0, where |a_0^T t| = 0.05 < eps_sig.
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(4, 4);
    A(0, 0) = 0.05;
    try {
        sample_projection_vectors(A, 3);
        FAIL() << "expected SamplingError";
    } catch (const SamplingError& e) {
        EXPECT_EQ(e.achieved_rank(), 3);
    }
}

TEST(PooledLinearVariances, IdentityChannelMatchesAdditiveEstimator) {
    ProblemSpec spec;
    spec.d = 4;
    spec.n = 3000;
    spec.include_observational = false;
    const Problem pr = simulate_problem(spec, 21);
    const Eigen::VectorXd pooled =
        estimate_linear_variances_pooled(pr.observations, pr.family, Eigen::MatrixXd::Identity(4, 4));
    const Eigen::VectorXd additive = estimate_gan_variances(pr.observations, pr.family);
    EXPECT_LE((pooled - additive).lpNorm<Eigen::Infinity>(), 1e-8);
}

TEST(PooledLinearVariances, ConsistentOnTallChannel) {
    ProblemSpec spec;
    spec.d = 4;
    spec.p = 7;
    spec.n = 20000;
    spec.channel = ChannelKind::Linear;
    spec.include_observational = false;
    const Problem pr = simulate_problem(spec, 5);
    const Eigen::VectorXd est =
        estimate_linear_variances_pooled(pr.observations, pr.family, pr.channel.matrix());
    const Eigen::VectorXd truth = pr.channel.sigma_sq();
    // Entries of order 0.1-0.4 with n = 2e4 are resolved to a few hundredths.
    EXPECT_LE((est - truth).lpNorm<Eigen::Infinity>(), 0.05);
    EXPECT_GE(est.minCoeff(), kVarianceFloor);
}

TEST(PooledLinearVariances, RequiresCoverage) {
    const Eigen::MatrixXd A = gaussian_matrix(5, 3, 1.0, 1);
    RegimeData data(1, Eigen::MatrixXd::Zero(10, 5));
    EXPECT_THROW(estimate_linear_variances_pooled(data, InterventionFamily{{{}}}, A),
                 IdentifiabilityError);
}
