#include "reclaim/noise_estimation.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "reclaim/errors.hpp"
#include "reclaim/random.hpp"

namespace reclaim {

namespace {

void require_identifiable(const RegimeData& datasets, const InterventionFamily& family, int d) {
    if (datasets.size() != family.regimes.size())
        throw ParameterError("one data matrix per regime is required");
    if (!check_channel_identifiability(family, d))
        throw IdentifiabilityError(
            "intervention family does not target every node; channel noise is not identifiable");
}

} // namespace

bool check_channel_identifiability(const InterventionFamily& family, int d) {
    std::vector<bool> covered(static_cast<std::size_t>(std::max(d, 0)), false);
    for (const auto& regime : family.regimes)
        for (int t : regime.targets)
            if (t >= 0 && t < d) covered[t] = true;
    return std::all_of(covered.begin(), covered.end(), [](bool c) { return c; });
}

double sample_variance(const Eigen::VectorXd& v) {
    if (v.size() < 2) throw ParameterError("sample variance needs at least two rows");
    const double mean = v.mean();
    return (v.array() - mean).square().sum() / static_cast<double>(v.size() - 1);
}

Eigen::VectorXd estimate_gan_variances(const RegimeData& datasets,
                                       const InterventionFamily& family) {
    if (datasets.empty()) throw ParameterError("no datasets");
    const int d = static_cast<int>(datasets.front().cols());
    require_identifiable(datasets, family, d);
    Eigen::VectorXd out(d);
    for (int i = 0; i < d; ++i) {
        double sum = 0.0;
        int count = 0;
        for (std::size_t k = 0; k < datasets.size(); ++k) {
            const auto& regime = family.regimes[k];
            if (!regime.targets_node(i)) continue;
            if (datasets[k].cols() != d) throw ParameterError("dataset column count mismatch");
            sum += sample_variance(datasets[k].col(i)) - regime.sigma_I_sq;
            ++count;
        }
        out[i] = std::max(sum / count, kVarianceFloor);
    }
    return out;
}

Eigen::MatrixXd null_space_basis(const Eigen::MatrixXd& A, int i) {
    const int p = static_cast<int>(A.rows()), d = static_cast<int>(A.cols());
    if (i < 0 || i >= d) throw ParameterError("node index out of range");
    if (d == 1) return Eigen::MatrixXd::Identity(p, p);

    Eigen::MatrixXd rest(p, d - 1);
    for (int c = 0, k = 0; c < d; ++c)
        if (c != i) rest.col(k++) = A.col(c);
    const Eigen::MatrixXd Mi = rest.transpose();  // (d-1) x p
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Mi, Eigen::ComputeFullV);
    const auto& s = svd.singularValues();
    if (!(s(d - 2) > 1e-10 * std::max(1.0, s(0))))
        throw RankError("A without column " + std::to_string(i) + " is rank deficient");
    const int r = p - d + 1;
    Eigen::MatrixXd basis = svd.matrixV().rightCols(r);
    if ((Mi * basis).lpNorm<Eigen::Infinity>() > 1e-10)
        throw RankError("null-space residual exceeds 1e-10");
    return basis;
}

int numerical_rank(const Eigen::MatrixXd& M, double rel_tol) {
    if (M.size() == 0) return 0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
    const auto& s = svd.singularValues();
    if (s(0) <= 0.0) return 0;
    int rank = 0;
    for (Eigen::Index k = 0; k < s.size(); ++k)
        if (s(k) > rel_tol * s(0)) ++rank;
    return rank;
}

ProjectionSet sample_projection_vectors(const Eigen::MatrixXd& A, std::uint64_t seed,
                                        ProjectionSamplerOptions options) {
    const int p = static_cast<int>(A.rows()), d = static_cast<int>(A.cols());
    if (p < d || d < 1) throw ParameterError("projection sampling needs p >= d >= 1");
    const int m = options.m > 0 ? options.m : 2 * p;
    if (m < p) throw ParameterError("need at least p projection rows");
    if (!(options.eps_sig > 0.0) || !(options.delta > 0.0))
        throw ParameterError("eps_sig and delta must be positive");

    std::vector<Eigen::MatrixXd> bases;
    bases.reserve(d);
    for (int i = 0; i < d; ++i) bases.push_back(null_space_basis(A, i));

    std::vector<Eigen::VectorXd> dirs, squares;
    std::vector<int> nodes;
    Rng rng(derive_seed(seed, {0x9A0ULL}));
    const long long budget = 10000LL * m;
    long long draws = 0;
    // A node is retired after this many consecutive rejections: with a one-dimensional
    // null space every draw repeats the same row, or its signal may never reach eps_sig.
    constexpr int kStaleLimit = 1000;
    std::vector<bool> retired(d, false);

    auto try_node = [&](int i) -> bool {
        int stale = 0;
        while (draws < budget) {
            ++draws;
            const Eigen::VectorXd u = standard_normal_vector(rng, bases[i].cols());
            Eigen::VectorXd t = bases[i] * u;
            const double norm = t.norm();
            if (!(norm > 0.0)) continue;
            t /= norm;
            if (std::abs(A.col(i).dot(t)) < options.eps_sig) {  // weak signal
                if (++stale >= kStaleLimit) {
                    retired[i] = true;
                    return false;
                }
                continue;
            }
            const Eigen::VectorXd sq = t.cwiseProduct(t);
            const double sq_norm = sq.norm();
            bool diverse = true;
            for (const auto& prev : squares) {
                if (sq.dot(prev) / (sq_norm * prev.norm()) > 1.0 - options.delta) {
                    diverse = false;
                    break;
                }
            }
            if (!diverse) {
                if (++stale >= kStaleLimit) {
                    retired[i] = true;
                    return false;
                }
                continue;
            }
            dirs.push_back(t);
            squares.push_back(sq);
            nodes.push_back(i);
            return true;
        }
        return false;
    };

    auto assemble = [&]() {
        ProjectionSet set;
        const int rows = static_cast<int>(dirs.size());
        set.directions.resize(rows, p);
        set.T2.resize(rows, p);
        for (int k = 0; k < rows; ++k) {
            set.directions.row(k) = dirs[k].transpose();
            set.T2.row(k) = squares[k].transpose();
        }
        set.b = Eigen::VectorXd::Zero(rows);
        set.source_node = nodes;
        return set;
    };

    const int per_node = m / d, remainder = m % d;
    for (int i = 0; i < d; ++i) {
        const int quota = per_node + (i < remainder ? 1 : 0);
        for (int q = 0; q < quota && !retired[i] && draws < budget; ++q) try_node(i);
    }

    ProjectionSet set = assemble();
    int rank = numerical_rank(set.T2);
    // Keep adding rows round-robin until T2 certifies full column rank.
    int next = 0;
    while (rank < p && draws < budget &&
           std::any_of(retired.begin(), retired.end(), [](bool r) { return !r; })) {
        const int i = next++ % d;
        if (retired[i]) continue;
        if (try_node(i)) {
            set = assemble();
            rank = numerical_rank(set.T2);
        }
    }
    if (rank < p)
        throw SamplingError("projection sampling failed to reach rank " + std::to_string(p) +
                                " (achieved " + std::to_string(rank) + ")",
                            rank);
    return set;
}

namespace {

double projected_gradient_residual(const Eigen::VectorXd& x, const Eigen::VectorXd& grad) {
    return (x - (x - grad).cwiseMax(0.0)).lpNorm<Eigen::Infinity>();
}

// Solve the unconstrained problem on the free set of x; returns false if the result
// leaves the feasible region or violates the sign condition on the bound set.
bool polish_free_set(const Eigen::MatrixXd& Q, const Eigen::VectorXd& c, Eigen::VectorXd& x,
                     double kkt_tol) {
    const Eigen::Index n = x.size();
    std::vector<Eigen::Index> free;
    for (Eigen::Index j = 0; j < n; ++j)
        if (x[j] > 0.0) free.push_back(j);
    Eigen::VectorXd candidate = Eigen::VectorXd::Zero(n);
    if (!free.empty()) {
        const auto k = static_cast<Eigen::Index>(free.size());
        Eigen::MatrixXd Qf(k, k);
        Eigen::VectorXd cf(k);
        for (Eigen::Index a = 0; a < k; ++a) {
            cf[a] = c[free[a]];
            for (Eigen::Index b = 0; b < k; ++b) Qf(a, b) = Q(free[a], free[b]);
        }
        Eigen::LDLT<Eigen::MatrixXd> ldlt(Qf);
        if (ldlt.info() != Eigen::Success) return false;
        const Eigen::VectorXd sol = ldlt.solve(cf);
        for (Eigen::Index a = 0; a < k; ++a) {
            if (!(sol[a] >= 0.0)) return false;
            candidate[free[a]] = sol[a];
        }
    }
    const Eigen::VectorXd grad = Q * candidate - c;
    if (projected_gradient_residual(candidate, grad) > kkt_tol) return false;
    x = candidate;
    return true;
}

} // namespace

NnlsResult nnls_projected_gradient(const Eigen::MatrixXd& M, const Eigen::VectorXd& b,
                                   double kkt_tol, int max_iter) {
    if (M.rows() != b.size()) throw ParameterError("nnls: dimension mismatch");
    const Eigen::MatrixXd Q = M.transpose() * M;
    const Eigen::VectorXd c = M.transpose() * b;
    const Eigen::Index n = Q.rows();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Q, Eigen::EigenvaluesOnly);
    const double lipschitz = std::max(eig.eigenvalues().maxCoeff(), 1e-300);
    const double step = 1.0 / lipschitz;

    NnlsResult res;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n), x_prev = x, yk = x;
    double momentum = 1.0;
    for (int it = 1; it <= max_iter; ++it) {
        const Eigen::VectorXd grad_y = Q * yk - c;
        x_prev = x;
        x = (yk - step * grad_y).cwiseMax(0.0);
        const double next_momentum = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
        // Restart momentum when the objective direction turns uphill.
        if ((yk - x).dot(x - x_prev) > 0.0) {
            momentum = 1.0;
            yk = x;
        } else {
            yk = x + ((momentum - 1.0) / next_momentum) * (x - x_prev);
            momentum = next_momentum;
        }
        res.iterations = it;
        if (it % 25 == 0) {
            const Eigen::VectorXd grad = Q * x - c;
            if (projected_gradient_residual(x, grad) <= kkt_tol) break;
            if (polish_free_set(Q, c, x, kkt_tol)) break;
        }
    }
    res.x = x;
    res.kkt_residual = projected_gradient_residual(x, Q * x - c);
    return res;
}

Eigen::VectorXd estimate_linear_variances(const RegimeData& datasets,
                                          const InterventionFamily& family,
                                          const Eigen::MatrixXd& A, ProjectionSet& proj) {
    const int p = static_cast<int>(A.rows()), d = static_cast<int>(A.cols());
    require_identifiable(datasets, family, d);
    if (proj.directions.cols() != p) throw ParameterError("projection set does not match A");
    if (numerical_rank(proj.T2) < p) throw RankError("T2 is not full column rank");

    const int m = proj.rows();
    proj.b.resize(m);
    for (int k = 0; k < m; ++k) {
        const int i = proj.source_node[k];
        const Eigen::VectorXd t = proj.directions.row(k).transpose();
        const double gain = t.dot(A.col(i));
        double sum = 0.0;
        int count = 0;
        for (std::size_t r = 0; r < datasets.size(); ++r) {
            const auto& regime = family.regimes[r];
            if (!regime.targets_node(i)) continue;
            if (datasets[r].cols() != p) throw ParameterError("dataset column count mismatch");
            const Eigen::VectorXd zeta = datasets[r] * t;
            sum += sample_variance(zeta) - gain * gain * regime.sigma_I_sq;
            ++count;
        }
        proj.b[k] = sum / count;
    }
    const NnlsResult fit = nnls_projected_gradient(proj.T2, proj.b);
    if (fit.kkt_residual > 1e-8)
        throw ConvergenceError("noise-variance NNLS did not reach KKT tolerance", fit.kkt_residual);
    return fit.x.cwiseMax(kVarianceFloor);
}

Eigen::VectorXd estimate_linear_variances_pooled(const RegimeData& datasets,
                                                 const InterventionFamily& family,
                                                 const Eigen::MatrixXd& A) {
    const int p = static_cast<int>(A.rows()), d = static_cast<int>(A.cols());
    require_identifiable(datasets, family, d);

    // Unknowns: p channel variances, then one empirical clamp variance per (node, regime).
    struct Row {
        Eigen::VectorXd sigma_coeff;
        int nuisance;
        double nuisance_coeff, rhs, sd;
    };
    std::vector<Row> rows;
    std::vector<double> prior_mean, prior_sd;
    for (int i = 0; i < d; ++i) {
        const Eigen::MatrixXd B = null_space_basis(A, i);
        const Eigen::VectorXd g = B.transpose() * A.col(i);
        const Eigen::Index r = B.cols();
        for (std::size_t k = 0; k < datasets.size(); ++k) {
            const auto& regime = family.regimes[k];
            if (!regime.targets_node(i)) continue;
            if (datasets[k].cols() != p) throw ParameterError("dataset column count mismatch");
            const Eigen::Index n = datasets[k].rows();
            if (n < 2) throw ParameterError("need at least two samples in every covering regime");
            const Eigen::MatrixXd Z = datasets[k] * B;
            const Eigen::MatrixXd centered = Z.rowwise() - Z.colwise().mean();
            const Eigen::MatrixXd C = centered.transpose() * centered / static_cast<double>(n - 1);
            const int q = static_cast<int>(prior_mean.size());
            for (Eigen::Index a = 0; a < r; ++a)
                for (Eigen::Index b = a; b < r; ++b) {
                    const double sd =
                        std::sqrt((C(a, a) * C(b, b) + C(a, b) * C(a, b)) / static_cast<double>(n - 1));
                    rows.push_back({B.col(a).cwiseProduct(B.col(b)), q, g[a] * g[b], C(a, b), sd});
                }
            prior_mean.push_back(regime.sigma_I_sq);
            prior_sd.push_back(regime.sigma_I_sq * std::sqrt(2.0 / static_cast<double>(n - 1)));
        }
    }

    const int n_nuisance = static_cast<int>(prior_mean.size());
    const int n_rows = static_cast<int>(rows.size()) + n_nuisance;
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n_rows, p + n_nuisance);
    Eigen::VectorXd rhs(n_rows);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const Row& row = rows[k];
        const double w = row.sd > 0.0 ? 1.0 / row.sd : 1.0;
        M.row(k).head(p) = w * row.sigma_coeff.transpose();
        M(k, p + row.nuisance) = w * row.nuisance_coeff;
        rhs[k] = w * row.rhs;
    }
    for (int q = 0; q < n_nuisance; ++q) {
        const int k = static_cast<int>(rows.size()) + q;
        M(k, p + q) = 1.0 / prior_sd[q];
        rhs[k] = prior_mean[q] / prior_sd[q];
    }
    // Weights only matter relative to each other; keep the solver well scaled.
    const double scale = M.cwiseAbs().maxCoeff();
    M /= scale;
    rhs /= scale;
    if (numerical_rank(M) < M.cols()) throw RankError("pooled noise system is rank deficient");

    const NnlsResult fit = nnls_projected_gradient(M, rhs);
    if (fit.kkt_residual > 1e-8)
        throw ConvergenceError("noise-variance NNLS did not reach KKT tolerance", fit.kkt_residual);
    return fit.x.head(p).cwiseMax(kVarianceFloor);
}

} // namespace reclaim
