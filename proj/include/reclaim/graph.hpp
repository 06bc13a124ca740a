#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace reclaim {

/// Directed graph over latent nodes. Cycles are allowed, self-loops are not.
/// `has_edge(i, j)` means X_i -> X_j.
class DirectedGraph {
public:
    explicit DirectedGraph(int d);

    static DirectedGraph from_edges(int d, const std::vector<std::pair<int, int>>& edges);
    /// Nonzero off-diagonal entries become edges; a nonzero diagonal is rejected.
    static DirectedGraph from_adjacency(const Eigen::MatrixXd& adj);

    int size() const noexcept { return d_; }
    bool has_edge(int i, int j) const;
    void set_edge(int i, int j, bool present = true);
    int edge_count() const noexcept;
    std::vector<std::pair<int, int>> edges() const;
    Eigen::MatrixXd adjacency() const;

    bool operator==(const DirectedGraph& other) const = default;

private:
    void check_index(int i, int j) const;

    int d_;
    std::vector<std::uint8_t> adj_;
};

/// Estimated edge probabilities. Entry (i, j) scores X_i -> X_j.
class EdgeScoreMatrix {
public:
    explicit EdgeScoreMatrix(Eigen::MatrixXd scores);

    int size() const noexcept { return static_cast<int>(scores_.rows()); }
    double operator()(int i, int j) const { return scores_(i, j); }
    const Eigen::MatrixXd& values() const noexcept { return scores_; }

private:
    Eigen::MatrixXd scores_;
};

/// Each ordered pair (i, j), i != j, is an edge with probability density / (d - 1).
DirectedGraph erdos_renyi(int d, double expected_out_degree, std::uint64_t seed);

/// Structural Hamming distance; a reversed edge counts as a single edit.
int shd(const DirectedGraph& estimate, const DirectedGraph& truth);

/// Step-wise area under the precision-recall curve over off-diagonal entries.
/// Entries with equal scores enter the curve together.
double auprc(const EdgeScoreMatrix& scores, const DirectedGraph& truth);

/// Edge (i, j) kept iff scores(i, j) >= tau.
DirectedGraph threshold_edges(const EdgeScoreMatrix& scores, double tau);

} // namespace reclaim
