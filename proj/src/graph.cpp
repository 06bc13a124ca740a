#include "reclaim/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "reclaim/errors.hpp"
#include "reclaim/random.hpp"

namespace reclaim {

DirectedGraph::DirectedGraph(int d) : d_(d) {
    if (d < 1) throw ParameterError("graph must have at least one node");
    adj_.assign(static_cast<std::size_t>(d) * d, 0);
}

DirectedGraph DirectedGraph::from_edges(int d, const std::vector<std::pair<int, int>>& edges) {
    DirectedGraph g(d);
    for (auto [i, j] : edges) g.set_edge(i, j);
    return g;
}

DirectedGraph DirectedGraph::from_adjacency(const Eigen::MatrixXd& adj) {
    if (adj.rows() != adj.cols()) throw ParameterError("adjacency must be square");
    DirectedGraph g(static_cast<int>(adj.rows()));
    for (int i = 0; i < g.d_; ++i)
        for (int j = 0; j < g.d_; ++j)
            if (adj(i, j) != 0.0) g.set_edge(i, j);
    return g;
}

void DirectedGraph::check_index(int i, int j) const {
    if (i < 0 || j < 0 || i >= d_ || j >= d_)
        throw ParameterError("edge index out of range: (" + std::to_string(i) + ", " +
                             std::to_string(j) + ")");
}

bool DirectedGraph::has_edge(int i, int j) const {
    check_index(i, j);
    return adj_[static_cast<std::size_t>(i) * d_ + j] != 0;
}

void DirectedGraph::set_edge(int i, int j, bool present) {
    check_index(i, j);
    if (i == j && present) throw ParameterError("self-loops are not allowed");
    adj_[static_cast<std::size_t>(i) * d_ + j] = present ? 1 : 0;
}

int DirectedGraph::edge_count() const noexcept {
    return static_cast<int>(std::count(adj_.begin(), adj_.end(), std::uint8_t{1}));
}

std::vector<std::pair<int, int>> DirectedGraph::edges() const {
    std::vector<std::pair<int, int>> out;
    for (int i = 0; i < d_; ++i)
        for (int j = 0; j < d_; ++j)
            if (adj_[static_cast<std::size_t>(i) * d_ + j]) out.emplace_back(i, j);
    return out;
}

Eigen::MatrixXd DirectedGraph::adjacency() const {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d_, d_);
    for (auto [i, j] : edges()) a(i, j) = 1.0;
    return a;
}

EdgeScoreMatrix::EdgeScoreMatrix(Eigen::MatrixXd scores) : scores_(std::move(scores)) {
    if (scores_.rows() != scores_.cols() || scores_.rows() < 1)
        throw ParameterError("edge score matrix must be square and non-empty");
    for (Eigen::Index i = 0; i < scores_.rows(); ++i) {
        if (scores_(i, i) != 0.0) throw ParameterError("edge score diagonal must be exactly 0");
        for (Eigen::Index j = 0; j < scores_.cols(); ++j) {
            const double s = scores_(i, j);
            if (!(s >= 0.0 && s <= 1.0)) throw ParameterError("edge scores must lie in [0, 1]");
        }
    }
}

DirectedGraph erdos_renyi(int d, double expected_out_degree, std::uint64_t seed) {
    if (d < 2) throw ParameterError("erdos_renyi needs d >= 2");
    if (!(expected_out_degree > 0.0) || expected_out_degree > d - 1)
        throw ParameterError("expected out-degree must lie in (0, d-1]");
    const double p = expected_out_degree / (d - 1);
    Rng rng(derive_seed(seed, {0x45525ULL}));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    DirectedGraph g(d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            if (i != j && unif(rng) < p) g.set_edge(i, j);
    return g;
}

int shd(const DirectedGraph& estimate, const DirectedGraph& truth) {
    if (estimate.size() != truth.size()) throw ParameterError("shd: graphs differ in size");
    const int d = truth.size();
    int dist = 0;
    for (int i = 0; i < d; ++i) {
        for (int j = i + 1; j < d; ++j) {
            const bool e_ij = estimate.has_edge(i, j), e_ji = estimate.has_edge(j, i);
            const bool t_ij = truth.has_edge(i, j), t_ji = truth.has_edge(j, i);
            const int mismatches = (e_ij != t_ij) + (e_ji != t_ji);
            // Both directions differ and each graph holds one edge: a reversal.
            if (mismatches == 2 && (e_ij != e_ji) && (t_ij != t_ji))
                dist += 1;
            else
                dist += mismatches;
        }
    }
    return dist;
}

double auprc(const EdgeScoreMatrix& scores, const DirectedGraph& truth) {
    if (scores.size() != truth.size()) throw ParameterError("auprc: dimension mismatch");
    const int d = truth.size();
    const int positives = truth.edge_count();
    if (positives == 0) throw UndefinedMetricError("auprc undefined: truth graph has no edges");

    std::vector<std::pair<double, bool>> entries;
    entries.reserve(static_cast<std::size_t>(d) * (d - 1));
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            if (i != j) entries.emplace_back(scores(i, j), truth.has_edge(i, j));
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });

    double area = 0.0, prev_recall = 0.0;
    int tp = 0, predicted = 0;
    std::size_t k = 0;
    while (k < entries.size()) {
        const double level = entries[k].first;
        while (k < entries.size() && entries[k].first == level) {
            tp += entries[k].second ? 1 : 0;
            ++predicted;
            ++k;
        }
        const double recall = static_cast<double>(tp) / positives;
        const double precision = static_cast<double>(tp) / predicted;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return area;
}

DirectedGraph threshold_edges(const EdgeScoreMatrix& scores, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw ParameterError("threshold must lie in (0, 1)");
    const int d = scores.size();
    DirectedGraph g(d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            if (i != j && scores(i, j) >= tau) g.set_edge(i, j);
    return g;
}

} // namespace reclaim
