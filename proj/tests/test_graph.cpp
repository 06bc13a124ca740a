#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "reclaim/errors.hpp"
#include "reclaim/graph.hpp"

using namespace reclaim;

namespace {

DirectedGraph random_graph(int d, double p, std::mt19937_64& rng) {
    std::bernoulli_distribution coin(p);
    DirectedGraph g(d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            if (i != j && coin(rng)) g.set_edge(i, j);
    return g;
}

} // namespace

TEST(DirectedGraph, RejectsSelfLoopsAndEmptyGraphs) {
    EXPECT_THROW(DirectedGraph(0), ParameterError);
    DirectedGraph g(3);
    EXPECT_THROW(g.set_edge(1, 1), ParameterError);
    EXPECT_THROW(g.set_edge(0, 3), ParameterError);
}

TEST(EdgeScoreMatrix, ValidatesDiagonalAndRange) {
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(2, 2);
    s(0, 1) = 1.2;
    EXPECT_THROW(EdgeScoreMatrix{s}, ParameterError);
    s(0, 1) = 0.4;
    s(1, 1) = 0.1;
    EXPECT_THROW(EdgeScoreMatrix{s}, ParameterError);
}

TEST(ErdosRenyi, FullDensityForcesAllEdges) {
    for (std::uint64_t seed : {0ULL, 1ULL, 99ULL}) {
        const DirectedGraph g = erdos_renyi(2, 1.0, seed);
        EXPECT_TRUE(g.has_edge(0, 1));
        EXPECT_TRUE(g.has_edge(1, 0));
    }
}

TEST(ErdosRenyi, DeterministicGivenSeed) {
    EXPECT_EQ(erdos_renyi(10, 2.0, 42), erdos_renyi(10, 2.0, 42));
    EXPECT_NE(erdos_renyi(10, 2.0, 42), erdos_renyi(10, 2.0, 43));
}

TEST(ErdosRenyi, RejectsInvalidDensity) {
    EXPECT_THROW(erdos_renyi(5, 0.0, 1), ParameterError);
    EXPECT_THROW(erdos_renyi(5, 4.5, 1), ParameterError);
    EXPECT_THROW(erdos_renyi(1, 0.5, 1), ParameterError);
}

TEST(ErdosRenyi, MeanEdgeCountMatchesBinomialMean) {
    // 90 ordered pairs with p = 2/9: mean 20, sd of the mean over 1e4 draws ~ 0.04.
    double total = 0.0;
    const int draws = 10000;
    for (int s = 0; s < draws; ++s) total += erdos_renyi(10, 2.0, s).edge_count();
    const double mean = total / draws;
    EXPECT_GE(mean, 19.2);
    EXPECT_LE(mean, 20.8);
}

TEST(ErdosRenyi, PerPairFrequencyPassesChiSquare) {
    // Each ordered pair is Bernoulli(1/3) for d = 4, density 1; chi-square over the 12 pairs.
    const int d = 4, draws = 10000;
    const double p = 1.0 / 3.0;
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(d, d);
    for (int s = 0; s < draws; ++s) counts += erdos_renyi(d, 1.0, 1000 + s).adjacency();
    double chi2 = 0.0;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            if (i == j) continue;
            const double hit = counts(i, j), miss = draws - hit;
            chi2 += std::pow(hit - draws * p, 2) / (draws * p) +
                    std::pow(miss - draws * (1 - p), 2) / (draws * (1 - p));
        }
    // 12 degrees of freedom; the 0.999 quantile is 32.91.
    EXPECT_LT(chi2, 32.91);
}

TEST(Shd, HandExamples) {
    const DirectedGraph truth = DirectedGraph::from_edges(3, {{0, 1}});
    EXPECT_EQ(shd(truth, truth), 0);
    EXPECT_EQ(shd(DirectedGraph::from_edges(3, {{1, 0}}), truth), 1);
    EXPECT_EQ(shd(DirectedGraph(3), truth), 1);
    EXPECT_EQ(shd(DirectedGraph::from_edges(3, {{0, 1}, {1, 0}}), truth), 1);
    EXPECT_THROW(shd(DirectedGraph(2), truth), ParameterError);
}

TEST(Shd, MatchesBreadthFirstEditDistanceForThreeNodes) {
    const oracle::GraphCodec codec(3);
    for (std::uint32_t a = 0; a < codec.count(); ++a) {
        const auto dist = oracle::edit_distances_from(codec, a);
        const DirectedGraph ga = codec.decode(a);
        for (std::uint32_t b = 0; b < codec.count(); ++b)
            ASSERT_EQ(shd(ga, codec.decode(b)), dist[b]) << a << " -> " << b;
    }
}

TEST(Shd, SymmetricAndTriangleInequality) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 500; ++trial) {
        const int d = 2 + trial % 4;
        const DirectedGraph a = random_graph(d, 0.4, rng), b = random_graph(d, 0.4, rng),
                            c = random_graph(d, 0.4, rng);
        EXPECT_EQ(shd(a, b), shd(b, a));
        EXPECT_LE(shd(a, c), shd(a, b) + shd(b, c));
    }
}

TEST(Auprc, PerfectRankingIsOne) {
    const DirectedGraph truth = DirectedGraph::from_edges(4, {{0, 1}, {2, 3}, {3, 0}});
    EXPECT_DOUBLE_EQ(auprc(EdgeScoreMatrix(truth.adjacency()), truth), 1.0);
}

TEST(Auprc, ConstantScoresGivePrevalence) {
    const DirectedGraph truth = DirectedGraph::from_edges(4, {{0, 1}, {2, 3}, {3, 0}});
    Eigen::MatrixXd s = Eigen::MatrixXd::Constant(4, 4, 0.3);
    s.diagonal().setZero();
    EXPECT_NEAR(auprc(EdgeScoreMatrix(s), truth), 3.0 / 12.0, 1e-15);
}

TEST(Auprc, HandBuiltThreeNodeCase) {
    // Ranking: (0,1)+ 0.9, (1,2)- 0.8, (2,0)+ 0.7 tied with (0,2)- 0.7, (1,0)+ 0.2, (2,1)- 0.1
    Eigen::MatrixXd s(3, 3);
    s << 0.0, 0.9, 0.7,
         0.2, 0.0, 0.8,
         0.7, 0.1, 0.0;
    const DirectedGraph truth = DirectedGraph::from_edges(3, {{0, 1}, {2, 0}, {1, 0}});
    // Thresholds: 0.9 -> P=1,R=1/3 ; 0.8 -> P=1/2,R=1/3 ; 0.7 -> P=2/4,R=2/3 ;
    // 0.2 -> P=3/5,R=1 ; 0.1 -> P=3/6,R=1.  AP = 1/3*1 + 1/3*1/2 + 1/3*3/5.
    const double expected = 1.0 / 3.0 + 1.0 / 6.0 + 1.0 / 5.0;
    EXPECT_NEAR(oracle::auprc_by_threshold_enumeration(s, truth), expected, 1e-15);
    EXPECT_NEAR(auprc(EdgeScoreMatrix(s), truth), expected, 1e-15);
}

TEST(Auprc, UndefinedWithoutTrueEdges) {
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(3, 3);
    EXPECT_THROW(auprc(EdgeScoreMatrix(s), DirectedGraph(3)), UndefinedMetricError);
}

TEST(Auprc, MatchesThresholdEnumerationOnRandomTiedScores) {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> level(0, 4);
    for (int trial = 0; trial < 300; ++trial) {
        const int d = 2 + trial % 3;
        DirectedGraph truth = random_graph(d, 0.5, rng);
        if (truth.edge_count() == 0) truth.set_edge(0, 1);
        Eigen::MatrixXd s = Eigen::MatrixXd::Zero(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                if (i != j) s(i, j) = level(rng) / 4.0;
        EXPECT_NEAR(auprc(EdgeScoreMatrix(s), truth),
                    oracle::auprc_by_threshold_enumeration(s, truth), 1e-14);
    }
}

TEST(ThresholdEdges, BoundaryAndEmpty) {
    EXPECT_EQ(threshold_edges(EdgeScoreMatrix(Eigen::MatrixXd::Zero(3, 3)), 0.8).edge_count(), 0);
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(2, 2);
    s(0, 1) = 0.8;
    EXPECT_TRUE(threshold_edges(EdgeScoreMatrix(s), 0.8).has_edge(0, 1));
    EXPECT_THROW(threshold_edges(EdgeScoreMatrix(s), 1.0), ParameterError);
}

TEST(ThresholdEdges, NoisyTruthMissesOnlyLowScoredEdges) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> noise(-0.05, 0.05);
    const DirectedGraph truth = erdos_renyi(8, 2.0, 3);
    Eigen::MatrixXd s = truth.adjacency();
    int expected_misses = 0;
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            if (i == j) continue;
            s(i, j) = std::clamp(s(i, j) + noise(rng), 0.0, 1.0);
            if (truth.has_edge(i, j) && s(i, j) < 0.8) ++expected_misses;
        }
    EXPECT_EQ(shd(threshold_edges(EdgeScoreMatrix(s), 0.8), truth), expected_misses);
}

TEST(ThresholdEdges, MonotoneInTau) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(6, 6);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j)
            if (i != j) s(i, j) = u(rng);
    const EdgeScoreMatrix scores(s);
    int prev = 1 << 30;
    for (double tau = 0.05; tau < 1.0; tau += 0.05) {
        const int count = threshold_edges(scores, tau).edge_count();
        EXPECT_LE(count, prev);
        prev = count;
    }
}
