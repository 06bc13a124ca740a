#include <cmath>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "reclaim/dataset_io.hpp"
#include "reclaim/errors.hpp"
#include "reclaim/experiment.hpp"

using namespace reclaim;
namespace fs = std::filesystem;

namespace {

class TempDir : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("reclaim_io_" + std::to_string(std::random_device{}()) + "_" +
                ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    void write(const std::string& name, const std::string& text) {
        std::ofstream(dir_ / name) << text;
    }

    fs::path dir_;
};

} // namespace

TEST(JsonCodec, GraphRoundTrip) {
    const DirectedGraph g = DirectedGraph::from_edges(4, {{0, 1}, {2, 1}, {3, 0}, {1, 3}});
    EXPECT_EQ(io::graph_from_json(io::graph_to_json(g)), g);
    EXPECT_THROW(io::graph_from_json({{"d", 2}, {"edges", {{0, 0}}}}), Error);
    EXPECT_THROW(io::graph_from_json({{"edges", nlohmann::json::array()}}), ParameterError);
}

TEST(JsonCodec, ChannelRoundTrip) {
    const MeasurementChannel gan = MeasurementChannel::gaussian_additive(Eigen::Vector3d(0.1, 0.2, 0.3));
    const MeasurementChannel g2 = io::channel_from_json(io::channel_to_json(gan));
    EXPECT_EQ(g2.kind(), ChannelKind::GaussianAdditive);
    EXPECT_EQ(g2.sigma_sq(), gan.sigma_sq());

    Eigen::MatrixXd A(3, 2);
    A << 1.0 / 3.0, 2, -1, 0.5, 0.25, std::sqrt(2.0);
    const MeasurementChannel lin = MeasurementChannel::linear(A, Eigen::Vector3d(0.7, 0.8, 0.9));
    const MeasurementChannel l2 = io::channel_from_json(io::channel_to_json(lin));
    EXPECT_EQ(l2.kind(), ChannelKind::Linear);
    EXPECT_EQ(l2.matrix(), A);
    EXPECT_EQ(l2.sigma_sq(), lin.sigma_sq());

    EXPECT_THROW(io::channel_from_json({{"type", "poisson"}, {"sigma_sq", {1.0}}}), ParameterError);
    EXPECT_THROW(io::channel_from_json({{"type", "gan"}}), ParameterError);
}

TEST(JsonCodec, FamilyRoundTrip) {
    InterventionFamily f = InterventionFamily::single_node(3, true, 0.5);
    f.regimes[2].mean = 1.25;
    const InterventionFamily g = io::family_from_json(io::family_to_json(f));
    ASSERT_EQ(g.regimes.size(), f.regimes.size());
    for (std::size_t k = 0; k < f.regimes.size(); ++k) {
        EXPECT_EQ(g.regimes[k].targets, f.regimes[k].targets);
        EXPECT_EQ(g.regimes[k].sigma_I_sq, f.regimes[k].sigma_I_sq);
        EXPECT_EQ(g.regimes[k].mean, f.regimes[k].mean);
    }
    EXPECT_THROW(io::family_from_json({{"regimes", {{{"sigma_I_sq", 1.0}}}}}), ParameterError);
}

TEST(JsonCodec, MatrixAndVector) {
    Eigen::MatrixXd m(2, 3);
    m << 0.1, -2e-300, 3.0, 1e300, 1.0 / 7.0, -0.0;
    EXPECT_EQ(io::matrix_from_json(io::matrix_to_json(m)), m);
    const Eigen::Vector3d v(1.0 / 3.0, -5.5, 0.0);
    EXPECT_EQ(io::vector_from_json(io::vector_to_json(v)), Eigen::VectorXd(v));
    EXPECT_THROW(io::matrix_from_json(nlohmann::json::parse("[[1,2],[3]]")), ParameterError);
    EXPECT_THROW(io::matrix_from_json(nlohmann::json::parse("{\"a\":1}")), ParameterError);
    EXPECT_THROW(io::vector_from_json(nlohmann::json::parse("3")), ParameterError);
}

TEST(JsonCodec, ParamsRoundTripIsBitExact) {
    ModelParams p = ModelParams::initialize(4, 9, 0.7);
    p.gamma(0, 1) = 0.123456789012345;
    p.sigma_z[2] = 1.5;
    const ModelParams q = io::params_from_json(io::params_to_json(p));
    EXPECT_EQ(q.pack(), p.pack());
    EXPECT_EQ(q.sigma_z, p.sigma_z);
    EXPECT_EQ(q.lipschitz_target, p.lipschitz_target);
    EXPECT_EQ(q.power1.left, p.power1.left);
    EXPECT_EQ(q.power2.right, p.power2.right);
    EXPECT_TRUE(std::isinf(q.gamma(3, 3)) && q.gamma(3, 3) < 0);
    // Survives a text round trip too.
    const auto text = io::params_to_json(p).dump();
    EXPECT_EQ(io::params_from_json(nlohmann::json::parse(text)).pack(), p.pack());
}

TEST(JsonCodec, FitStateRoundTripResumesIdentically) {
    ProblemSpec spec;
    spec.d = 3;
    spec.n = 30;
    const Problem prob = simulate_problem(spec, 3);
    EmConfig cfg;
    cfg.em_rounds = 4;
    cfg.m_steps_per_round = 4;
    cfg.S = 8;
    cfg.R = 2;
    cfg.elbo_samples = 4;
    cfg.convergence_tol = 0.0;
    const ChannelSpec cs = channel_spec_for(prob.channel, false);
    const FitReport full = fit(prob.observations, prob.family, cs, cfg);

    EmConfig half = cfg;
    half.em_rounds = 2;
    const FitReport first = fit(prob.observations, prob.family, cs, half);
    const std::string text = io::fit_state_to_json(first.state).dump();
    const FitState restored = io::fit_state_from_json(nlohmann::json::parse(text));
    EXPECT_EQ(restored.rounds_completed, 2);
    EXPECT_EQ(restored.adam.step, first.state.adam.step);
    ASSERT_EQ(restored.trace.size(), 2u);
    EXPECT_EQ(restored.trace[1].elbo, first.state.trace[1].elbo);

    const FitReport resumed = fit(prob.observations, prob.family, cs, cfg, restored);
    EXPECT_EQ(resumed.theta.pack(), full.theta.pack());
    EXPECT_EQ(resumed.trace.back().q_value, full.trace.back().q_value);
}

TEST(JsonCodec, NanTraceEntriesBecomeNull) {
    FitState s;
    s.theta = ModelParams::zeros(2);
    s.adam = AdamState::fresh(s.theta, 0.01);
    s.trace.push_back({0, -1.5, std::numeric_limits<double>::quiet_NaN(), 3.0});
    const nlohmann::json j = io::fit_state_to_json(s);
    EXPECT_TRUE(j.at("trace")[0].at("elbo").is_null());
    const FitState back = io::fit_state_from_json(j);
    EXPECT_TRUE(std::isnan(back.trace[0].elbo));
    EXPECT_EQ(back.trace[0].q_value, -1.5);
}

TEST(JsonCodec, ScoresRoundTrip) {
    Eigen::MatrixXd s(2, 2);
    s << 0.0, 0.75, 0.1, 0.0;
    EXPECT_EQ(io::scores_from_json(io::scores_to_json(EdgeScoreMatrix(s))).values(), s);
}

TEST_F(TempDir, CsvRoundTripIsExact) {
    Eigen::MatrixXd m(3, 2);
    m << 1.0 / 3.0, -1e-17, 12345.678901234567, 0.1, -2.5, 7.0;
    io::write_csv(dir_ / "a.csv", m, "x");
    EXPECT_EQ(io::read_csv(dir_ / "a.csv"), m);
    std::ifstream in(dir_ / "a.csv");
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "x0,x1");
    EXPECT_FALSE(fs::exists(dir_ / "a.csv.tmp"));
}

TEST_F(TempDir, CsvErrors) {
    EXPECT_THROW(io::read_csv(dir_ / "missing.csv"), IoError);
    write("empty.csv", "");
    EXPECT_THROW(io::read_csv(dir_ / "empty.csv"), ParameterError);
    write("ragged.csv", "y0,y1\n1,2\n3\n");
    EXPECT_THROW(io::read_csv(dir_ / "ragged.csv"), ParameterError);
    write("text.csv", "y0,y1\n1,abc\n");
    EXPECT_THROW(io::read_csv(dir_ / "text.csv"), ParameterError);
    write("junk.csv", "y0\n1.5x\n");
    EXPECT_THROW(io::read_csv(dir_ / "junk.csv"), ParameterError);
    write("crlf.csv", "y0,y1\r\n1,2\r\n");
    EXPECT_EQ(io::read_csv(dir_ / "crlf.csv"), Eigen::RowVector2d(1, 2));
    write("header_only.csv", "y0,y1\n");
    EXPECT_EQ(io::read_csv(dir_ / "header_only.csv").rows(), 0);
}

TEST_F(TempDir, JsonFileErrors) {
    EXPECT_THROW(io::read_json(dir_ / "missing.json"), IoError);
    write("bad.json", "{ not json");
    EXPECT_THROW(io::read_json(dir_ / "bad.json"), ParameterError);
    io::write_json(dir_ / "ok.json", {{"a", 1}});
    EXPECT_EQ(io::read_json(dir_ / "ok.json").at("a"), 1);
}

TEST_F(TempDir, LoadDataset) {
    ProblemSpec spec;
    spec.d = 2;
    spec.density = 1.0;
    spec.n = 5;
    const Problem p = simulate_problem(spec, 1);
    for (std::size_t k = 0; k < p.observations.size(); ++k)
        io::write_csv(dir_ / ("regime_" + std::to_string(k) + ".csv"), p.observations[k]);
    io::write_json(dir_ / "family.json", io::family_to_json(p.family));
    io::write_json(dir_ / "channel.json", io::channel_to_json(p.channel));
    const io::Dataset ds = io::load_dataset(dir_);
    ASSERT_EQ(ds.regimes.size(), p.observations.size());
    for (std::size_t k = 0; k < ds.regimes.size(); ++k) EXPECT_EQ(ds.regimes[k], p.observations[k]);
    EXPECT_EQ(io::channel_from_json(ds.channel).sigma_sq(), p.channel.sigma_sq());

    fs::remove(dir_ / "regime_1.csv");
    EXPECT_THROW(io::load_dataset(dir_), IoError);
}
