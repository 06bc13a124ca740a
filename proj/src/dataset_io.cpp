#include "reclaim/dataset_io.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "reclaim/errors.hpp"

namespace reclaim::io {

json graph_to_json(const DirectedGraph& g) {
    json edges = json::array();
    for (auto [i, j] : g.edges()) edges.push_back({i, j});
    return {{"d", g.size()}, {"edges", edges}};
}

DirectedGraph graph_from_json(const json& j) {
    try {
        DirectedGraph g(j.at("d").get<int>());
        for (const auto& e : j.at("edges")) g.set_edge(e.at(0).get<int>(), e.at(1).get<int>());
        return g;
    } catch (const json::exception& e) {
        throw ParameterError(std::string("malformed graph JSON: ") + e.what());
    }
}

json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
    if (!j.is_array()) throw ParameterError("matrix JSON must be an array of rows");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = rows > 0 ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        if (static_cast<Eigen::Index>(j.at(i).size()) != cols)
            throw ParameterError("ragged matrix JSON");
        for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j.at(i).at(c).get<double>();
    }
    return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

Eigen::VectorXd vector_from_json(const json& j) {
    if (!j.is_array()) throw ParameterError("vector JSON must be an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j.at(i).get<double>();
    return v;
}

json channel_to_json(const MeasurementChannel& channel) {
    json j{{"sigma_sq", vector_to_json(channel.sigma_sq())}};
    if (channel.kind() == ChannelKind::GaussianAdditive) {
        j["type"] = "gan";
    } else {
        j["type"] = "linear";
        j["A"] = matrix_to_json(channel.matrix());
    }
    return j;
}

MeasurementChannel channel_from_json(const json& j) {
    try {
        const std::string type = j.at("type").get<std::string>();
        Eigen::VectorXd sigma_sq = vector_from_json(j.at("sigma_sq"));
        if (type == "gan") return MeasurementChannel::gaussian_additive(std::move(sigma_sq));
        if (type == "linear")
            return MeasurementChannel::linear(matrix_from_json(j.at("A")), std::move(sigma_sq));
        throw ParameterError("unknown channel type '" + type + "'");
    } catch (const json::exception& e) {
        throw ParameterError(std::string("malformed channel JSON: ") + e.what());
    }
}

json family_to_json(const InterventionFamily& family) {
    json regimes = json::array();
    for (const auto& r : family.regimes)
        regimes.push_back({{"targets", r.targets}, {"sigma_I_sq", r.sigma_I_sq}, {"mean", r.mean}});
    return {{"regimes", regimes}};
}

InterventionFamily family_from_json(const json& j) {
    try {
        InterventionFamily family;
        for (const auto& r : j.at("regimes")) {
            InterventionRegime regime;
            regime.targets = r.at("targets").get<std::vector<int>>();
            regime.sigma_I_sq = r.value("sigma_I_sq", 1.0);
            regime.mean = r.value("mean", 0.0);
            family.regimes.push_back(std::move(regime));
        }
        return family;
    } catch (const json::exception& e) {
        throw ParameterError(std::string("malformed family JSON: ") + e.what());
    }
}

json params_to_json(const ModelParams& p) {
    // The pinned -inf diagonal of Gamma is not representable in JSON; it is restored on load.
    Eigen::MatrixXd gamma = p.gamma;
    gamma.diagonal().setZero();
    return {{"d", p.d},
            {"h", p.h},
            {"W1", matrix_to_json(p.W1)},
            {"b1", vector_to_json(p.b1)},
            {"W2", matrix_to_json(p.W2)},
            {"b2", vector_to_json(p.b2)},
            {"gamma", matrix_to_json(gamma)},
            {"lipschitz_target", p.lipschitz_target},
            {"sigma_z", vector_to_json(p.sigma_z)},
            {"activation", p.activation == Activation::Tanh ? "tanh" : "identity"},
            {"power_iteration",
             {{"W1", {{"left", vector_to_json(p.power1.left)},
                      {"right", vector_to_json(p.power1.right)}}},
              {"W2", {{"left", vector_to_json(p.power2.left)},
                      {"right", vector_to_json(p.power2.right)}}}}}};
}

ModelParams params_from_json(const json& j) {
    try {
        ModelParams p = ModelParams::zeros(j.at("d").get<int>(), j.at("h").get<int>());
        p.W1 = matrix_from_json(j.at("W1"));
        p.b1 = vector_from_json(j.at("b1"));
        p.W2 = matrix_from_json(j.at("W2"));
        p.b2 = vector_from_json(j.at("b2"));
        p.gamma = matrix_from_json(j.at("gamma"));
        for (int i = 0; i < p.d; ++i) p.gamma(i, i) = -std::numeric_limits<double>::infinity();
        p.lipschitz_target = j.at("lipschitz_target").get<double>();
        p.sigma_z = vector_from_json(j.at("sigma_z"));
        p.activation = j.at("activation").get<std::string>() == "tanh" ? Activation::Tanh
                                                                        : Activation::Identity;
        const auto& pi = j.at("power_iteration");
        p.power1 = {vector_from_json(pi.at("W1").at("left")), vector_from_json(pi.at("W1").at("right"))};
        p.power2 = {vector_from_json(pi.at("W2").at("left")), vector_from_json(pi.at("W2").at("right"))};
        p.validate();
        return p;
    } catch (const json::exception& e) {
        throw ParameterError(std::string("malformed checkpoint JSON: ") + e.what());
    }
}

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double number_from(const json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

} // namespace

json fit_state_to_json(const FitState& s) {
    json trace = json::array();
    for (const auto& row : s.trace)
        trace.push_back({{"round", row.round},
                         {"q_value", number_or_null(row.q_value)},
                         {"elbo", number_or_null(row.elbo)},
                         {"ess_median", number_or_null(row.ess_median)}});
    return {{"theta", params_to_json(s.theta)},
            {"adam",
             {{"m", vector_to_json(s.adam.m)},
              {"v", vector_to_json(s.adam.v)},
              {"step", s.adam.step},
              {"learning_rate", s.adam.learning_rate},
              {"lr_halved", s.adam.lr_halved}}},
            {"rounds_completed", s.rounds_completed},
            {"converged", s.converged},
            {"skipped_observations", s.skipped_observations},
            {"widened_proposals", s.widened_proposals},
            {"trace", trace}};
}

FitState fit_state_from_json(const json& j) {
    try {
        FitState s;
        s.theta = params_from_json(j.at("theta"));
        const auto& a = j.at("adam");
        s.adam.m = vector_from_json(a.at("m"));
        s.adam.v = vector_from_json(a.at("v"));
        s.adam.step = a.at("step").get<long long>();
        s.adam.learning_rate = a.at("learning_rate").get<double>();
        s.adam.lr_halved = a.at("lr_halved").get<bool>();
        s.rounds_completed = j.at("rounds_completed").get<int>();
        s.converged = j.at("converged").get<bool>();
        s.skipped_observations = j.at("skipped_observations").get<int>();
        s.widened_proposals = j.at("widened_proposals").get<int>();
        for (const auto& row : j.at("trace"))
            s.trace.push_back({row.at("round").get<int>(), number_from(row.at("q_value")),
                               number_from(row.at("elbo")), number_from(row.at("ess_median"))});
        return s;
    } catch (const json::exception& e) {
        throw ParameterError(std::string("malformed checkpoint JSON: ") + e.what());
    }
}

json scores_to_json(const EdgeScoreMatrix& scores) {
    return {{"d", scores.size()}, {"scores", matrix_to_json(scores.values())}};
}

EdgeScoreMatrix scores_from_json(const json& j) {
    try {
        return EdgeScoreMatrix(matrix_from_json(j.at("scores")));
    } catch (const json::exception& e) {
        throw ParameterError(std::string("malformed score JSON: ") + e.what());
    }
}

void write_csv(const fs::path& path, const Eigen::MatrixXd& m, const std::string& prefix) {
    std::ostringstream out;
    out << std::setprecision(17);
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << prefix << j;
    out << "\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << m(i, j);
        out << "\n";
    }
    write_text_atomic(path, out.str());
}

Eigen::MatrixXd read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ParameterError("empty CSV file " + path.string());
    const auto cols = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ',') + 1);
    std::vector<double> values;
    Eigen::Index rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        Eigen::Index count = 0;
        while (std::getline(ss, cell, ',')) {
            std::size_t used = 0;
            double v;
            try {
                v = std::stod(cell, &used);
            } catch (const std::exception&) {
                throw ParameterError("malformed CSV value '" + cell + "' in " + path.string());
            }
            if (used != cell.size() && cell.find_first_not_of(" \r", used) != std::string::npos)
                throw ParameterError("malformed CSV value '" + cell + "' in " + path.string());
            values.push_back(v);
            ++count;
        }
        if (count != cols)
            throw ParameterError("CSV row " + std::to_string(rows + 1) + " of " + path.string() +
                                 " has " + std::to_string(count) + " fields, expected " +
                                 std::to_string(cols));
        ++rows;
    }
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = values[i * cols + j];
    return m;
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ParameterError("invalid JSON in " + path.string() + ": " + e.what());
    }
}

void write_text_atomic(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << content;
        if (!out) throw IoError("failed writing " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

Dataset load_dataset(const fs::path& dir) {
    Dataset ds;
    ds.family = family_from_json(read_json(dir / "family.json"));
    ds.channel = read_json(dir / "channel.json");
    for (std::size_t k = 0; k < ds.family.regimes.size(); ++k)
        ds.regimes.push_back(read_csv(dir / ("regime_" + std::to_string(k) + ".csv")));
    return ds;
}

} // namespace reclaim::io
