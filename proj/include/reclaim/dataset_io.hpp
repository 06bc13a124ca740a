#pragma once

#include <filesystem>
#include <string>

#include <Eigen/Core>
#include <json.hpp>

#include "reclaim/em.hpp"
#include "reclaim/graph.hpp"
#include "reclaim/measurement.hpp"
#include "reclaim/scm.hpp"

namespace reclaim::io {

using nlohmann::json;
namespace fs = std::filesystem;

json graph_to_json(const DirectedGraph& g);
DirectedGraph graph_from_json(const json& j);

/// {"type": "gan" | "linear", "sigma_sq": [...], "A": [[...], ...]}
json channel_to_json(const MeasurementChannel& channel);
MeasurementChannel channel_from_json(const json& j);

json family_to_json(const InterventionFamily& family);
InterventionFamily family_from_json(const json& j);

json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const json& j);
json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const json& j);

json params_to_json(const ModelParams& params);
ModelParams params_from_json(const json& j);

/// Checkpoint: model, optimiser moments, completed rounds and the trace so far.
json fit_state_to_json(const FitState& state);
FitState fit_state_from_json(const json& j);

json scores_to_json(const EdgeScoreMatrix& scores);
EdgeScoreMatrix scores_from_json(const json& j);

/// Header `<prefix>0,<prefix>1,...` then one row per sample, 17 significant digits.
void write_csv(const fs::path& path, const Eigen::MatrixXd& m, const std::string& prefix = "y");
/// Throws ParameterError on malformed content and IoError when the file cannot be read.
Eigen::MatrixXd read_csv(const fs::path& path);

json read_json(const fs::path& path);
/// Writes to a temporary sibling and renames it into place.
void write_text_atomic(const fs::path& path, const std::string& content);
void write_json(const fs::path& path, const json& j);

struct Dataset {
    RegimeData regimes;
    InterventionFamily family;
    json channel;   // channel.json contents
};

/// Reads regime_<k>.csv, family.json and channel.json from a dataset directory.
Dataset load_dataset(const fs::path& dir);

} // namespace reclaim::io
