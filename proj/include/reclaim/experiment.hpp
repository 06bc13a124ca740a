#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "reclaim/em.hpp"
#include "reclaim/graph.hpp"
#include "reclaim/measurement.hpp"
#include "reclaim/scm.hpp"

namespace reclaim {

/// Synthetic benchmark problem: ER graph, contractive SCM, single-node interventions and a
/// measurement channel with per-coordinate noise sd ~ U[sigma_min, sigma_max].
struct ProblemSpec {
    int d = 10;
    double density = 2.0;
    double beta = 1.0;
    int n = 1000;                     // samples per regime
    bool include_observational = true;
    double sigma_I_sq = 1.0;
    double target_lipschitz = 0.9;
    ChannelKind channel = ChannelKind::GaussianAdditive;
    double sigma_min = 0.3;
    double sigma_max = 0.6;
    int p = 15;                       // linear channel only
    double a_variance = 1.5;          // A_ij ~ N(0, a_variance)
    bool known_noise = false;         // give the fit the true variances
    LinearNoiseMethod linear_noise = LinearNoiseMethod::Pooled;

    void validate() const;
};

struct Problem {
    GroundTruthScm scm;
    InterventionFamily family;
    MeasurementChannel channel;
    RegimeData latents;
    RegimeData observations;
};

/// Measured samples for every regime of the family, n rows each.
RegimeData simulate_observations(const GroundTruthScm& scm, const InterventionFamily& family,
                                 const MeasurementChannel& channel, int n, std::uint64_t seed,
                                 RegimeData* latents = nullptr);

Problem simulate_problem(const ProblemSpec& spec, std::uint64_t seed);

/// Channel description handed to fit(); the noise is estimated unless `known_noise`.
ChannelSpec channel_spec_for(const MeasurementChannel& truth, bool known_noise,
                             LinearNoiseMethod method = LinearNoiseMethod::Pooled);

std::string to_string(LinearNoiseMethod method);
LinearNoiseMethod linear_noise_method_from_string(const std::string& name);

struct TrialResult {
    double auprc = 0.0;
    int shd = 0;
    double seconds = 0.0;
};

TrialResult evaluate_scores(const EdgeScoreMatrix& scores, const DirectedGraph& truth,
                            double threshold = 0.8);

/// EM seed used when fitting a problem simulated from `seed`.
std::uint64_t fit_seed(std::uint64_t seed);

/// Simulate, fit and score one problem instance.
TrialResult run_trial(const ProblemSpec& spec, const EmConfig& cfg, std::uint64_t seed,
                      double threshold = 0.8);

enum class SweepParam { SigmaMin, NNodes, NMeasurements, Beta, Density };

std::string to_string(SweepParam param);
SweepParam sweep_param_from_string(const std::string& name);

/// Problem with one axis moved to `value`. The sigma_min axis keeps sigma_max = sigma_min + 0.3.
ProblemSpec apply_sweep_value(ProblemSpec spec, SweepParam param, double value);

struct ExperimentConfig {
    std::uint64_t seed = 0;
    ProblemSpec problem;
    EmConfig em;
    SweepParam sweep_param = SweepParam::NMeasurements;
    std::vector<double> values;
    int n_trials = 5;
    double threshold = 0.8;
    int workers = 1;

    void validate() const;
};

/// Reads the JSON experiment config; absent keys keep their defaults.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);
/// EM settings; the EM seed is not a config key (it derives from the top-level seed).
EmConfig em_config_from_json(const nlohmann::json& j, EmConfig base = {});
nlohmann::json em_config_to_json(const EmConfig& cfg);

struct SweepRow {
    std::string param;
    double value = 0.0;
    int trial = 0;
    TrialResult result;
};

/// Runs every (value, trial) cell, caching each finished cell under `out_dir/cells` so an
/// interrupted sweep resumes where it stopped, then writes `out_dir/results.csv`.
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                std::ostream* log = nullptr);

std::string results_csv(const std::vector<SweepRow>& rows);

} // namespace reclaim
