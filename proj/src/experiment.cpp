#include "reclaim/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "reclaim/dataset_io.hpp"
#include "reclaim/errors.hpp"
#include "reclaim/random.hpp"

namespace reclaim {

using nlohmann::json;

namespace {

enum SeedTag : std::uint64_t { kGraph = 1, kWeights, kChannel, kLatents, kMeasure, kFit, kTrial };

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
    if (!j.is_object()) throw ParameterError(where + " must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key)) throw ParameterError("unknown key '" + key + "' in " + where);
}

template <class T>
void read_key(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ParameterError(std::string("invalid value for '") + key + "'");
    }
}

std::string channel_name(ChannelKind kind) {
    return kind == ChannelKind::Linear ? "linear" : "gan";
}

ChannelKind channel_kind_from(const std::string& name) {
    if (name == "gan") return ChannelKind::GaussianAdditive;
    if (name == "linear") return ChannelKind::Linear;
    throw ParameterError("channel must be \"gan\" or \"linear\"");
}

ProblemSpec problem_from_json(const json& j, ProblemSpec spec) {
    reject_unknown_keys(j,
                        {"d", "density", "beta", "n", "include_observational", "sigma_I_sq",
                         "target_lipschitz", "channel", "sigma_min", "sigma_max", "p",
                         "a_variance", "known_noise", "linear_noise"},
                        "problem");
    read_key(j, "d", spec.d);
    read_key(j, "density", spec.density);
    read_key(j, "beta", spec.beta);
    read_key(j, "n", spec.n);
    read_key(j, "include_observational", spec.include_observational);
    read_key(j, "sigma_I_sq", spec.sigma_I_sq);
    read_key(j, "target_lipschitz", spec.target_lipschitz);
    if (j.contains("channel")) {
        std::string name;
        read_key(j, "channel", name);
        spec.channel = channel_kind_from(name);
    }
    read_key(j, "sigma_min", spec.sigma_min);
    read_key(j, "sigma_max", spec.sigma_max);
    read_key(j, "p", spec.p);
    read_key(j, "a_variance", spec.a_variance);
    read_key(j, "known_noise", spec.known_noise);
    if (j.contains("linear_noise")) {
        std::string name;
        read_key(j, "linear_noise", name);
        spec.linear_noise = linear_noise_method_from_string(name);
    }
    return spec;
}

json problem_to_json(const ProblemSpec& s) {
    return {{"d", s.d},
            {"density", s.density},
            {"beta", s.beta},
            {"n", s.n},
            {"include_observational", s.include_observational},
            {"sigma_I_sq", s.sigma_I_sq},
            {"target_lipschitz", s.target_lipschitz},
            {"channel", channel_name(s.channel)},
            {"sigma_min", s.sigma_min},
            {"sigma_max", s.sigma_max},
            {"p", s.p},
            {"a_variance", s.a_variance},
            {"known_noise", s.known_noise},
            {"linear_noise", to_string(s.linear_noise)}};
}

std::string format_number(double v) {
    std::ostringstream out;
    out << std::setprecision(12) << v;
    return out.str();
}

} // namespace

void ProblemSpec::validate() const {
    if (d < 2) throw ParameterError("d must be at least 2");
    if (!(density > 0.0) || density > d - 1) throw ParameterError("density must lie in (0, d-1]");
    if (beta < 0.0 || beta > 1.0) throw ParameterError("beta must lie in [0, 1]");
    if (n < 0) throw ParameterError("n must be non-negative");
    if (!(sigma_I_sq > 0.0)) throw ParameterError("sigma_I_sq must be positive");
    if (!(target_lipschitz > 0.0 && target_lipschitz < 1.0))
        throw ParameterError("target_lipschitz must lie in (0, 1)");
    if (!(sigma_min > 0.0) || sigma_max < sigma_min)
        throw ParameterError("need 0 < sigma_min <= sigma_max");
    if (channel == ChannelKind::Linear) {
        if (p < d) throw ParameterError("linear channel needs p >= d");
        if (!(a_variance > 0.0)) throw ParameterError("a_variance must be positive");
    }
}

RegimeData simulate_observations(const GroundTruthScm& scm, const InterventionFamily& family,
                                 const MeasurementChannel& channel, int n, std::uint64_t seed,
                                 RegimeData* latents) {
    RegimeData out;
    if (latents) latents->clear();
    for (std::size_t k = 0; k < family.regimes.size(); ++k) {
        Eigen::MatrixXd x = sample_latents(scm, family.regimes[k], n, derive_seed(seed, {kLatents, k}));
        out.push_back(channel.measure_rows(x, derive_seed(seed, {kMeasure, k})));
        if (latents) latents->push_back(std::move(x));
    }
    return out;
}

Problem simulate_problem(const ProblemSpec& spec, std::uint64_t seed) {
    spec.validate();
    const int d = spec.d;
    const DirectedGraph graph = erdos_renyi(d, spec.density, derive_seed(seed, {kGraph}));
    GroundTruthScm scm = sample_benchmark_scm(graph, spec.beta, derive_seed(seed, {kWeights}),
                                              spec.target_lipschitz);

    Rng rng = make_rng(seed, {kChannel});
    std::uniform_real_distribution<double> sd(spec.sigma_min, spec.sigma_max);
    const int p = spec.channel == ChannelKind::Linear ? spec.p : d;
    Eigen::VectorXd sigma_sq(p);
    for (int j = 0; j < p; ++j) sigma_sq[j] = std::pow(sd(rng), 2);

    std::optional<MeasurementChannel> channel;
    if (spec.channel == ChannelKind::GaussianAdditive) {
        channel = MeasurementChannel::gaussian_additive(sigma_sq);
    } else {
        std::normal_distribution<double> entry(0.0, std::sqrt(spec.a_variance));
        Eigen::MatrixXd A(p, d);
        for (int i = 0; i < p; ++i)
            for (int j = 0; j < d; ++j) A(i, j) = entry(rng);
        channel = MeasurementChannel::linear(A, sigma_sq);
    }

    InterventionFamily family =
        InterventionFamily::single_node(d, spec.include_observational, spec.sigma_I_sq);
    Problem problem{std::move(scm), std::move(family), *channel, {}, {}};
    problem.observations = simulate_observations(problem.scm, problem.family, problem.channel,
                                                 spec.n, seed, &problem.latents);
    return problem;
}

std::string to_string(LinearNoiseMethod method) {
    return method == LinearNoiseMethod::Pooled ? "pooled" : "projection";
}

LinearNoiseMethod linear_noise_method_from_string(const std::string& name) {
    if (name == "pooled") return LinearNoiseMethod::Pooled;
    if (name == "projection") return LinearNoiseMethod::Projection;
    throw ParameterError("linear_noise must be \"pooled\" or \"projection\"");
}

ChannelSpec channel_spec_for(const MeasurementChannel& truth, bool known_noise,
                             LinearNoiseMethod method) {
    ChannelSpec spec;
    spec.kind = truth.kind();
    spec.linear_method = method;
    if (truth.kind() == ChannelKind::Linear) spec.A = truth.matrix();
    if (known_noise) spec.known_sigma_sq = truth.sigma_sq();
    return spec;
}

TrialResult evaluate_scores(const EdgeScoreMatrix& scores, const DirectedGraph& truth,
                            double threshold) {
    TrialResult r;
    r.auprc = auprc(scores, truth);
    r.shd = shd(threshold_edges(scores, threshold), truth);
    return r;
}

std::uint64_t fit_seed(std::uint64_t seed) { return derive_seed(seed, {kFit}); }

TrialResult run_trial(const ProblemSpec& spec, const EmConfig& cfg, std::uint64_t seed,
                      double threshold) {
    const auto start = std::chrono::steady_clock::now();
    const Problem problem = simulate_problem(spec, seed);
    EmConfig em = cfg;
    em.seed = fit_seed(seed);
    const FitReport report = fit(problem.observations, problem.family,
                                 channel_spec_for(problem.channel, spec.known_noise, spec.linear_noise), em);
    TrialResult r = evaluate_scores(report.edge_scores, problem.scm.graph, threshold);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

std::string to_string(SweepParam param) {
    switch (param) {
    case SweepParam::SigmaMin: return "sigma_min";
    case SweepParam::NNodes: return "n_nodes";
    case SweepParam::NMeasurements: return "n_measurements";
    case SweepParam::Beta: return "beta";
    case SweepParam::Density: return "density";
    }
    return "unknown";
}

SweepParam sweep_param_from_string(const std::string& name) {
    for (SweepParam p : {SweepParam::SigmaMin, SweepParam::NNodes, SweepParam::NMeasurements,
                         SweepParam::Beta, SweepParam::Density})
        if (to_string(p) == name) return p;
    throw ParameterError("unknown sweep parameter '" + name + "'");
}

ProblemSpec apply_sweep_value(ProblemSpec spec, SweepParam param, double value) {
    switch (param) {
    case SweepParam::SigmaMin:
        spec.sigma_min = value;
        spec.sigma_max = value + 0.3;
        break;
    case SweepParam::NNodes:
        spec.d = static_cast<int>(std::lround(value));
        break;
    case SweepParam::NMeasurements:
        spec.channel = ChannelKind::Linear;
        spec.p = static_cast<int>(std::lround(value));
        break;
    case SweepParam::Beta:
        spec.beta = value;
        break;
    case SweepParam::Density:
        spec.density = value;
        break;
    }
    return spec;
}

void ExperimentConfig::validate() const {
    if (values.empty()) throw ParameterError("sweep grid must not be empty");
    if (n_trials < 1) throw ParameterError("n_trials must be at least 1");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ParameterError("threshold must lie in (0, 1)");
    if (workers < 1) throw ParameterError("workers must be at least 1");
    em.validate();
    for (double v : values) apply_sweep_value(problem, sweep_param, v).validate();
}

EmConfig em_config_from_json(const json& j, EmConfig cfg) {
    reject_unknown_keys(j,
                        {"lambda", "learning_rate", "em_rounds", "m_steps", "batch_size", "S", "R",
                         "temperature", "hard_mask", "train_logdet", "poisson_rate", "min_terms",
                         "n_probes", "convergence_tol", "init_std", "lipschitz_target",
                         "elbo_samples", "max_skip_fraction"},
                        "em");
    read_key(j, "lambda", cfg.lambda);
    read_key(j, "learning_rate", cfg.learning_rate);
    read_key(j, "em_rounds", cfg.em_rounds);
    read_key(j, "m_steps", cfg.m_steps_per_round);
    read_key(j, "batch_size", cfg.batch_size);
    read_key(j, "S", cfg.S);
    read_key(j, "R", cfg.R);
    read_key(j, "temperature", cfg.temperature);
    read_key(j, "hard_mask", cfg.hard_mask_training);
    if (j.contains("train_logdet")) {
        std::string mode;
        read_key(j, "train_logdet", mode);
        if (mode == "exact") cfg.train_logdet = LogDetMode::Exact;
        else if (mode == "unbiased") cfg.train_logdet = LogDetMode::Unbiased;
        else throw ParameterError("train_logdet must be \"exact\" or \"unbiased\"");
    }
    read_key(j, "poisson_rate", cfg.logdet.poisson_rate);
    read_key(j, "min_terms", cfg.logdet.min_terms);
    read_key(j, "n_probes", cfg.logdet.n_probes);
    read_key(j, "convergence_tol", cfg.convergence_tol);
    read_key(j, "init_std", cfg.init_std);
    read_key(j, "lipschitz_target", cfg.lipschitz_target);
    read_key(j, "elbo_samples", cfg.elbo_samples);
    read_key(j, "max_skip_fraction", cfg.max_skip_fraction);
    cfg.validate();
    return cfg;
}

json em_config_to_json(const EmConfig& c) {
    return {{"lambda", c.lambda},
            {"learning_rate", c.learning_rate},
            {"em_rounds", c.em_rounds},
            {"m_steps", c.m_steps_per_round},
            {"batch_size", c.batch_size},
            {"S", c.S},
            {"R", c.R},
            {"temperature", c.temperature},
            {"hard_mask", c.hard_mask_training},
            {"train_logdet", c.train_logdet == LogDetMode::Exact ? "exact" : "unbiased"},
            {"poisson_rate", c.logdet.poisson_rate},
            {"min_terms", c.logdet.min_terms},
            {"n_probes", c.logdet.n_probes},
            {"convergence_tol", c.convergence_tol},
            {"init_std", c.init_std},
            {"lipschitz_target", c.lipschitz_target},
            {"elbo_samples", c.elbo_samples},
            {"max_skip_fraction", c.max_skip_fraction}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
    reject_unknown_keys(j, {"seed", "problem", "em", "sweep"}, "config");
    ExperimentConfig cfg;
    read_key(j, "seed", cfg.seed);
    if (j.contains("problem")) cfg.problem = problem_from_json(j.at("problem"), cfg.problem);
    if (j.contains("em")) cfg.em = em_config_from_json(j.at("em"), cfg.em);
    if (j.contains("sweep")) {
        const json& s = j.at("sweep");
        reject_unknown_keys(s, {"param", "values", "n_trials", "threshold", "workers"}, "sweep");
        if (s.contains("param")) {
            std::string name;
            read_key(s, "param", name);
            cfg.sweep_param = sweep_param_from_string(name);
        }
        read_key(s, "values", cfg.values);
        read_key(s, "n_trials", cfg.n_trials);
        read_key(s, "threshold", cfg.threshold);
        read_key(s, "workers", cfg.workers);
    }
    return cfg;
}

json experiment_config_to_json(const ExperimentConfig& cfg) {
    return {{"seed", cfg.seed},
            {"problem", problem_to_json(cfg.problem)},
            {"em", em_config_to_json(cfg.em)},
            {"sweep",
             {{"param", to_string(cfg.sweep_param)},
              {"values", cfg.values},
              {"n_trials", cfg.n_trials},
              {"threshold", cfg.threshold},
              {"workers", cfg.workers}}}};
}

std::string results_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream out;
    out << "sweep_param,value,trial,auprc,shd,seconds\n";
    for (const SweepRow& r : rows)
        out << r.param << ',' << format_number(r.value) << ',' << r.trial << ','
            << format_number(r.result.auprc) << ',' << r.result.shd << ','
            << format_number(r.result.seconds) << '\n';
    return out.str();
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                std::ostream* log) {
    namespace fs = std::filesystem;
    cfg.validate();
    const fs::path cells = out_dir / "cells";
    std::error_code ec;
    fs::create_directories(cells, ec);
    if (ec) throw IoError("cannot create " + cells.string() + ": " + ec.message());

    const std::string param = to_string(cfg.sweep_param);
    std::vector<SweepRow> rows;
    for (double v : cfg.values)
        for (int t = 0; t < cfg.n_trials; ++t) rows.push_back({param, v, t, {}});

    // A cell file records its own settings, so a stale cache from a different config is redone.
    auto cell_key = [&](const SweepRow& row) {
        json key = experiment_config_to_json(cfg);
        key["sweep"].erase("values");
        key["sweep"].erase("n_trials");
        key["sweep"].erase("workers");
        key["cell"] = {{"value", row.value}, {"trial", row.trial}};
        return key;
    };
    auto cell_path = [&](const SweepRow& row) {
        return cells / (param + "_" + format_number(row.value) + "_trial" +
                        std::to_string(row.trial) + ".json");
    };

    std::mutex log_mutex;
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;

    auto worker = [&] {
        for (std::size_t k = next++; k < rows.size(); k = next++) {
            SweepRow& row = rows[k];
            const fs::path path = cell_path(row);
            const json key = cell_key(row);
            try {
                if (fs::exists(path)) {
                    const json cached = io::read_json(path);
                    if (cached.value("key", json()) == key) {
                        row.result.auprc = cached.at("auprc").get<double>();
                        row.result.shd = cached.at("shd").get<int>();
                        row.result.seconds = cached.at("seconds").get<double>();
                        continue;
                    }
                }
                const ProblemSpec spec = apply_sweep_value(cfg.problem, cfg.sweep_param, row.value);
                row.result = run_trial(spec, cfg.em,
                                       derive_seed(cfg.seed, {kTrial, static_cast<std::uint64_t>(row.trial)}),
                                       cfg.threshold);
                io::write_json(path, {{"key", key},
                                      {"auprc", row.result.auprc},
                                      {"shd", row.result.shd},
                                      {"seconds", row.result.seconds}});
                if (log) {
                    std::lock_guard lock(log_mutex);
                    *log << param << '=' << format_number(row.value) << " trial " << row.trial
                         << ": auprc " << row.result.auprc << ", shd " << row.result.shd << " ("
                         << row.result.seconds << " s)\n";
                }
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = rows.size();
            }
        }
    };

    const int n_threads = std::min<int>(cfg.workers, static_cast<int>(rows.size()));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);

    io::write_text_atomic(out_dir / "results.csv", results_csv(rows));
    return rows;
}

} // namespace reclaim
