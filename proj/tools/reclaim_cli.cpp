// Command-line front end: simulate datasets, estimate channel noise, fit, evaluate and sweep.

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "reclaim/dataset_io.hpp"
#include "reclaim/em.hpp"
#include "reclaim/errors.hpp"
#include "reclaim/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace reclaim;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitIdentifiability = 4;

struct ConfigOptions {
    std::string path;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
};

void add_config_options(CLI::App* cmd, ConfigOptions& opts, bool required) {
    auto* c = cmd->add_option("-c,--config", opts.path, "JSON config file");
    if (required) c->required();
    cmd->add_option("--set", opts.sets, "Override a config key, e.g. --set em.lambda=0.01")
        ->take_all();
    cmd->add_option("--seed", opts.seed, "Seed (overrides config and RECLAIM_SEED)");
}

std::uint64_t parse_seed(const std::string& text, const std::string& where) {
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
        v = std::stoull(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size() || text.front() == '-')
        throw ParameterError(where + " must be a non-negative integer, got '" + text + "'");
    return v;
}

// "a.b.c=value": value is parsed as JSON when possible, otherwise taken as a string.
void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ParameterError("--set expects key=value, got '" + assignment + "'");
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    json* node = &j;
    std::stringstream ss(path);
    std::string key;
    std::vector<std::string> keys;
    while (std::getline(ss, key, '.')) keys.push_back(key);
    for (std::size_t k = 0; k < keys.size(); ++k) {
        if (keys[k].empty()) throw ParameterError("empty key in --set '" + assignment + "'");
        if (!node->is_object()) throw ParameterError("'" + path + "' does not name a config object");
        if (k + 1 == keys.size()) (*node)[keys[k]] = value;
        else node = &(*node)[keys[k]];
    }
}

ExperimentConfig load_config(const ConfigOptions& opts) {
    json j = json::object();
    if (!opts.path.empty()) {
        if (!fs::is_regular_file(opts.path))
            throw ParameterError("config file '" + opts.path + "' does not exist");
        j = io::read_json(opts.path);
    }
    for (const auto& s : opts.sets) apply_override(j, s);
    ExperimentConfig cfg = experiment_config_from_json(j);
    if (const char* env = std::getenv("RECLAIM_SEED"); env && *env)
        cfg.seed = parse_seed(env, "RECLAIM_SEED");
    if (opts.seed) cfg.seed = *opts.seed;
    return cfg;
}

void ensure_directory(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

std::string number(double v) {
    if (std::isnan(v)) return "nan";
    std::ostringstream out;
    out << std::setprecision(17) << v;
    return out.str();
}

// ---------------------------------------------------------------- simulate

int run_simulate(const ConfigOptions& copts, const fs::path& out) {
    const ExperimentConfig cfg = load_config(copts);
    const Problem problem = simulate_problem(cfg.problem, cfg.seed);
    ensure_directory(out);
    for (std::size_t k = 0; k < problem.observations.size(); ++k)
        io::write_csv(out / ("regime_" + std::to_string(k) + ".csv"), problem.observations[k]);
    io::write_json(out / "family.json", io::family_to_json(problem.family));
    io::write_json(out / "channel.json", io::channel_to_json(problem.channel));
    io::write_json(out / "truth.json", {{"graph", io::graph_to_json(problem.scm.graph)},
                                        {"W", io::matrix_to_json(problem.scm.W)},
                                        {"beta", problem.scm.beta},
                                        {"sigma_z", io::vector_to_json(problem.scm.sigma_z)}});
    io::write_json(out / "config.json", experiment_config_to_json(cfg));
    std::cerr << "wrote " << problem.observations.size() << " regimes of " << cfg.problem.n
              << " rows to " << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- estimate-noise

ChannelSpec channel_spec_from_dataset(const io::Dataset& ds, bool known_noise,
                                      LinearNoiseMethod method) {
    return channel_spec_for(io::channel_from_json(ds.channel), known_noise, method);
}

int run_estimate_noise(const ConfigOptions& copts, const fs::path& data,
                       const std::optional<std::string>& method, fs::path out) {
    const ExperimentConfig cfg = load_config(copts);
    const io::Dataset ds = io::load_dataset(data);
    const LinearNoiseMethod m = method ? linear_noise_method_from_string(*method) : cfg.problem.linear_noise;
    const MeasurementChannel phi_hat =
        estimate_channel(ds.regimes, ds.family, channel_spec_from_dataset(ds, false, m), fit_seed(cfg.seed));
    if (out.empty()) out = data / "phi_hat.json";
    io::write_json(out, io::channel_to_json(phi_hat));
    std::cerr << "wrote " << phi_hat.observed_dim() << " noise variances to " << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- fit

std::string trace_csv(const std::vector<TraceRow>& trace) {
    std::ostringstream out;
    out << "round,q_value,elbo_estimate,ess_median\n";
    for (const auto& r : trace)
        out << r.round << ',' << number(r.q_value) << ',' << number(r.elbo) << ','
            << number(r.ess_median) << '\n';
    return out.str();
}

// Everything that determines the fit apart from the number of rounds.
json fit_settings(const ExperimentConfig& cfg, bool known_noise) {
    json em = em_config_to_json(cfg.em);
    em.erase("em_rounds");
    return {{"seed", cfg.seed},
            {"em", em},
            {"known_noise", known_noise},
            {"linear_noise", to_string(cfg.problem.linear_noise)}};
}

int run_fit(const ConfigOptions& copts, const fs::path& data, const fs::path& out, bool resume,
            bool known_noise_flag) {
    const ExperimentConfig cfg = load_config(copts);
    const bool known_noise = known_noise_flag || cfg.problem.known_noise;
    const io::Dataset ds = io::load_dataset(data);
    EmConfig em = cfg.em;
    em.seed = fit_seed(cfg.seed);
    em.validate();
    ensure_directory(out);

    const json settings = fit_settings(cfg, known_noise);
    const fs::path checkpoint = out / "checkpoint.json";
    std::optional<FitState> start;
    if (resume && fs::exists(checkpoint)) {
        const json saved = io::read_json(checkpoint);
        if (saved.value("settings", json()) != settings)
            throw ParameterError("checkpoint " + checkpoint.string() +
                                 " was written with different settings; refusing to resume");
        start = io::fit_state_from_json(saved.at("state"));
        std::cerr << "resuming after round " << start->rounds_completed << "\n";
    }

    const FitReport report = fit(
        ds.regimes, ds.family, channel_spec_from_dataset(ds, known_noise, cfg.problem.linear_noise), em,
        start, [&](const FitState& state) {
            io::write_json(checkpoint, {{"settings", settings}, {"state", io::fit_state_to_json(state)}});
            const TraceRow& r = state.trace.back();
            std::cerr << "round " << r.round << ": Q " << r.q_value << ", median ESS " << r.ess_median
                      << "\n";
        });

    if (!fs::exists(checkpoint))
        io::write_json(checkpoint, {{"settings", settings}, {"state", io::fit_state_to_json(report.state)}});
    io::write_text_atomic(out / "trace.csv", trace_csv(report.trace));
    io::write_json(out / "report.json",
                   {{"d", report.theta.d},
                    {"edge_scores", io::scores_to_json(report.edge_scores)},
                    {"phi_hat", io::channel_to_json(report.phi_hat)},
                    {"converged", report.converged},
                    {"rounds_completed", report.state.rounds_completed},
                    {"train_logdet", report.train_logdet},
                    {"skipped_observations", report.skipped_observations},
                    {"widened_proposals", report.widened_proposals},
                    {"settings", settings}});
    std::cerr << "wrote report to " << (out / "report.json").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- evaluate

int run_evaluate(const fs::path& report_path, const fs::path& truth_path, double threshold,
                 fs::path out) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ParameterError("threshold must lie in (0, 1)");
    const json report = io::read_json(report_path);
    const json truth = io::read_json(truth_path);
    if (!report.contains("edge_scores")) throw ParameterError("report has no edge_scores");
    if (!truth.contains("graph")) throw ParameterError("truth file has no graph");
    const EdgeScoreMatrix scores = io::scores_from_json(report.at("edge_scores"));
    const DirectedGraph graph = io::graph_from_json(truth.at("graph"));
    if (scores.size() != graph.size())
        throw ParameterError("report has " + std::to_string(scores.size()) + " nodes, truth has " +
                             std::to_string(graph.size()));
    const TrialResult r = evaluate_scores(scores, graph, threshold);
    if (out.empty()) out = report_path.parent_path() / "metrics.json";
    const json metrics = {{"auprc", r.auprc},
                          {"shd", r.shd},
                          {"threshold", threshold},
                          {"true_edges", graph.edge_count()},
                          {"predicted_edges", threshold_edges(scores, threshold).edge_count()}};
    io::write_json(out, metrics);
    std::cout << metrics.dump() << "\n";
    return 0;
}

// ---------------------------------------------------------------- sweep

int run_sweep_cmd(const ConfigOptions& copts, const fs::path& out, std::optional<int> workers,
                  std::optional<int> trials) {
    ExperimentConfig cfg = load_config(copts);
    if (workers) cfg.workers = *workers;
    if (trials) cfg.n_trials = *trials;
    cfg.validate();
    ensure_directory(out);
    io::write_json(out / "config.json", experiment_config_to_json(cfg));
    const auto rows = run_sweep(cfg, out, &std::cerr);
    std::cerr << "wrote " << rows.size() << " rows to " << (out / "results.csv").string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Causal discovery over latent variables from noisy interventional measurements"};
    app.require_subcommand(1);

    ConfigOptions sim_cfg;
    std::string sim_out;
    auto* sim = app.add_subcommand("simulate", "Generate a synthetic dataset directory");
    add_config_options(sim, sim_cfg, true);
    sim->add_option("-o,--out", sim_out, "Output directory")->required();

    ConfigOptions est_cfg;
    std::string est_data, est_out;
    std::optional<std::string> est_method;
    auto* est = app.add_subcommand("estimate-noise", "Estimate measurement noise variances");
    add_config_options(est, est_cfg, false);
    est->add_option("-d,--data", est_data, "Dataset directory")->required();
    est->add_option("--method", est_method, "Linear-channel estimator: pooled or projection");
    est->add_option("-o,--out", est_out, "Output file (default <data>/phi_hat.json)");

    ConfigOptions fit_cfg;
    std::string fit_data, fit_out;
    bool fit_resume = false, fit_known = false;
    auto* fitc = app.add_subcommand("fit", "Learn edge probabilities with EM");
    add_config_options(fitc, fit_cfg, false);
    fitc->add_option("-d,--data", fit_data, "Dataset directory")->required();
    fitc->add_option("-o,--out", fit_out, "Output directory")->required();
    fitc->add_flag("--resume", fit_resume, "Continue from <out>/checkpoint.json if present");
    fitc->add_flag("--known-noise", fit_known, "Use the variances in channel.json instead of estimating");

    std::string ev_report, ev_truth, ev_out;
    double ev_threshold = 0.8;
    auto* ev = app.add_subcommand("evaluate", "Score a fitted report against the true graph");
    ev->add_option("-r,--report", ev_report, "report.json from fit")->required();
    ev->add_option("-t,--truth", ev_truth, "truth.json from simulate")->required();
    ev->add_option("--threshold", ev_threshold, "Edge threshold for SHD")->capture_default_str();
    ev->add_option("-o,--out", ev_out, "Output file (default metrics.json next to the report)");

    ConfigOptions sw_cfg;
    std::string sw_out;
    std::optional<int> sw_workers, sw_trials;
    auto* sw = app.add_subcommand("sweep", "Run a parameter sweep and write results.csv");
    add_config_options(sw, sw_cfg, true);
    sw->add_option("-o,--out", sw_out, "Output directory")->required();
    sw->add_option("--workers", sw_workers, "Parallel cells");
    sw->add_option("--trials", sw_trials, "Trials per grid value");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        if (*sim) return run_simulate(sim_cfg, sim_out);
        if (*est) return run_estimate_noise(est_cfg, est_data, est_method, est_out);
        if (*fitc) return run_fit(fit_cfg, fit_data, fit_out, fit_resume, fit_known);
        if (*ev) return run_evaluate(ev_report, ev_truth, ev_threshold, ev_out);
        if (*sw) return run_sweep_cmd(sw_cfg, sw_out, sw_workers, sw_trials);
    } catch (const IdentifiabilityError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIdentifiability;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const ParameterError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const UndefinedMetricError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const RankError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const json::exception& e) {
        std::cerr << "error: malformed JSON: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
