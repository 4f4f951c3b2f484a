#include "cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "offrl/bounds.hpp"
#include "offrl/estimation.hpp"
#include "offrl/harness.hpp"
#include "offrl/io.hpp"
#include "offrl/mdp.hpp"
#include "offrl/ope.hpp"

namespace offrl::cli {

namespace {

class ValidationFailure : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ModelInputs {
    std::string mdp;
    std::string target;
    std::string behavior;
};

void require_clean(const std::vector<std::string>& problems, const std::string& what) {
    if (problems.empty()) return;
    std::string message = what + " is invalid:";
    for (const auto& p : problems) message += "\n  " + p;
    throw ValidationFailure(message);
}

void check_steps_in_range(const Dataset& dataset, const Policy& policy, const std::string& what) {
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        for (const auto& st : dataset[i].steps) {
            if (st.state >= policy.num_states() || st.action >= policy.num_actions()) {
                throw ValidationFailure("path " + std::to_string(i) + " visits a pair outside the " + what +
                                        " policy");
            }
        }
    }
}

Policy behavior_or_uniform(const std::string& path, const TabularMdp& mdp) {
    return path.empty() ? Policy::uniform(mdp.num_states, mdp.num_actions) : load_policy(path, &mdp);
}

std::string inputs_hash(const json& options, const std::vector<std::string>& files) {
    std::string text = options.dump();
    for (const auto& f : files) {
        if (!f.empty()) text += "\n" + content_hash(read_file(f));
    }
    return content_hash(text);
}

ProjectionMode projection_from(const std::string& name) {
    try {
        return projection_mode_from_string(name);
    } catch (const std::invalid_argument& e) {
        throw ValidationFailure(e.what());
    }
}

/// Writes `text` to `path`, or to `out` when `path` is empty or "-".
void emit(const std::string& path, const std::string& text, std::ostream& out) {
    if (path.empty() || path == "-") {
        out << text;
        return;
    }
    std::ofstream file(path);
    if (!file) throw std::runtime_error("cannot open " + path + " for writing");
    file << text;
}

int cmd_sample(const std::string& mdp_path, const std::string& policy_path, std::size_t n, std::uint64_t seed,
               const std::string& output, std::ostream& out) {
    const auto mdp = load_mdp(mdp_path);
    const auto policy = load_policy(policy_path, &mdp);
    RandomStream rng(seed);
    const auto dataset = sample_dataset(mdp, policy, n, rng);
    std::ostringstream text;
    write_dataset_jsonl(text, dataset);
    emit(output, text.str(), out);
    return kExitOk;
}

int cmd_evaluate(const std::string& method, const std::string& dataset_path, const ModelInputs& in,
                 std::optional<double> delta, const std::string& projection, std::uint64_t seed,
                 std::ostream& out) {
    const auto dataset = load_dataset(dataset_path);
    EvaluationRecord record;
    record.n_paths = dataset.size();
    record.seed = seed;
    const json options = {{"command", "evaluate"}, {"method", method}, {"projection", projection},
                          {"delta", delta ? json(*delta) : json()}};
    record.config_hash = inputs_hash(options, {dataset_path, in.mdp, in.target, in.behavior});

    if (method == "is") {
        if (in.behavior.empty()) throw ValidationFailure("--behavior is required for --method is");
        if (delta) throw ValidationFailure("--delta is only supported with --method mb");
        std::optional<TabularMdp> mdp;
        if (!in.mdp.empty()) mdp = load_mdp(in.mdp);
        const auto target = load_policy(in.target, mdp ? &*mdp : nullptr);
        const auto behavior = load_policy(in.behavior, mdp ? &*mdp : nullptr);
        if (target.num_states() != behavior.num_states() || target.num_actions() != behavior.num_actions()) {
            throw ValidationFailure("target and behavior policies have different shapes");
        }
        if (mdp) require_clean(validate_dataset(dataset, *mdp), "dataset");
        check_steps_in_range(dataset, behavior, "behavior");
        record.estimator = "importance_sampling";
        try {
            record.estimate = importance_sampling_evaluate(dataset, target, behavior);
        } catch (const std::invalid_argument& e) {
            throw ValidationFailure(e.what());
        }
    } else if (method == "mb") {
        if (in.mdp.empty()) throw ValidationFailure("--mdp is required for --method mb (it supplies the rewards)");
        const auto mdp = load_mdp(in.mdp);
        const auto target = load_policy(in.target, &mdp);
        require_clean(validate_dataset(dataset, mdp), "dataset");
        const auto frame = ModelFrame::of(mdp);
        const auto mode = projection_from(projection);
        const auto counts = counts_for(frame, dataset);
        record.estimator = "model_based";
        record.estimate = model_based_evaluate(counts, target, frame, mode);
        if (delta) {
            if (!(*delta > 0.0 && *delta < 1.0)) throw ValidationFailure("--delta must lie in (0, 1)");
            const auto model = estimate_model(frame, counts, mode);
            const double per_pair = *delta / static_cast<double>(mdp.num_states * mdp.num_actions);
            SaTable radii(mdp.num_states, mdp.num_actions);
            for (std::size_t s = 0; s < mdp.num_states; ++s) {
                if (mdp.is_absorbing(s)) continue;
                for (std::size_t a = 0; a < mdp.num_actions; ++a) {
                    radii(s, a) = lemma2_radius_from_count(mdp.num_states,
                                                           static_cast<double>(counts.transient_total(s, a)),
                                                           per_pair, mdp.gamma);
                }
            }
            const auto interval = value_interval_from_radii(model.mdp, target, radii, 1.0 - *delta);
            record.lower = interval.lower;
            record.upper = interval.upper;
            record.delta = *delta;
        }
    } else {
        throw ValidationFailure("unknown method " + method + " (expected mb or is)");
    }
    out << to_json(record).dump(2) << "\n";
    return kExitOk;
}

int cmd_optimize(const std::string& dataset_path, const std::string& mdp_path, const std::string& projection,
                 const std::string& output, std::ostream& out) {
    const auto mdp = load_mdp(mdp_path);
    const auto dataset = load_dataset(dataset_path);
    require_clean(validate_dataset(dataset, mdp), "dataset");
    const auto frame = ModelFrame::of(mdp);
    const auto result = model_based_optimize(dataset, frame, projection_from(projection));
    if (!output.empty()) save_policy(output, result.policy);
    const json options = {{"command", "optimize"}, {"projection", projection}};
    json doc = {{"estimator", "model_based_optimize"},
                {"estimated_value", result.estimated_value},
                {"n_paths", dataset.size()},
                {"config_hash", inputs_hash(options, {dataset_path, mdp_path})},
                {"policy", policy_to_json(result.policy)}};
    out << doc.dump(2) << "\n";
    return kExitOk;
}

int cmd_bounds(const ModelInputs& in, double epsilon, double delta, const std::vector<double>& beta_grid,
               bool corollary, std::ostream& out) {
    if (!(epsilon > 0.0)) throw ValidationFailure("--epsilon must be positive");
    if (!(delta > 0.0 && delta < 1.0)) throw ValidationFailure("--delta must lie in (0, 1)");
    const auto mdp = load_mdp(in.mdp);
    const auto behavior = behavior_or_uniform(in.behavior, mdp);
    BoundReport report;
    if (corollary) {
        const auto stats = occupancy_stats(mdp, behavior);
        report = corollary1_path_bound(mdp.num_states, mdp.num_actions, mdp.gamma, epsilon, delta, stats.x,
                                       stats.rho, mdp.absorbing_state);
    } else {
        if (in.target.empty()) throw ValidationFailure("--target is required unless --optimization is given");
        const auto target = load_policy(in.target, &mdp);
        auto query = BoundQuery::from_policies(mdp, target, behavior, epsilon, delta);
        if (!beta_grid.empty()) {
            for (double b : beta_grid) {
                if (!(b >= 0.0 && b <= 1.0)) throw ValidationFailure("--beta-grid values must lie in [0, 1]");
            }
            query.beta_grid = beta_grid;
        }
        report = theorem1_path_bound(query);
    }
    out << to_json(report).dump(2) << "\n\n" << format_table(report);
    return kExitOk;
}

int cmd_verify(const std::string& experiment, const std::string& config_path, std::optional<std::size_t> workers,
               std::optional<std::uint64_t> seed, std::optional<std::size_t> trials, const std::string& output,
               bool force, std::ostream& out, std::ostream& err) {
    ExperimentConfig config;
    if (!config_path.empty()) {
        json doc;
        try {
            doc = json::parse(read_file(config_path));
        } catch (const json::exception& e) {
            throw ConfigError(config_path + ": " + e.what());
        }
        config = ExperimentConfig::from_json(doc);
        if (!experiment.empty() && experiment_kind_from_string(experiment) != config.kind) {
            throw ConfigError("--experiment " + experiment + " does not match the config kind " +
                              std::string(to_string(config.kind)));
        }
    } else {
        if (experiment.empty()) throw ConfigError("verify needs --experiment or --config");
        config.kind = experiment_kind_from_string(experiment);
    }
    if (workers) {
        if (*workers == 0) throw ConfigError("--workers must be at least 1");
        config.workers = *workers;
    }
    if (seed) config.seed = *seed;
    if (trials) {
        if (*trials == 0) throw ConfigError("--trials must be at least 1");
        config.trials = *trials;
    }
    if (!output.empty()) config.output = output;

    const std::string path = resolve_output_path(config);
    check_overwrite(path, config.hash(), force);
    check_overwrite(path + ".json", config.hash(), force);
    const auto result = run_experiment(config);
    write_experiment_outputs(result, path, force);
    out << result.summary.dump(2) << "\n";
    err << (result.passed ? "PASS " : "FAIL ") << to_string(config.kind) << " (wrote " << path << ")\n";
    return result.passed ? kExitOk : kExitAssertion;
}

int cmd_bias_curve(double sigma_min, double sigma_max, std::size_t steps, std::size_t mc_trials,
                   std::uint64_t seed, std::size_t workers, const std::string& output, bool force,
                   std::ostream& out) {
    if (steps == 0) throw ValidationFailure("--steps must be at least 1");
    if (!(sigma_min > 0.0 && sigma_max < 1.0 && sigma_min <= sigma_max)) {
        throw ValidationFailure("need 0 < sigma-min <= sigma-max < 1");
    }
    if (workers == 0) throw ValidationFailure("--workers must be at least 1");
    ExperimentConfig config;
    config.kind = ExperimentKind::bias_curve;
    config.seed = seed;
    config.trials = mc_trials;
    config.params = {{"sigma_min", sigma_min}, {"sigma_max", sigma_max}, {"steps", steps}};
    std::vector<double> grid(steps);
    for (std::size_t i = 0; i < steps; ++i) {
        grid[i] = steps == 1 ? sigma_min
                             : sigma_min + (sigma_max - sigma_min) * static_cast<double>(i) /
                                               static_cast<double>(steps - 1);
    }
    const auto table = run_bias_curve(grid, mc_trials, seed, workers);
    if (!output.empty() && output != "-") check_overwrite(output, config.hash(), force);
    emit(output, to_csv(table, config.hash()), out);
    return kExitOk;
}

int cmd_certificate(const std::string& dataset_path, const ModelInputs& in, double delta,
                    const std::vector<double>& beta_grid, std::ostream& out) {
    if (!(delta > 0.0 && delta < 1.0)) throw ValidationFailure("--delta must lie in (0, 1)");
    const auto mdp = load_mdp(in.mdp);
    const auto target = load_policy(in.target, &mdp);
    const auto behavior = load_policy(in.behavior, &mdp);
    const auto dataset = load_dataset(dataset_path);
    require_clean(validate_dataset(dataset, mdp), "dataset");
    const auto frame = ModelFrame::of(mdp);
    const auto grid = beta_grid.empty() ? BoundQuery::default_beta_grid() : beta_grid;
    const auto cert = accuracy_certificate(dataset, frame, target, behavior, delta, grid);
    json doc = to_json(cert);
    doc["estimate"] = model_based_evaluate(dataset, target, frame);
    doc["config_hash"] = inputs_hash({{"command", "certificate"}, {"delta", delta}, {"beta_grid", grid}},
                                     {dataset_path, in.mdp, in.target, in.behavior});
    out << doc.dump(2) << "\n";
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Tabular offline reinforcement learning: evaluation, optimization, bounds and verification"};
    app.require_subcommand(1);

    ModelInputs model;
    std::string dataset, output, policy, method = "mb", projection = "renormalized";
    std::string experiment, config_path;
    std::size_t num_paths = 0, steps = 99, mc_trials = 100000, workers = 1;
    std::uint64_t seed = 0;
    std::optional<double> delta_opt;
    std::optional<std::size_t> workers_opt, trials_opt;
    std::optional<std::uint64_t> seed_opt;
    double epsilon = 0.0, delta = 0.1, sigma_min = 0.01, sigma_max = 0.99;
    std::vector<double> beta_grid;
    bool force = false, corollary = false;

    auto* sample = app.add_subcommand("sample", "Sample paths from an MDP under a policy (JSON lines)");
    sample->add_option("--mdp", model.mdp, "MDP JSON file")->required()->check(CLI::ExistingFile);
    sample->add_option("--policy", policy, "Policy JSON file")->required()->check(CLI::ExistingFile);
    sample->add_option("-n,--num-paths", num_paths, "Number of paths")->required();
    sample->add_option("--seed", seed, "Random seed");
    sample->add_option("-o,--output", output, "Output file (default stdout)");

    auto* evaluate = app.add_subcommand("evaluate", "Estimate the value of a target policy from logged paths");
    evaluate->add_option("--method", method, "mb (model-based) or is (importance sampling)")
        ->check(CLI::IsMember({"mb", "is"}));
    evaluate->add_option("--dataset", dataset, "Dataset (JSON lines)")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--target", model.target, "Target policy JSON")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--behavior", model.behavior, "Behavior policy JSON")->check(CLI::ExistingFile);
    evaluate->add_option("--mdp", model.mdp, "MDP JSON (rewards and sizes)")->check(CLI::ExistingFile);
    evaluate->add_option("--delta", delta_opt, "Add a robust value interval at confidence 1 - delta (mb only)");
    evaluate->add_option("--projection", projection, "renormalized or l2_projected");
    evaluate->add_option("--seed", seed, "Seed recorded in the output");

    auto* optimize = app.add_subcommand("optimize", "Greedy policy on the estimated model");
    optimize->add_option("--dataset", dataset, "Dataset (JSON lines)")->required()->check(CLI::ExistingFile);
    optimize->add_option("--mdp", model.mdp, "MDP JSON (rewards and sizes)")->required()->check(CLI::ExistingFile);
    optimize->add_option("--projection", projection, "renormalized or l2_projected");
    optimize->add_option("-o,--output", output, "Also write the policy to this file");

    auto* bounds = app.add_subcommand("bounds", "Sample-size bound for an MDP and policy pair");
    bounds->add_option("--mdp", model.mdp, "MDP JSON")->required()->check(CLI::ExistingFile);
    bounds->add_option("--target", model.target, "Target policy JSON")->check(CLI::ExistingFile);
    bounds->add_option("--behavior", model.behavior, "Behavior policy JSON (default uniform)")
        ->check(CLI::ExistingFile);
    bounds->add_option("--epsilon", epsilon, "Accuracy")->required();
    bounds->add_option("--delta", delta, "Failure probability");
    bounds->add_option("--beta-grid", beta_grid, "Comma separated beta values")->delimiter(',');
    bounds->add_flag("--optimization", corollary, "Bound for off-policy optimization instead of evaluation");

    auto* verify = app.add_subcommand("verify", "Run a verification experiment");
    verify->add_option("--experiment", experiment, "Experiment kind");
    verify->add_option("--config", config_path, "Experiment config JSON")->check(CLI::ExistingFile);
    verify->add_option("--workers", workers_opt, "Worker threads");
    verify->add_option("--seed", seed_opt, "Master seed (overrides the config)");
    verify->add_option("--trials", trials_opt, "Trial count (overrides the config)");
    verify->add_option("-o,--output", output, "CSV output path");
    verify->add_flag("--force", force, "Overwrite outputs written by a different config");

    auto* bias = app.add_subcommand("bias-curve", "Single-path bias of the sample-mean estimate");
    bias->add_option("--sigma-min", sigma_min, "Smallest sigma");
    bias->add_option("--sigma-max", sigma_max, "Largest sigma");
    bias->add_option("--steps", steps, "Grid points");
    bias->add_option("--mc-trials", mc_trials, "Monte Carlo draws per point (0 disables)");
    bias->add_option("--seed", seed, "Master seed");
    bias->add_option("--workers", workers, "Worker threads");
    bias->add_option("-o,--output", output, "CSV output path (default stdout)");
    bias->add_flag("--force", force, "Overwrite outputs written by a different config");

    auto* certificate = app.add_subcommand("certificate", "Data-driven accuracy certificate for the model-based estimate");
    certificate->add_option("--dataset", dataset, "Dataset (JSON lines)")->required()->check(CLI::ExistingFile);
    certificate->add_option("--mdp", model.mdp, "MDP JSON (rewards and sizes)")->required()->check(CLI::ExistingFile);
    certificate->add_option("--target", model.target, "Target policy JSON")->required()->check(CLI::ExistingFile);
    certificate->add_option("--behavior", model.behavior, "Behavior policy JSON")->required()->check(CLI::ExistingFile);
    certificate->add_option("--delta", delta, "Failure probability");
    certificate->add_option("--beta-grid", beta_grid, "Comma separated beta values")->delimiter(',');

    std::vector<const char*> argv{"offrl"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitInvalid;
    }

    try {
        if (*sample) return cmd_sample(model.mdp, policy, num_paths, seed, output, out);
        if (*evaluate) return cmd_evaluate(method, dataset, model, delta_opt, projection, seed, out);
        if (*optimize) return cmd_optimize(dataset, model.mdp, projection, output, out);
        if (*bounds) return cmd_bounds(model, epsilon, delta, beta_grid, corollary, out);
        if (*verify) {
            return cmd_verify(experiment, config_path, workers_opt, seed_opt, trials_opt, output, force, out, err);
        }
        if (*bias) {
            return cmd_bias_curve(sigma_min, sigma_max, steps, mc_trials, seed, workers, output, force, out);
        }
        if (*certificate) return cmd_certificate(dataset, model, delta, beta_grid, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    }
    return kExitInvalid;
}

}  // namespace offrl::cli
