#include "offrl/harness.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <regex>
#include <sstream>

#include "offrl/bounds.hpp"
#include "offrl/estimation.hpp"
#include "offrl/ope.hpp"

namespace offrl {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

struct KindName {
    ExperimentKind kind;
    std::string_view name;
    std::string_view alias;
    std::size_t trials;
};

constexpr std::array<KindName, 12> kKinds{{
    {ExperimentKind::bias_curve, "bias_curve", "bias", 1'000'000},
    {ExperimentKind::lemma2_coverage, "lemma2_coverage", "lemma2", 2000},
    {ExperimentKind::lemma3_coverage, "lemma3_coverage", "lemma3", 2000},
    {ExperimentKind::lemma4_coverage, "lemma4_coverage", "lemma4", 2000},
    {ExperimentKind::theorem1_coverage, "theorem1_coverage", "theorem1", 200},
    {ExperimentKind::corollary1_coverage, "corollary1_coverage", "corollary1", 100},
    {ExperimentKind::theorem2_mse, "theorem2_mse", "theorem2", 1'000'000},
    {ExperimentKind::is_unbiasedness, "is_unbiasedness", "is", 2000},
    {ExperimentKind::ope_sweep, "ope_sweep", "sweep", 200},
    {ExperimentKind::certificate_coverage, "certificate_coverage", "certificate", 400},
    {ExperimentKind::occupancy_identity, "occupancy_identity", "occupancy", 100},
    {ExperimentKind::lemma1_sandwich, "lemma1_sandwich", "lemma1", 200},
}};

enum StreamPurpose : std::uint64_t { trial_stream = 0, model_stream = 1, aux_stream = 2 };

std::uint64_t experiment_id(ExperimentKind kind, std::uint64_t purpose) {
    return static_cast<std::uint64_t>(kind) * 16 + purpose;
}

template <typename T>
T param(const ExperimentConfig& config, const char* key, T fallback) {
    if (!config.params.contains(key)) return fallback;
    try {
        return config.params.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("params.") + key + ": " + e.what());
    }
}

json summary_number(double v) { return number_to_json(v); }

double median(const std::vector<double>& v) { return quantile(v, 0.5); }

struct Scenario {
    TabularMdp mdp;
    Policy target;
    Policy behavior;
};

Policy row_policy(const TabularMdp& mdp, const std::vector<double>& row, const char* name) {
    if (row.size() != mdp.num_actions) {
        throw ConfigError(std::string("params.") + name + " must have num_actions entries");
    }
    SaTable table(mdp.num_states, mdp.num_actions);
    for (std::size_t s = 0; s < mdp.num_states; ++s) {
        for (std::size_t a = 0; a < mdp.num_actions; ++a) table(s, a) = row[a];
    }
    Policy policy(std::move(table));
    const auto problems = validate_policy(policy, mdp);
    if (!problems.empty()) throw ConfigError(std::string("params.") + name + ": " + problems.front());
    return policy;
}

Policy random_deterministic(const TabularMdp& mdp, RandomStream& rng) {
    std::vector<std::size_t> actions(mdp.num_states);
    for (auto& a : actions) a = static_cast<std::size_t>(rng.next_u64() % mdp.num_actions);
    return Policy::deterministic(actions, mdp.num_actions);
}

void reject_model_sources(const ExperimentConfig& config) {
    if (config.generator || config.files) {
        throw ConfigError(std::string(to_string(config.kind)) + " does not take a generator or model files");
    }
}

/// Model and policies from files, or drawn from the generator (or `fallback`).
/// Generated behavior defaults to uniform and the target to a random
/// deterministic policy; params behavior_action_probs / target_action_probs
/// override either with one row used at every state.
Scenario make_scenario(const ExperimentConfig& config, const RandomMdpSpec& fallback, RandomStream& rng,
                       std::optional<std::vector<double>> behavior_row = std::nullopt,
                       std::optional<std::vector<double>> target_row = std::nullopt) {
    Scenario sc;
    if (config.files) {
        sc.mdp = load_mdp(config.files->mdp);
        sc.behavior = config.files->behavior.empty() ? Policy::uniform(sc.mdp.num_states, sc.mdp.num_actions)
                                                     : load_policy(config.files->behavior, &sc.mdp);
        if (config.files->target.empty()) throw ConfigError("files.target is required for this experiment");
        sc.target = load_policy(config.files->target, &sc.mdp);
        return sc;
    }
    const RandomMdpSpec spec = config.generator.value_or(fallback);
    if (spec.num_states < 2 || spec.num_actions < 1 || !(spec.gamma > 0.0 && spec.gamma < 1.0) ||
        !(spec.concentration > 0.0)) {
        throw ConfigError("generator needs num_states >= 2, num_actions >= 1, 0 < gamma < 1, concentration > 0");
    }
    sc.mdp = random_mdp(spec, rng);
    if (config.params.contains("behavior_action_probs")) {
        behavior_row = param<std::vector<double>>(config, "behavior_action_probs", {});
    }
    if (config.params.contains("target_action_probs")) {
        target_row = param<std::vector<double>>(config, "target_action_probs", {});
    }
    sc.behavior = behavior_row ? row_policy(sc.mdp, *behavior_row, "behavior_action_probs")
                               : Policy::uniform(sc.mdp.num_states, sc.mdp.num_actions);
    sc.target = target_row ? row_policy(sc.mdp, *target_row, "target_action_probs") : random_deterministic(sc.mdp, rng);
    return sc;
}

RandomStream model_rng(const ExperimentConfig& config) {
    return RandomStream(StreamId{config.seed, experiment_id(config.kind, model_stream), 0});
}

template <typename Body>
std::vector<TrialResult> run_trials(const ExperimentConfig& config, std::size_t n, Body&& body) {
    std::vector<TrialResult> results(n);
    parallel_for(n, config.workers, [&](std::size_t i) {
        const auto start = std::chrono::steady_clock::now();
        TrialResult r;
        r.trial_id = i;
        r.stream = StreamId{config.seed, experiment_id(config.kind, trial_stream), i};
        RandomStream rng(r.stream);
        body(i, rng, r);
        r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        results[i] = std::move(r);
    });
    return results;
}

Table table_from(const std::vector<TrialResult>& trials) {
    Table table;
    table.columns.push_back("trial");
    if (trials.empty()) return table;
    for (const auto& [name, value] : trials.front().metrics) table.columns.push_back(name);
    for (const auto& t : trials) {
        std::vector<double> row{static_cast<double>(t.trial_id)};
        for (const auto& [name, value] : t.metrics) row.push_back(value);
        table.rows.push_back(std::move(row));
    }
    return table;
}

ExperimentResult finish(const ExperimentConfig& config, std::vector<TrialResult> trials, json summary, bool passed) {
    ExperimentResult result;
    result.kind = config.kind;
    result.config_hash = config.hash();
    result.table = table_from(trials);
    result.trials = std::move(trials);
    result.passed = passed;
    summary["kind"] = std::string(to_string(config.kind));
    summary["config_hash"] = result.config_hash;
    summary["trials"] = result.trials.size();
    summary["seed"] = config.seed;
    summary["passed"] = passed;
    result.summary = std::move(summary);
    return result;
}

json coverage_summary(std::size_t failures, std::size_t trials, double delta_prime, bool& passed) {
    const auto interval = wilson_interval(failures, trials);
    passed = interval.lower <= delta_prime;
    return {{"failures", failures},
            {"failure_rate", static_cast<double>(failures) / static_cast<double>(trials)},
            {"wilson_lower", interval.lower},
            {"wilson_upper", interval.upper},
            {"wilson_confidence", 0.99},
            {"delta_prime", delta_prime}};
}

std::size_t count_failures(const std::vector<TrialResult>& trials) {
    std::size_t n = 0;
    for (const auto& t : trials) n += t.metric("failure") != 0.0 ? 1 : 0;
    return n;
}

// Successor of step t of a path; the last step leads to the absorbing state.
std::size_t successor(const SamplePath& path, std::size_t t, std::size_t absorbing) {
    return t + 1 < path.steps.size() ? path.steps[t + 1].state : absorbing;
}

double path_return(const SamplePath& path) {
    double total = 0.0;
    for (const auto& st : path.steps) total += st.reward;
    return total;
}

// ---------------------------------------------------------------------------

ExperimentResult run_occupancy_identity(const ExperimentConfig& config) {
    if (config.files) throw ConfigError("occupancy_identity draws its own models; files are not supported");
    const auto max_states = param<std::size_t>(config, "max_states", 8);
    const auto max_actions = param<std::size_t>(config, "max_actions", 3);
    const auto gammas = param<std::vector<double>>(config, "gammas", {0.8, 0.9, 0.95});
    const double tolerance = param<double>(config, "tolerance", 1e-9);
    if (max_states < 2 || max_actions < 1 || gammas.empty()) throw ConfigError("occupancy_identity: bad size params");

    auto trials = run_trials(config, config.trial_count(), [&](std::size_t, RandomStream& rng, TrialResult& r) {
        RandomMdpSpec spec;
        if (config.generator) {
            spec = *config.generator;
        } else {
            spec.num_states = 2 + static_cast<std::size_t>(rng.next_u64() % (max_states - 1));
            spec.num_actions = 1 + static_cast<std::size_t>(rng.next_u64() % max_actions);
            spec.gamma = gammas[rng.next_u64() % gammas.size()];
        }
        const auto mdp = random_mdp(spec, rng);
        const auto policy = random_policy(spec.num_states, spec.num_actions, 1.0, rng);
        const auto stats = occupancy_stats(mdp, policy);
        const auto v = exact_value(mdp, policy);
        double identity = 0.0, weighted = 0.0;
        for (std::size_t s = 0; s < mdp.num_states; ++s) {
            for (std::size_t a = 0; a < mdp.num_actions; ++a) {
                weighted += stats.x(s, a) * mdp.rewards(s, a);
                if (mdp.is_absorbing(s)) continue;
                const double rho = stats.rho(s, a);
                const double implied = rho > 0.0 ? rho / (1.0 - stats.lambda(s, a)) : 0.0;
                identity = std::max(identity, std::abs(stats.x(s, a) - implied));
            }
        }
        r.set("states", static_cast<double>(spec.num_states));
        r.set("actions", static_cast<double>(spec.num_actions));
        r.set("gamma", spec.gamma);
        r.set("identity_error", identity);
        r.set("value_error", std::abs(v[mdp.initial_state] - weighted));
    });
    double max_identity = 0.0, max_value = 0.0;
    for (const auto& t : trials) {
        max_identity = std::max(max_identity, t.metric("identity_error"));
        max_value = std::max(max_value, t.metric("value_error"));
    }
    const bool passed = max_identity <= tolerance && max_value <= tolerance;
    return finish(config, std::move(trials),
                  {{"max_identity_error", max_identity}, {"max_value_error", max_value}, {"tolerance", tolerance}},
                  passed);
}

// ---------------------------------------------------------------------------

// Moves a random zero-sum direction into the non-absorbing part of every row,
// keeping entries nonnegative and the L1 change at most radius(s,a).
TabularMdp perturb_rows(const TabularMdp& mdp, const SaTable& radius, RandomStream& rng) {
    TabularMdp out = mdp;
    const std::size_t sink = mdp.absorbing_state;
    std::vector<double> dir(mdp.num_states);
    for (std::size_t s = 0; s < mdp.num_states; ++s) {
        if (s == sink) continue;
        for (std::size_t a = 0; a < mdp.num_actions; ++a) {
            double mean = 0.0;
            for (std::size_t q = 0; q < mdp.num_states; ++q) {
                dir[q] = q == sink ? 0.0 : rng.uniform() - 0.5;
                mean += dir[q];
            }
            mean /= static_cast<double>(mdp.num_states - 1);
            double l1 = 0.0;
            for (std::size_t q = 0; q < mdp.num_states; ++q) {
                if (q == sink) continue;
                dir[q] -= mean;
                l1 += std::abs(dir[q]);
            }
            if (l1 == 0.0) continue;
            double step = radius(s, a) * rng.uniform_open_closed() / l1;
            for (std::size_t q = 0; q < mdp.num_states; ++q) {
                if (dir[q] < 0.0) step = std::min(step, mdp.p(s, a, q) / -dir[q]);
            }
            for (std::size_t q = 0; q < mdp.num_states; ++q) {
                if (q != sink) out.p(s, a, q) = std::max(0.0, mdp.p(s, a, q) + step * dir[q]);
            }
        }
    }
    return out;
}

ExperimentResult run_lemma1_sandwich(const ExperimentConfig& config) {
    const auto alphas = param<std::vector<double>>(config, "alphas", {1e-3, 1e-2});
    const auto betas = param<std::vector<double>>(config, "betas", {0.0, 0.5, 1.0});
    const double tolerance = param<double>(config, "tolerance", 1e-9);
    if (alphas.empty() || betas.empty()) throw ConfigError("lemma1_sandwich: empty alpha or beta grid");
    const RandomMdpSpec fallback{4, 2, 0.9, 1.0};

    auto trials = run_trials(config, config.trial_count(), [&](std::size_t i, RandomStream& rng, TrialResult& r) {
        const double alpha = alphas[i % alphas.size()];
        const double beta = betas[(i / alphas.size()) % betas.size()];
        Scenario sc;
        if (config.files) {
            sc = make_scenario(config, fallback, rng);
        } else {
            sc.mdp = random_mdp(config.generator.value_or(fallback), rng);
            sc.target = random_policy(sc.mdp.num_states, sc.mdp.num_actions, 1.0, rng);
        }
        const auto& mdp = sc.mdp;
        const auto x = exact_occupancy(mdp, sc.target);
        SaTable radius(mdp.num_states, mdp.num_actions);
        for (std::size_t s = 0; s < mdp.num_states; ++s) {
            for (std::size_t a = 0; a < mdp.num_actions; ++a) {
                const double scale = beta == 0.0 ? 1.0 : std::pow(x(s, a), beta);
                radius(s, a) = scale > 0.0 ? std::min(alpha / scale, 2.0 * mdp.gamma) : 2.0 * mdp.gamma;
            }
        }
        const auto estimate = perturb_rows(mdp, radius, rng);
        const auto pair = construct_delta_mdps(mdp, estimate);
        const auto extended = pair.extend(sc.target);
        const std::size_t s0 = mdp.initial_state;
        const double v_true = exact_value(mdp, sc.target)[s0];
        const double v_hat = exact_value(estimate, sc.target)[s0];
        const double v_upper = exact_value(pair.optimistic, extended)[s0];
        const double v_lower = exact_value(pair.pessimistic, extended)[s0];
        const double violation =
            std::max({0.0, v_lower - std::min(v_true, v_hat), std::max(v_true, v_hat) - v_upper});
        const double bound = lemma1_gap(alpha, beta, mdp.num_states, mdp.num_actions, mdp.gamma);
        r.set("alpha", alpha);
        r.set("beta", beta);
        r.set("v_true", v_true);
        r.set("v_hat", v_hat);
        r.set("v_pessimistic", v_lower);
        r.set("v_optimistic", v_upper);
        r.set("sandwich_violation", violation);
        r.set("gap", std::abs(v_true - v_hat));
        r.set("gap_bound", bound);
    });
    double worst_violation = 0.0, worst_ratio = 0.0;
    std::size_t gap_failures = 0;
    for (const auto& t : trials) {
        worst_violation = std::max(worst_violation, t.metric("sandwich_violation"));
        const double gap = t.metric("gap"), bound = t.metric("gap_bound");
        if (gap > bound) ++gap_failures;
        if (bound > 0.0) worst_ratio = std::max(worst_ratio, gap / bound);
    }
    const bool passed = worst_violation <= tolerance && gap_failures == 0;
    return finish(config, std::move(trials),
                  {{"max_sandwich_violation", worst_violation},
                   {"gap_bound_failures", gap_failures},
                   {"max_gap_to_bound_ratio", worst_ratio},
                   {"tolerance", tolerance}},
                  passed);
}

// ---------------------------------------------------------------------------

std::vector<double> sigma_grid_from(const ExperimentConfig& config) {
    if (config.params.contains("sigma_grid")) return param<std::vector<double>>(config, "sigma_grid", {});
    if (config.params.contains("steps")) {
        const double lo = param<double>(config, "sigma_min", 0.01);
        const double hi = param<double>(config, "sigma_max", 0.99);
        const auto steps = param<std::size_t>(config, "steps", 99);
        if (steps == 0 || !(lo > 0.0 && hi < 1.0 && lo <= hi)) throw ConfigError("bias_curve: bad sigma range");
        std::vector<double> grid(steps);
        for (std::size_t i = 0; i < steps; ++i) {
            grid[i] = steps == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(steps - 1);
        }
        return grid;
    }
    return {0.1, 0.2, 0.3, 0.5, 0.7};
}

ExperimentResult run_bias_experiment(const ExperimentConfig& config) {
    reject_model_sources(config);
    const auto grid = sigma_grid_from(config);
    const double z_limit = param<double>(config, "z_limit", 3.0);
    const double peak_step = param<double>(config, "peak_step", 1e-4);
    ExperimentResult result;
    result.kind = config.kind;
    result.config_hash = config.hash();
    result.table = run_bias_curve(grid, config.trial_count(), config.seed, config.workers);
    double max_z = 0.0;
    for (double z : result.table.values("mc_z")) {
        if (std::isfinite(z)) max_z = std::max(max_z, std::abs(z));
    }
    const auto peak = max_single_path_bias(peak_step);
    result.passed = max_z <= z_limit && std::abs(peak.bias - 0.216) <= 0.002 && std::abs(peak.bias - 0.22) <= 0.005;
    result.summary = {{"kind", std::string(to_string(config.kind))},
                      {"config_hash", result.config_hash},
                      {"trials_per_point", config.trial_count()},
                      {"seed", config.seed},
                      {"points", grid.size()},
                      {"max_abs_z", max_z},
                      {"z_limit", z_limit},
                      {"peak_sigma", peak.sigma},
                      {"peak_bias", peak.bias},
                      {"passed", result.passed}};
    return result;
}

// ---------------------------------------------------------------------------

struct MseChunk {
    double draws = 0.0;
    double df_sum = 0.0, df_sq = 0.0, sm_sum = 0.0, sm_sq = 0.0;
};

std::vector<MseChunk> mse_chunks(const std::vector<double>& p, std::size_t n, std::size_t n_trials,
                                 std::uint64_t seed, std::size_t workers, std::size_t chunks,
                                 std::size_t& component,
                                 std::uint64_t experiment = experiment_id(ExperimentKind::theorem2_mse, trial_stream),
                                 std::uint64_t trial_offset = 0) {
    if (p.empty()) throw std::invalid_argument("run_theorem2_mse: empty distribution");
    double mass = 0.0;
    for (double v : p) {
        if (!(v >= 0.0)) throw std::invalid_argument("run_theorem2_mse: negative probability");
        mass += v;
    }
    if (std::abs(mass - 1.0) > 1e-12) throw std::invalid_argument("run_theorem2_mse: probabilities must sum to 1");
    if (n == 0) throw std::invalid_argument("run_theorem2_mse: N must be positive");
    if (chunks == 0) chunks = 1;
    chunks = std::min(chunks, std::max<std::size_t>(n_trials, 1));
    component = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    const std::size_t m = component;
    std::vector<MseChunk> out(chunks);
    parallel_for(chunks, workers, [&](std::size_t c) {
        RandomStream rng(StreamId{seed, experiment, trial_offset + c});
        const std::size_t draws = n_trials / chunks + (c < n_trials % chunks ? 1 : 0);
        std::vector<std::uint64_t> counts(p.size());
        MseChunk chunk;
        chunk.draws = static_cast<double>(draws);
        for (std::size_t d = 0; d < draws; ++d) {
            long long remaining = static_cast<long long>(n);
            double rest = 1.0;
            for (std::size_t i = 0; i < p.size(); ++i) {
                if (i + 1 == p.size() || remaining == 0) {
                    counts[i] = static_cast<std::uint64_t>(remaining);
                    remaining = 0;
                    continue;
                }
                const double q = rest > 0.0 ? std::clamp(p[i] / rest, 0.0, 1.0) : 0.0;
                std::binomial_distribution<long long> binom(remaining, q);
                const long long k = binom(rng.engine());
                counts[i] = static_cast<std::uint64_t>(k);
                remaining -= k;
                rest -= p[i];
            }
            const double df = df_categorical(counts).probs[m] - p[m];
            const double sm = static_cast<double>(counts[m]) / static_cast<double>(n) - p[m];
            chunk.df_sum += df * df;
            chunk.df_sq += df * df * df * df;
            chunk.sm_sum += sm * sm;
            chunk.sm_sq += sm * sm * sm * sm;
        }
        out[c] = chunk;
    });
    return out;
}

MseEstimate summarize_mse(const std::vector<MseChunk>& chunks, const std::vector<double>& p, std::size_t n,
                          std::size_t component) {
    MseEstimate est;
    est.component = component;
    double draws = 0.0, df = 0.0, df2 = 0.0, sm = 0.0, sm2 = 0.0;
    for (const auto& c : chunks) {
        draws += c.draws;
        df += c.df_sum;
        df2 += c.df_sq;
        sm += c.sm_sum;
        sm2 += c.sm_sq;
    }
    est.draws = static_cast<std::size_t>(draws);
    if (draws > 0.0) {
        est.mse_df = df / draws;
        est.mse_sm = sm / draws;
    }
    if (draws > 1.0) {
        est.se_df = std::sqrt(std::max(0.0, (df2 / draws - est.mse_df * est.mse_df) / (draws - 1.0)));
        est.se_sm = std::sqrt(std::max(0.0, (sm2 / draws - est.mse_sm * est.mse_sm) / (draws - 1.0)));
    }
    const double pm = p[component];
    est.mse_sm_exact = pm * (1.0 - pm) / static_cast<double>(n);
    est.bound = pm > 0.5 ? df_mse_bound(pm, static_cast<double>(n)) : kNan;
    return est;
}

ExperimentResult run_theorem2_experiment(const ExperimentConfig& config) {
    reject_model_sources(config);
    const auto p = param<std::vector<double>>(config, "p", {0.95, 0.05});
    const auto n = param<std::size_t>(config, "n", 100);
    const auto chunk_count = param<std::size_t>(config, "chunks", 100);
    const double se_multiplier = param<double>(config, "se_multiplier", 3.0);
    std::size_t component = 0;
    std::vector<MseChunk> chunks;
    try {
        chunks = mse_chunks(p, n, config.trial_count(), config.seed, config.workers, chunk_count, component);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    const auto est = summarize_mse(chunks, p, n, component);
    const auto crossover_grid = param<std::vector<double>>(
        config, "crossover_grid", {0.5, 0.6, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 0.99});
    const auto crossover_draws = param<std::size_t>(config, "crossover_draws", 20000);
    json crossover = json::array();
    double crossover_p = kNan;
    for (std::size_t i = 0; i < crossover_grid.size(); ++i) {
        const double q = crossover_grid[i];
        if (!(q >= 0.5 && q <= 1.0)) throw ConfigError("crossover_grid values must lie in [0.5, 1]");
        const std::vector<double> two{q, 1.0 - q};
        std::size_t ignored = 0;
        const auto parts = mse_chunks(two, n, crossover_draws, config.seed, config.workers, 1, ignored,
                                      experiment_id(ExperimentKind::theorem2_mse, aux_stream), i);
        const auto point = summarize_mse(parts, two, n, 0);
        const bool df_better = point.mse_df < point.mse_sm_exact;
        if (!df_better) {
            crossover_p = kNan;
        } else if (std::isnan(crossover_p)) {
            crossover_p = q;
        }
        crossover.push_back({{"p", q},
                             {"mse_df", point.mse_df},
                             {"se_df", point.se_df},
                             {"mse_sm_exact", point.mse_sm_exact},
                             {"df_better", df_better}});
    }
    ExperimentResult result;
    result.kind = config.kind;
    result.config_hash = config.hash();
    result.table.columns = {"chunk", "draws", "df_sq_error_sum", "df_sq_error_sq_sum", "sm_sq_error_sum",
                            "sm_sq_error_sq_sum"};
    for (std::size_t c = 0; c < chunks.size(); ++c) {
        const auto& ch = chunks[c];
        result.table.rows.push_back({static_cast<double>(c), ch.draws, ch.df_sum, ch.df_sq, ch.sm_sum, ch.sm_sq});
    }
    const bool below_bound = !std::isfinite(est.bound) || est.mse_df <= est.bound + se_multiplier * est.se_df;
    const bool beats_sm = est.mse_df < est.mse_sm_exact || (est.mse_sm_exact == 0.0 && est.mse_df == 0.0);
    result.passed = below_bound && beats_sm;
    result.summary = {{"kind", std::string(to_string(config.kind))},
                      {"config_hash", result.config_hash},
                      {"seed", config.seed},
                      {"draws", est.draws},
                      {"n", n},
                      {"p", p},
                      {"component", est.component},
                      {"mse_df", est.mse_df},
                      {"se_df", est.se_df},
                      {"mse_sm", est.mse_sm},
                      {"se_sm", est.se_sm},
                      {"mse_sm_exact", est.mse_sm_exact},
                      {"bound", summary_number(est.bound)},
                      {"se_multiplier", se_multiplier},
                      {"crossover", crossover},
                      {"crossover_p", summary_number(crossover_p)},
                      {"passed", result.passed}};
    return result;
}

// ---------------------------------------------------------------------------

Scenario figure1_scenario(const ExperimentConfig& config, double sigma, double gamma) {
    if (config.generator) throw ConfigError(std::string(to_string(config.kind)) + " does not take a generator");
    Scenario sc;
    if (config.files) {
        sc.mdp = load_mdp(config.files->mdp);
        sc.behavior = config.files->behavior.empty() ? Policy::uniform(sc.mdp.num_states, sc.mdp.num_actions)
                                                     : load_policy(config.files->behavior, &sc.mdp);
        return sc;
    }
    if (!(sigma > 0.0 && sigma <= gamma && gamma < 1.0)) throw ConfigError("need 0 < sigma <= gamma < 1");
    sc.mdp = make_figure1_mdp(sigma, gamma);
    sc.behavior = Policy::uniform(sc.mdp.num_states, sc.mdp.num_actions);
    return sc;
}

void check_pair(const TabularMdp& mdp, std::size_t s, std::size_t a) {
    if (s >= mdp.num_states || a >= mdp.num_actions || mdp.is_absorbing(s)) {
        throw ConfigError("params.state/action must name a non-absorbing pair of the model");
    }
}

ExperimentResult run_lemma2(const ExperimentConfig& config) {
    const double eps = param<double>(config, "epsilon_prime", 0.3);
    const double delta = param<double>(config, "delta_prime", 0.1);
    const RandomMdpSpec fallback{3, 2, 0.9, 1.0};
    auto rng = model_rng(config);
    const auto sc = make_scenario(config, fallback, rng);
    const auto& mdp = sc.mdp;
    const auto s = param<std::size_t>(config, "state", mdp.initial_state);
    const auto a = param<std::size_t>(config, "action", 0);
    check_pair(mdp, s, a);
    if (!(first_visit_prob(mdp, sc.behavior, s, a) > 0.0)) throw ConfigError("lemma2: pair is never visited");
    double threshold = 0.0;
    try {
        threshold = lemma2_threshold(mdp.num_states, eps, delta);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    const auto need = static_cast<std::uint64_t>(threshold);
    const double radius = mdp.gamma * eps;

    auto trials = run_trials(config, config.trial_count(), [&](std::size_t, RandomStream& trng, TrialResult& r) {
        std::vector<std::uint64_t> counts(mdp.num_states, 0);
        std::uint64_t collected = 0, paths = 0;
        while (collected < need) {
            const auto path = sample_path(mdp, sc.behavior, trng);
            ++paths;
            for (std::size_t t = 0; t < path.steps.size() && collected < need; ++t) {
                if (path.steps[t].state != s || path.steps[t].action != a) continue;
                const std::size_t q = successor(path, t, mdp.absorbing_state);
                if (q == mdp.absorbing_state) continue;
                ++counts[q];
                ++collected;
            }
        }
        double l1 = 0.0;
        for (std::size_t q = 0; q < mdp.num_states; ++q) {
            if (q == mdp.absorbing_state) continue;
            const double estimate = mdp.gamma * static_cast<double>(counts[q]) / static_cast<double>(need);
            l1 += std::abs(estimate - mdp.p(s, a, q));
        }
        r.set("samples", static_cast<double>(need));
        r.set("paths", static_cast<double>(paths));
        r.set("l1_error", l1);
        r.set("radius", radius);
        r.set("failure", l1 > radius ? 1.0 : 0.0);
    });
    bool passed = false;
    auto summary = coverage_summary(count_failures(trials), trials.size(), delta, passed);
    summary["threshold"] = threshold;
    summary["epsilon_prime"] = eps;
    summary["pair"] = {s, a};
    summary["states"] = mdp.num_states;
    return finish(config, std::move(trials), std::move(summary), passed);
}

ExperimentResult run_lemma3(const ExperimentConfig& config) {
    const double gamma = param<double>(config, "gamma", 0.9);
    const double sigma = param<double>(config, "sigma", 0.1);
    const double n_prime = param<double>(config, "n_prime", 20.0);
    const double delta = param<double>(config, "delta_prime", 0.1);
    const auto sc = figure1_scenario(config, sigma, gamma);
    const auto& mdp = sc.mdp;
    const auto s = param<std::size_t>(config, "state", config.files ? 0 : 1);
    const auto a = param<std::size_t>(config, "action", 0);
    check_pair(mdp, s, a);
    const double rho = first_visit_prob(mdp, sc.behavior, s, a);
    double paths_needed = 0.0;
    try {
        paths_needed = lemma3_path_count(mdp.gamma, rho, n_prime, delta);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (!std::isfinite(paths_needed)) throw ConfigError("lemma3: pair is never visited");
    const auto n_paths = static_cast<std::size_t>(paths_needed);

    auto trials = run_trials(config, config.trial_count(), [&](std::size_t, RandomStream& rng, TrialResult& r) {
        std::size_t with_sample = 0;
        for (std::size_t i = 0; i < n_paths; ++i) {
            const auto path = sample_path(mdp, sc.behavior, rng);
            for (std::size_t t = 0; t < path.steps.size(); ++t) {
                if (path.steps[t].state == s && path.steps[t].action == a &&
                    successor(path, t, mdp.absorbing_state) != mdp.absorbing_state) {
                    ++with_sample;
                    break;
                }
            }
        }
        r.set("paths", static_cast<double>(n_paths));
        r.set("paths_with_sample", static_cast<double>(with_sample));
        r.set("failure", static_cast<double>(with_sample) < n_prime ? 1.0 : 0.0);
    });
    bool passed = false;
    auto summary = coverage_summary(count_failures(trials), trials.size(), delta, passed);
    summary["rho"] = rho;
    summary["n_prime"] = n_prime;
    summary["paths"] = paths_needed;
    summary["pair"] = {s, a};
    return finish(config, std::move(trials), std::move(summary), passed);
}

ExperimentResult run_lemma4(const ExperimentConfig& config) {
    const double gamma = param<double>(config, "gamma", 0.8);
    const double sigma = param<double>(config, "sigma", 0.4);
    const double k = param<double>(config, "k", 50.0);
    const double delta = param<double>(config, "delta_prime", 0.1);
    const auto sc = figure1_scenario(config, sigma, gamma);
    const auto& mdp = sc.mdp;
    const auto s = param<std::size_t>(config, "state", config.files ? 0 : 1);
    const auto a = param<std::size_t>(config, "action", 0);
    check_pair(mdp, s, a);
    const double rho = first_visit_prob(mdp, sc.behavior, s, a);
    const double lambda = return_prob(mdp, sc.behavior, s, a);
    if (!(rho > 0.0)) throw ConfigError("lemma4: pair is never visited");
    double needed = 0.0;
    try {
        needed = lemma4_path_count(k, lambda, delta);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    const auto n_prime = static_cast<std::size_t>(needed);

    auto trials = run_trials(config, config.trial_count(), [&](std::size_t, RandomStream& rng, TrialResult& r) {
        std::size_t with_sample = 0, paths = 0;
        std::uint64_t samples = 0;
        while (with_sample < n_prime) {
            const auto path = sample_path(mdp, sc.behavior, rng);
            ++paths;
            std::uint64_t here = 0;
            for (std::size_t t = 0; t < path.steps.size(); ++t) {
                if (path.steps[t].state == s && path.steps[t].action == a &&
                    successor(path, t, mdp.absorbing_state) != mdp.absorbing_state) {
                    ++here;
                }
            }
            if (here > 0) {
                ++with_sample;
                samples += here;
            }
        }
        r.set("paths_with_sample", static_cast<double>(n_prime));
        r.set("paths", static_cast<double>(paths));
        r.set("samples", static_cast<double>(samples));
        r.set("failure", static_cast<double>(samples) < k ? 1.0 : 0.0);
    });
    bool passed = false;
    auto summary = coverage_summary(count_failures(trials), trials.size(), delta, passed);
    summary["rho"] = rho;
    summary["lambda"] = lambda;
    summary["k"] = k;
    summary["paths_with_sample"] = needed;
    summary["pair"] = {s, a};
    return finish(config, std::move(trials), std::move(summary), passed);
}

// ---------------------------------------------------------------------------

struct SweepSetup {
    std::vector<std::size_t> grid;
    bool model_based = true;
    bool importance = true;
    bool fresh = false;
};

ExperimentResult sweep(const ExperimentConfig& config, const SweepSetup& setup, json& summary) {
    if (setup.grid.empty()) throw ConfigError("n_grid must not be empty");
    const RandomMdpSpec fallback{4, 2, 0.9, 1.0};
    auto rng = model_rng(config);
    std::optional<Scenario> fixed;
    if (!setup.fresh) fixed = make_scenario(config, fallback, rng);
    std::optional<double> fixed_value;
    if (fixed) fixed_value = exact_value(fixed->mdp, fixed->target)[fixed->mdp.initial_state];
    const std::size_t reps = config.trial_count();
    const std::size_t g = setup.grid.size();

    auto trials = run_trials(config, reps * g, [&](std::size_t u, RandomStream& trng, TrialResult& r) {
        const std::size_t rep = u / g;
        const std::size_t n = setup.grid[u % g];
        std::optional<Scenario> own;
        if (!fixed) {
            RandomStream mrng(StreamId{config.seed, experiment_id(config.kind, model_stream), rep + 1});
            own = make_scenario(config, fallback, mrng);
        }
        const Scenario& sc = fixed ? *fixed : *own;
        const double v_true = fixed_value ? *fixed_value : exact_value(sc.mdp, sc.target)[sc.mdp.initial_state];
        const auto frame = ModelFrame::of(sc.mdp);
        auto counts = frame.empty_counts();
        double is_sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto path = sample_path(sc.mdp, sc.behavior, trng);
            counts.add_path(path);
            if (setup.importance) {
                const double w = importance_weight(path, sc.target, sc.behavior);
                if (w != 0.0) is_sum += w * path_return(path);
            }
        }
        r.set("replication", static_cast<double>(rep));
        r.set("n", static_cast<double>(n));
        r.set("true_value", v_true);
        if (setup.model_based) {
            const double mb = model_based_evaluate(counts, sc.target, frame);
            r.set("mb_estimate", mb);
            r.set("mb_abs_error", std::abs(mb - v_true));
        }
        if (setup.importance) {
            const double is = is_sum / static_cast<double>(n);
            r.set("is_estimate", is);
            r.set("is_abs_error", std::abs(is - v_true));
        }
    });

    json per_n = json::array();
    for (std::size_t j = 0; j < g; ++j) {
        json entry = {{"n", setup.grid[j]}};
        for (const char* est : {"mb", "is"}) {
            const std::string column = std::string(est) + "_abs_error";
            if ((est[0] == 'm' && !setup.model_based) || (est[0] == 'i' && !setup.importance)) continue;
            std::vector<double> errors;
            for (std::size_t rep = 0; rep < reps; ++rep) errors.push_back(trials[rep * g + j].metric(column));
            entry[std::string(est) + "_median"] = median(errors);
            entry[std::string(est) + "_q90"] = quantile(errors, 0.9);
            entry[std::string(est) + "_q99"] = quantile(errors, 0.99);
        }
        per_n.push_back(std::move(entry));
    }
    summary["per_n"] = per_n;
    summary["replications"] = reps;
    if (fixed) {
        summary["true_value"] = *fixed_value;
        const auto ratio = is_log_ratio_stats(fixed->target, fixed->behavior, fixed->mdp.gamma,
                                              fixed->mdp.absorbing_state);
        summary["max_policy_ratio"] = ratio.max_ratio;
    }
    return finish(config, std::move(trials), summary, false);
}

std::vector<std::size_t> grid_param(const ExperimentConfig& config, std::vector<std::size_t> fallback) {
    auto grid = param<std::vector<std::size_t>>(config, "n_grid", std::move(fallback));
    for (auto n : grid) {
        if (n == 0) throw ConfigError("n_grid entries must be positive");
    }
    return grid;
}

ExperimentResult run_theorem1_consistency(const ExperimentConfig& config) {
    SweepSetup setup;
    setup.grid = grid_param(config, {100, 1000, 10000, 40000});
    setup.importance = false;
    if (setup.grid.size() < 2) throw ConfigError("theorem1_coverage needs at least two grid points");
    const double ratio_min = param<double>(config, "ratio_min", 0.3);
    const double ratio_max = param<double>(config, "ratio_max", 0.8);
    json summary;
    auto result = sweep(config, setup, summary);
    std::vector<double> medians;
    for (const auto& e : summary["per_n"]) medians.push_back(e["mb_median"].get<double>());
    bool monotone = true;
    for (std::size_t j = 0; j + 2 < medians.size(); ++j) monotone = monotone && medians[j + 1] < medians[j];
    const double ratio = medians[medians.size() - 1] / medians[medians.size() - 2];
    const bool passed = monotone && ratio >= ratio_min && ratio <= ratio_max;
    result.summary["monotone"] = monotone;
    result.summary["last_ratio"] = summary_number(ratio);
    result.summary["ratio_range"] = {ratio_min, ratio_max};
    result.summary["passed"] = passed;
    result.passed = passed;

    auto rng = model_rng(config);
    const auto sc = make_scenario(config, RandomMdpSpec{4, 2, 0.9, 1.0}, rng);
    const double eps = param<double>(config, "epsilon", 1.0);
    const double delta = param<double>(config, "delta", 0.1);
    const auto report = theorem1_path_bound(BoundQuery::from_policies(sc.mdp, sc.target, sc.behavior, eps, delta));
    result.summary["formula_paths"] = summary_number(report.required_paths);
    result.summary["formula_epsilon"] = eps;
    return result;
}

ExperimentResult run_sweep_experiment(const ExperimentConfig& config) {
    SweepSetup setup;
    setup.grid = grid_param(config, {100, 1000, 10000});
    const auto estimators = param<std::vector<std::string>>(config, "estimators", {"model_based", "importance_sampling"});
    setup.model_based = std::find(estimators.begin(), estimators.end(), "model_based") != estimators.end();
    setup.importance = std::find(estimators.begin(), estimators.end(), "importance_sampling") != estimators.end();
    if (!setup.model_based && !setup.importance) throw ConfigError("ope_sweep: no known estimator selected");
    setup.fresh = param<bool>(config, "fresh_mdp_per_trial", false);
    json summary;
    auto result = sweep(config, setup, summary);
    result.passed = true;
    result.summary["passed"] = true;
    return result;
}

// ---------------------------------------------------------------------------

TabularMdp two_action_figure1(double sigma, double sigma_alt, double gamma) {
    if (!(sigma >= 0.0 && sigma <= gamma && sigma_alt >= 0.0 && sigma_alt <= gamma && gamma < 1.0)) {
        throw ConfigError("need 0 <= sigma, sigma_alt <= gamma < 1");
    }
    TabularMdp mdp(3, 2, gamma);
    const std::array<double, 2> sig{sigma, sigma_alt};
    for (std::size_t a = 0; a < 2; ++a) {
        mdp.p(0, a, 0) = gamma - sig[a];
        mdp.p(0, a, 1) = sig[a];
        mdp.rewards(1, a) = 1.0;
    }
    mdp.rewards(0, 1) = 0.5;
    return mdp;
}

ExperimentResult run_is_experiment(const ExperimentConfig& config) {
    const auto n = param<std::size_t>(config, "n", 100);
    const double z_limit = param<double>(config, "z_limit", 4.0);
    if (n == 0) throw ConfigError("is_unbiasedness: n must be positive");
    const auto unbiased = two_action_figure1(param<double>(config, "sigma", 0.1), param<double>(config, "sigma_alt", 0.5),
                                             param<double>(config, "gamma", 0.9));
    const auto unbiased_behavior = Policy::uniform(3, 2);
    SaTable table(3, 2, 0.5);
    table(0, 0) = 0.0;
    table(0, 1) = 1.0;
    const Policy unbiased_target(table);
    const double v_unbiased = exact_value(unbiased, unbiased_target)[0];

    auto rng = model_rng(config);
    const auto tail = make_scenario(config, RandomMdpSpec{4, 2, 0.95, 1.0}, rng, std::vector<double>{1.0 / 3.0, 2.0 / 3.0},
                                    std::vector<double>{1.0, 0.0});
    const double v_tail = exact_value(tail.mdp, tail.target)[tail.mdp.initial_state];
    const auto tail_frame = ModelFrame::of(tail.mdp);

    auto trials = run_trials(config, config.trial_count(), [&](std::size_t i, RandomStream& trng, TrialResult& r) {
        const auto data = sample_dataset(unbiased, unbiased_behavior, n, trng);
        r.set("is_estimate", importance_sampling_evaluate(data, unbiased_target, unbiased_behavior));
        RandomStream aux(StreamId{config.seed, experiment_id(config.kind, aux_stream), i});
        const auto tail_data = sample_dataset(tail.mdp, tail.behavior, n, aux);
        const double is = importance_sampling_evaluate(tail_data, tail.target, tail.behavior);
        const double mb = model_based_evaluate(tail_data, tail.target, tail_frame);
        r.set("tail_is_estimate", is);
        r.set("tail_mb_estimate", mb);
        r.set("tail_is_abs_error", std::abs(is - v_tail));
        r.set("tail_mb_abs_error", std::abs(mb - v_tail));
    });
    std::vector<double> estimates, is_err, mb_err;
    for (const auto& t : trials) {
        estimates.push_back(t.metric("is_estimate"));
        is_err.push_back(t.metric("tail_is_abs_error"));
        mb_err.push_back(t.metric("tail_mb_abs_error"));
    }
    const double R = static_cast<double>(estimates.size());
    const double mean = std::accumulate(estimates.begin(), estimates.end(), 0.0) / R;
    double ss = 0.0;
    for (double e : estimates) ss += (e - mean) * (e - mean);
    const double sd = R > 1.0 ? std::sqrt(ss / (R - 1.0)) : kNan;
    const double se = sd / std::sqrt(R);
    const double z = (mean - v_unbiased) / se;
    const double is_p99 = quantile(is_err, 0.99);
    const double mb_p99 = quantile(mb_err, 0.99);
    const bool unbiased_ok = se == 0.0 ? mean == v_unbiased : std::abs(z) <= z_limit;
    const bool passed = unbiased_ok && is_p99 > mb_p99;
    const auto ratio = is_log_ratio_stats(tail.target, tail.behavior, tail.mdp.gamma, tail.mdp.absorbing_state);
    return finish(config, std::move(trials),
                  {{"true_value", v_unbiased},
                   {"mean_estimate", mean},
                   {"std_error", summary_number(se)},
                   {"z", summary_number(z)},
                   {"z_limit", z_limit},
                   {"paths_per_dataset", n},
                   {"tail_true_value", v_tail},
                   {"tail_gamma", tail.mdp.gamma},
                   {"tail_max_policy_ratio", ratio.max_ratio},
                   {"tail_is_q99", is_p99},
                   {"tail_mb_q99", mb_p99},
                   {"tail_is_median", median(is_err)},
                   {"tail_mb_median", median(mb_err)}},
                  passed);
}

// ---------------------------------------------------------------------------

ExperimentResult run_certificate_experiment(const ExperimentConfig& config) {
    const auto n = param<std::size_t>(config, "num_paths", 2000);
    const double delta = param<double>(config, "delta", 0.1);
    const bool fresh = param<bool>(config, "fresh_mdp_per_trial", !config.files.has_value());
    if (n == 0 || !(delta > 0.0 && delta < 1.0)) throw ConfigError("certificate_coverage: bad num_paths or delta");
    const RandomMdpSpec fallback{4, 2, 0.9, 1.0};
    std::optional<Scenario> fixed;
    if (!fresh) {
        auto rng = model_rng(config);
        fixed = make_scenario(config, fallback, rng);
    }
    auto trials = run_trials(config, config.trial_count(), [&](std::size_t, RandomStream& rng, TrialResult& r) {
        std::optional<Scenario> own;
        if (!fixed) own = make_scenario(config, fallback, rng);
        const Scenario& sc = fixed ? *fixed : *own;
        const auto frame = ModelFrame::of(sc.mdp);
        const auto data = sample_dataset(sc.mdp, sc.behavior, n, rng);
        const double v_true = exact_value(sc.mdp, sc.target)[sc.mdp.initial_state];
        const double v_hat = model_based_evaluate(data, sc.target, frame);
        const auto cert = accuracy_certificate(data, frame, sc.target, sc.behavior, delta);
        const auto model = estimate_model(frame, counts_for(frame, data));
        const auto interval = value_interval_from_radii(model.mdp, sc.target, cert.radii);
        const double err = std::abs(v_true - v_hat);
        r.set("true_value", v_true);
        r.set("estimate", v_hat);
        r.set("abs_error", err);
        r.set("epsilon", cert.epsilon);
        r.set("covered", err <= cert.epsilon ? 1.0 : 0.0);
        r.set("vacuous", cert.epsilon >= 1.0 / (1.0 - sc.mdp.gamma) ? 1.0 : 0.0);
        r.set("interval_lower", interval.lower);
        r.set("interval_upper", interval.upper);
        r.set("interval_covered", interval.lower <= v_true && v_true <= interval.upper ? 1.0 : 0.0);
    });
    double covered = 0.0, vacuous = 0.0, interval_covered = 0.0;
    std::vector<double> widths;
    for (const auto& t : trials) {
        covered += t.metric("covered");
        vacuous += t.metric("vacuous");
        interval_covered += t.metric("interval_covered");
        widths.push_back(t.metric("interval_upper") - t.metric("interval_lower"));
    }
    const double R = static_cast<double>(trials.size());
    const double coverage = covered / R;
    const bool passed = coverage >= 1.0 - delta;
    return finish(config, std::move(trials),
                  {{"coverage", coverage},
                   {"required_coverage", 1.0 - delta},
                   {"vacuous_fraction", vacuous / R},
                   {"interval_coverage", interval_covered / R},
                   {"interval_median_width", median(widths)},
                   {"paths_per_dataset", n},
                   {"delta", delta}},
                  passed);
}

// ---------------------------------------------------------------------------

double best_deterministic_value(const TabularMdp& mdp) {
    std::vector<std::size_t> transient;
    for (std::size_t s = 0; s < mdp.num_states; ++s) {
        if (!mdp.is_absorbing(s)) transient.push_back(s);
    }
    std::vector<std::size_t> actions(mdp.num_states, 0);
    double best = -std::numeric_limits<double>::infinity();
    for (;;) {
        best = std::max(best, exact_value(mdp, Policy::deterministic(actions, mdp.num_actions))[mdp.initial_state]);
        std::size_t k = 0;
        while (k < transient.size() && ++actions[transient[k]] == mdp.num_actions) actions[transient[k++]] = 0;
        if (k == transient.size()) return best;
    }
}

ExperimentResult run_optimization_experiment(const ExperimentConfig& config) {
    const auto n = param<std::size_t>(config, "num_paths", 100000);
    const double tolerance_fraction = param<double>(config, "tolerance_fraction", 0.1);
    const double required = param<double>(config, "required_fraction", 0.95);
    const double enum_tolerance = param<double>(config, "enumeration_tolerance", 1e-9);
    const auto max_enumeration = param<std::size_t>(config, "max_enumeration", 4096);
    if (n == 0) throw ConfigError("corollary1_coverage: num_paths must be positive");
    const bool fresh = param<bool>(config, "fresh_mdp_per_trial", !config.files.has_value());
    const RandomMdpSpec fallback{5, 2, 0.9, 1.0};
    std::optional<Scenario> fixed;
    if (!fresh) {
        auto rng = model_rng(config);
        fixed = make_scenario(config, fallback, rng);
    }
    auto trials = run_trials(config, config.trial_count(), [&](std::size_t, RandomStream& rng, TrialResult& r) {
        std::optional<Scenario> own;
        if (!fixed) own = make_scenario(config, fallback, rng);
        const Scenario& sc = fixed ? *fixed : *own;
        const auto& mdp = sc.mdp;
        const auto frame = ModelFrame::of(mdp);
        auto counts = frame.empty_counts();
        for (std::size_t i = 0; i < n; ++i) counts.add_path(sample_path(mdp, sc.behavior, rng));
        const auto model = estimate_model(frame, counts);
        const auto opt = model_based_optimize(counts, frame);
        const double v_star = solve_optimal(mdp).values[mdp.initial_state];
        const double v_policy = exact_value(mdp, opt.policy)[mdp.initial_state];
        const double tolerance = tolerance_fraction / (1.0 - mdp.gamma);
        r.set("optimal_value", v_star);
        r.set("policy_value", v_policy);
        r.set("regret", v_star - v_policy);
        r.set("within", v_star - v_policy <= tolerance ? 1.0 : 0.0);
        r.set("model_value", opt.estimated_value);
        const double combos = std::pow(static_cast<double>(mdp.num_actions), static_cast<double>(mdp.num_states - 1));
        if (combos <= static_cast<double>(max_enumeration)) {
            const double on_model = exact_value(model.mdp, opt.policy)[mdp.initial_state];
            const double best = best_deterministic_value(model.mdp);
            r.set("enumeration_gap", best - on_model);
            r.set("optimal_on_model", best - on_model <= enum_tolerance ? 1.0 : 0.0);
        } else {
            r.set("enumeration_gap", kNan);
            r.set("optimal_on_model", kNan);
        }
        const auto stats = occupancy_stats(mdp, sc.behavior);
        const auto report = corollary1_path_bound(mdp.num_states, mdp.num_actions, mdp.gamma, tolerance, 0.05,
                                                  stats.x, stats.rho, mdp.absorbing_state);
        r.set("formula_paths", report.required_paths);
    });
    double within = 0.0;
    std::size_t enumerated = 0, exact = 0;
    double worst_gap = 0.0;
    for (const auto& t : trials) {
        within += t.metric("within");
        const double flag = t.metric("optimal_on_model");
        if (std::isfinite(flag)) {
            ++enumerated;
            exact += flag == 1.0 ? 1 : 0;
            worst_gap = std::max(worst_gap, t.metric("enumeration_gap"));
        }
    }
    const double fraction = within / static_cast<double>(trials.size());
    const bool passed = fraction >= required && exact == enumerated;
    return finish(config, std::move(trials),
                  {{"within_fraction", fraction},
                   {"required_fraction", required},
                   {"tolerance_fraction", tolerance_fraction},
                   {"paths_per_dataset", n},
                   {"enumerated", enumerated},
                   {"optimal_on_model", exact},
                   {"max_enumeration_gap", worst_gap}},
                  passed);
}

}  // namespace

// ---------------------------------------------------------------------------

std::string_view to_string(ExperimentKind kind) noexcept {
    for (const auto& k : kKinds) {
        if (k.kind == kind) return k.name;
    }
    return "unknown";
}

ExperimentKind experiment_kind_from_string(std::string_view name) {
    for (const auto& k : kKinds) {
        if (k.name == name || k.alias == name) return k.kind;
    }
    throw ConfigError("unknown experiment kind: " + std::string(name));
}

std::vector<ExperimentKind> all_experiment_kinds() {
    std::vector<ExperimentKind> out;
    for (const auto& k : kKinds) out.push_back(k.kind);
    return out;
}

std::size_t default_trials(ExperimentKind kind) noexcept {
    for (const auto& k : kKinds) {
        if (k.kind == kind) return k.trials;
    }
    return 1;
}

std::size_t ExperimentConfig::trial_count() const { return trials > 0 ? trials : default_trials(kind); }

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    static const std::array<std::string_view, 9> known{"schema_version", "kind",   "generator", "files", "trials",
                                                       "seed",           "output", "workers",   "params"};
    for (const auto& [key, value] : doc.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown config field: " + key);
    }
    ExperimentConfig c;
    try {
        if (!doc.contains("schema_version")) throw ConfigError("config needs \"schema_version\": 1");
        c.schema_version = doc.at("schema_version").get<int>();
        if (c.schema_version != 1) throw ConfigError("unsupported schema_version " + std::to_string(c.schema_version));
        c.kind = experiment_kind_from_string(doc.at("kind").get<std::string>());
        if (doc.contains("trials")) {
            const auto t = doc.at("trials").get<long long>();
            if (t < 1) throw ConfigError("trials must be at least 1");
            c.trials = static_cast<std::size_t>(t);
        }
        if (doc.contains("seed")) c.seed = doc.at("seed").get<std::uint64_t>();
        if (doc.contains("output")) c.output = doc.at("output").get<std::string>();
        if (doc.contains("workers")) {
            const auto w = doc.at("workers").get<long long>();
            if (w < 1) throw ConfigError("workers must be at least 1");
            c.workers = static_cast<std::size_t>(w);
        }
        if (doc.contains("generator")) {
            const auto& g = doc.at("generator");
            RandomMdpSpec spec;
            spec.num_states = g.value("num_states", spec.num_states);
            spec.num_actions = g.value("num_actions", spec.num_actions);
            spec.gamma = g.value("gamma", spec.gamma);
            spec.concentration = g.value("concentration", spec.concentration);
            if (spec.num_states < 2 || spec.num_actions < 1 || !(spec.gamma > 0.0 && spec.gamma < 1.0) ||
                !(spec.concentration > 0.0)) {
                throw ConfigError("generator needs num_states >= 2, num_actions >= 1, 0 < gamma < 1, concentration > 0");
            }
            c.generator = spec;
        }
        if (doc.contains("files")) {
            const auto& f = doc.at("files");
            ModelFiles files;
            files.mdp = f.at("mdp").get<std::string>();
            files.target = f.value("target", std::string());
            files.behavior = f.value("behavior", std::string());
            c.files = files;
        }
        if (doc.contains("params")) {
            c.params = doc.at("params");
            if (!c.params.is_object()) throw ConfigError("params must be an object");
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (c.generator && c.files) throw ConfigError("give either a generator or model files, not both");
    return c;
}

json ExperimentConfig::to_json() const {
    json doc = {{"schema_version", schema_version},
                {"kind", std::string(to_string(kind))},
                {"trials", trial_count()},
                {"seed", seed},
                {"output", output},
                {"workers", workers},
                {"params", params}};
    if (generator) {
        doc["generator"] = {{"num_states", generator->num_states},
                            {"num_actions", generator->num_actions},
                            {"gamma", generator->gamma},
                            {"concentration", generator->concentration}};
    }
    if (files) doc["files"] = {{"mdp", files->mdp}, {"target", files->target}, {"behavior", files->behavior}};
    return doc;
}

std::string content_hash(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string ExperimentConfig::hash() const {
    auto doc = to_json();
    doc.erase("output");
    doc.erase("workers");
    return content_hash(doc.dump());
}

std::size_t Table::column(std::string_view name) const {
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (columns[i] == name) return i;
    }
    throw std::out_of_range("no column named " + std::string(name));
}

std::vector<double> Table::values(std::string_view name) const {
    const std::size_t c = column(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& row : rows) out.push_back(row[c]);
    return out;
}

void write_csv(std::ostream& out, const Table& table, std::string_view config_hash) {
    out << "# config_hash=" << config_hash << "\n";
    for (std::size_t i = 0; i < table.columns.size(); ++i) out << (i ? "," : "") << table.columns[i];
    out << "\n";
    char buf[64];
    for (const auto& row : table.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", row[i]);
            out << (i ? "," : "") << buf;
        }
        out << "\n";
    }
}

std::string to_csv(const Table& table, std::string_view config_hash) {
    std::ostringstream out;
    write_csv(out, table, config_hash);
    return out.str();
}

double TrialResult::metric(std::string_view name) const {
    for (const auto& [key, value] : metrics) {
        if (key == name) return value;
    }
    throw std::out_of_range("trial has no metric named " + std::string(name));
}

WilsonInterval wilson_interval(std::size_t successes, std::size_t trials, double z) {
    if (trials == 0) return {0.0, 1.0};
    const double n = static_cast<double>(trials);
    const double p = static_cast<double>(successes) / n;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double center = (p + z2 / (2.0 * n)) / denom;
    const double half = z / denom * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
    return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile level must lie in [0, 1]");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

Table run_bias_curve(const std::vector<double>& sigma_grid, std::size_t n_trials, std::uint64_t seed,
                     std::size_t workers) {
    for (double s : sigma_grid) {
        if (!(s > 0.0 && s < 1.0)) throw std::invalid_argument("run_bias_curve: sigma must lie in (0, 1)");
    }
    Table table;
    table.columns = {"sigma", "analytic", "closed_form", "bias", "mc_mean", "mc_se", "mc_z"};
    table.rows.resize(sigma_grid.size());
    parallel_for(sigma_grid.size(), workers, [&](std::size_t i) {
        const double sigma = sigma_grid[i];
        const double analytic = expected_sigma_hat_single_path(sigma);
        double mean = kNan, se = kNan, z = kNan;
        if (n_trials > 0) {
            RandomStream rng(StreamId{seed, experiment_id(ExperimentKind::bias_curve, trial_stream), i});
            double sum = 0.0, sum_sq = 0.0;
            for (std::size_t t = 0; t < n_trials; ++t) {
                const double y = 1.0 / static_cast<double>(rng.geometric_trials(sigma));
                sum += y;
                sum_sq += y * y;
            }
            const double n = static_cast<double>(n_trials);
            mean = sum / n;
            if (n_trials > 1) {
                const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
                se = std::sqrt(var / n);
                z = se > 0.0 ? (mean - analytic) / se : kNan;
            }
        }
        table.rows[i] = {sigma, analytic, expected_sigma_hat_closed_form(sigma), analytic - sigma, mean, se, z};
    });
    return table;
}

BiasPeak max_single_path_bias(double step) {
    if (!(step > 0.0 && step < 0.5)) throw std::invalid_argument("max_single_path_bias: step must lie in (0, 0.5)");
    BiasPeak peak;
    const auto points = static_cast<std::size_t>(std::floor(1.0 / step + 1e-9));
    for (std::size_t i = 1; i < points; ++i) {
        const double sigma = static_cast<double>(i) * step;
        const double bias = expected_sigma_hat_single_path(sigma) - sigma;
        if (bias > peak.bias) peak = {sigma, bias};
    }
    return peak;
}

MseEstimate run_theorem2_mse(const std::vector<double>& p, std::size_t n, std::size_t n_trials, std::uint64_t seed,
                             std::size_t workers, std::size_t chunks) {
    std::size_t component = 0;
    const auto parts = mse_chunks(p, n, n_trials, seed, workers, chunks, component);
    return summarize_mse(parts, p, n, component);
}

ExperimentResult run_coverage_experiment(const ExperimentConfig& config) {
    switch (config.kind) {
        case ExperimentKind::lemma2_coverage: return run_lemma2(config);
        case ExperimentKind::lemma3_coverage: return run_lemma3(config);
        case ExperimentKind::lemma4_coverage: return run_lemma4(config);
        case ExperimentKind::theorem1_coverage: return run_theorem1_consistency(config);
        case ExperimentKind::corollary1_coverage: return run_optimization_experiment(config);
        case ExperimentKind::certificate_coverage: return run_certificate_experiment(config);
        default:
            throw ConfigError(std::string(to_string(config.kind)) + " is not a coverage experiment");
    }
}

ExperimentResult run_ope_sweep(const ExperimentConfig& config) {
    if (config.kind != ExperimentKind::ope_sweep) throw ConfigError("run_ope_sweep needs kind ope_sweep");
    return run_sweep_experiment(config);
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
    if (config.workers == 0) throw ConfigError("workers must be at least 1");
    switch (config.kind) {
        case ExperimentKind::bias_curve: return run_bias_experiment(config);
        case ExperimentKind::theorem2_mse: return run_theorem2_experiment(config);
        case ExperimentKind::is_unbiasedness: return run_is_experiment(config);
        case ExperimentKind::ope_sweep: return run_sweep_experiment(config);
        case ExperimentKind::occupancy_identity: return run_occupancy_identity(config);
        case ExperimentKind::lemma1_sandwich: return run_lemma1_sandwich(config);
        default: return run_coverage_experiment(config);
    }
}

std::string resolve_output_path(const ExperimentConfig& config) {
    if (!config.output.empty()) return config.output;
    const std::string file = std::string(to_string(config.kind)) + ".csv";
    if (const char* dir = std::getenv("OFFRL_OUTPUT_DIR"); dir && *dir) {
        return (std::filesystem::path(dir) / file).string();
    }
    return file;
}

void check_overwrite(const std::string& path, std::string_view config_hash, bool force) {
    if (force || !std::filesystem::exists(path)) return;
    std::ifstream in(path);
    std::string head(4096, '\0');
    in.read(head.data(), static_cast<std::streamsize>(head.size()));
    head.resize(static_cast<std::size_t>(in.gcount()));
    static const std::regex pattern("config_hash[\"]?\\s*[=:]\\s*\"?([0-9a-f]{16})");
    std::smatch match;
    if (std::regex_search(head, match, pattern) && match[1].str() == config_hash) return;
    throw OutputConflict(path + " exists and was written by a different configuration (use --force to overwrite)");
}

void write_experiment_outputs(const ExperimentResult& result, const std::string& csv_path, bool force) {
    const std::string summary_path = csv_path + ".json";
    check_overwrite(csv_path, result.config_hash, force);
    check_overwrite(summary_path, result.config_hash, force);
    const auto parent = std::filesystem::path(csv_path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    {
        std::ofstream out(csv_path);
        if (!out) throw std::runtime_error("cannot open " + csv_path + " for writing");
        write_csv(out, result.table, result.config_hash);
    }
    std::ofstream out(summary_path);
    if (!out) throw std::runtime_error("cannot open " + summary_path + " for writing");
    out << result.summary.dump(2) << "\n";
}

}  // namespace offrl
