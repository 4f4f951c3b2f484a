#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "offrl/generators.hpp"
#include "offrl/io.hpp"
#include "offrl/mdp.hpp"
#include "offrl/rng.hpp"

namespace offrl {

enum class ExperimentKind {
    bias_curve,
    lemma2_coverage,
    lemma3_coverage,
    lemma4_coverage,
    theorem1_coverage,    // model-based evaluation consistency over a path-count grid
    corollary1_coverage,  // model-based optimization accuracy
    theorem2_mse,
    is_unbiasedness,
    ope_sweep,
    certificate_coverage,
    occupancy_identity,
    lemma1_sandwich,
};

std::string_view to_string(ExperimentKind kind) noexcept;
/// Accepts the full names and the short forms "lemma2", "lemma3", "lemma4",
/// "theorem1", "corollary1", "theorem2", "certificate".
ExperimentKind experiment_kind_from_string(std::string_view name);
std::vector<ExperimentKind> all_experiment_kinds();

/// Raised for malformed or inconsistent experiment configurations.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when an output file exists and carries a different config hash.
class OutputConflict : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ModelFiles {
    std::string mdp;
    std::string target;
    std::string behavior;
};

/// JSON form:
///   {"schema_version": 1, "kind": "...", "trials": R, "seed": s,
///    "output": "...", "workers": w,
///    "generator": {"num_states", "num_actions", "gamma", "concentration"},
///    "files": {"mdp", "target", "behavior"},
///    "params": {...kind-specific...}}
/// At most one of "generator" and "files" may be given; without either the
/// kind's built-in model is used.
struct ExperimentConfig {
    int schema_version = 1;
    ExperimentKind kind = ExperimentKind::bias_curve;
    std::optional<RandomMdpSpec> generator;
    std::optional<ModelFiles> files;
    std::size_t trials = 0;  // 0 selects the kind's default
    std::uint64_t seed = 0;
    std::string output;
    std::size_t workers = 1;
    json params = json::object();

    static ExperimentConfig from_json(const json& doc);
    json to_json() const;

    /// FNV-1a of the canonical JSON without "output" and "workers", as 16 hex
    /// digits. Results depend only on what the hash covers.
    std::string hash() const;

    std::size_t trial_count() const;
};

std::size_t default_trials(ExperimentKind kind) noexcept;

/// 64-bit FNV-1a of `text` as 16 lowercase hex digits.
std::string content_hash(std::string_view text);

/// Numeric result table, one row per trial unit, in trial order.
struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    std::size_t column(std::string_view name) const;
    std::vector<double> values(std::string_view name) const;
};

/// "# config_hash=<hash>", the header and the rows, values as %.17g.
void write_csv(std::ostream& out, const Table& table, std::string_view config_hash);
std::string to_csv(const Table& table, std::string_view config_hash);

struct TrialResult {
    std::uint64_t trial_id = 0;
    StreamId stream;
    std::vector<std::pair<std::string, double>> metrics;
    double wall_seconds = 0.0;

    void set(std::string name, double value) { metrics.emplace_back(std::move(name), value); }
    double metric(std::string_view name) const;
};

struct WilsonInterval {
    double lower = 0.0;
    double upper = 1.0;
};

inline constexpr double kWilsonZ99 = 2.5758293035489004;

/// Wilson score interval for `successes` out of `trials` (two-sided, default 99%).
WilsonInterval wilson_interval(std::size_t successes, std::size_t trials, double z = kWilsonZ99);

/// Linear-interpolation sample quantile (type 7). Throws on empty input.
double quantile(std::vector<double> values, double q);

struct ExperimentResult {
    ExperimentKind kind = ExperimentKind::bias_curve;
    std::string config_hash;
    Table table;
    json summary;  // deterministic: no timings
    bool passed = false;
    std::vector<TrialResult> trials;
};

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index runs
/// exactly once; the first exception is rethrown after all threads join.
template <typename F>
void parallel_for(std::size_t n, std::size_t workers, F&& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto work = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n || failed.load()) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                failed.store(true);
            }
        }
    };
    std::vector<std::thread> pool;
    const std::size_t count = std::min(workers, n);
    pool.reserve(count);
    for (std::size_t w = 0; w < count; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

/// Analytic and Monte Carlo single-path estimates of sigma for each grid
/// point. Columns: sigma, analytic, closed_form, bias, mc_mean, mc_se, mc_z.
/// Monte Carlo columns are nan when n_trials is 0.
Table run_bias_curve(const std::vector<double>& sigma_grid, std::size_t n_trials, std::uint64_t seed,
                     std::size_t workers = 1);

struct BiasPeak {
    double sigma = 0.0;
    double bias = 0.0;
};

/// Largest E[sigma_hat] - sigma over the grid step, 2 step, ..., 1 - step.
BiasPeak max_single_path_bias(double step = 1e-4);

struct MseEstimate {
    std::size_t draws = 0;
    std::size_t component = 0;  // the most likely value
    double mse_df = 0.0;
    double se_df = 0.0;
    double mse_sm = 0.0;
    double se_sm = 0.0;
    double mse_sm_exact = 0.0;  // p (1 - p) / N
    double bound = 0.0;         // df_mse_bound
};

/// Monte Carlo MSE of the deterministic-favored and sample-mean estimates at
/// the most likely component, with N samples per draw.
MseEstimate run_theorem2_mse(const std::vector<double>& p, std::size_t n, std::size_t n_trials,
                             std::uint64_t seed, std::size_t workers = 1, std::size_t chunks = 100);

/// Threshold coverage for the lemma2/3/4 kinds: failure count, rate and Wilson
/// interval; passes when the lower Wilson limit is at most delta'.
ExperimentResult run_coverage_experiment(const ExperimentConfig& config);

/// Error of model-based and importance-sampling estimates over a path-count grid.
ExperimentResult run_ope_sweep(const ExperimentConfig& config);

/// Dispatches on config.kind.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Output file for a config: config.output when set, otherwise
/// $OFFRL_OUTPUT_DIR/<kind>.csv, otherwise ./<kind>.csv.
std::string resolve_output_path(const ExperimentConfig& config);

/// Throws OutputConflict when `path` exists and does not carry `config_hash`,
/// unless `force`.
void check_overwrite(const std::string& path, std::string_view config_hash, bool force);

/// Writes the CSV to `csv_path` and the summary to `csv_path` + ".json",
/// both guarded by check_overwrite.
void write_experiment_outputs(const ExperimentResult& result, const std::string& csv_path, bool force);

}  // namespace offrl
