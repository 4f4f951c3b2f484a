#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "offrl/bounds.hpp"
#include "offrl/estimation.hpp"
#include "offrl/mdp.hpp"

namespace offrl {

using json = nlohmann::json;

/// Raised for malformed documents (missing fields, wrong types or shapes).
class FormatError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// {"gamma", "num_states", "num_actions", "transitions": [[[..]]], "rewards":
/// [[..]], "initial_state", "absorbing_state"}. absorbing_state is optional on
/// input and defaults to the last state. Loading runs the validator and throws
/// InvalidModel on any violation.
json mdp_to_json(const TabularMdp& mdp);
TabularMdp mdp_from_json(const json& doc);

/// {"num_states", "num_actions", "probs": [[..]]}.
json policy_to_json(const Policy& policy);
Policy policy_from_json(const json& doc);

TabularMdp load_mdp(const std::string& path);
void save_mdp(const std::string& path, const TabularMdp& mdp);
/// When `mdp` is given the policy is validated against it.
Policy load_policy(const std::string& path, const TabularMdp* mdp = nullptr);
void save_policy(const std::string& path, const Policy& policy);

/// One path per line: {"steps": [[s, a, r], ...]}. Blank lines are skipped.
void write_dataset_jsonl(std::ostream& out, const Dataset& dataset);
Dataset read_dataset_jsonl(std::istream& in);
void save_dataset(const std::string& path, const Dataset& dataset);
Dataset load_dataset(const std::string& path);

/// Checks that every step is a non-absorbing in-range pair whose reward equals
/// the mean reward of the MDP. Returns one message per offending step.
std::vector<std::string> validate_dataset(const Dataset& dataset, const TabularMdp& mdp);

/// CSV with header s,a,q,n and one line per nonzero count.
void write_counts_csv(std::ostream& out, const TransitionCounts& counts);

struct EvaluationRecord {
    std::string estimator;
    double estimate = 0.0;
    std::size_t n_paths = 0;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::optional<double> lower;
    std::optional<double> upper;
    std::optional<double> delta;
};

json to_json(const EvaluationRecord& record);

json to_json(const BoundReport& report);
json to_json(const Certificate& certificate);

/// Aligned text table of the per-beta entries of a report.
std::string format_table(const BoundReport& report);

/// Non-finite values are written as the strings "inf", "-inf" and "nan".
json number_to_json(double value);

/// Reads a whole file; throws std::runtime_error when it cannot be opened.
std::string read_file(const std::string& path);

}  // namespace offrl
