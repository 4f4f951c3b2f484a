#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "offrl/rng.hpp"

namespace offrl {

/// Raised when a linear solve misses its residual tolerance or a fixed-point
/// iteration does not converge.
class SolverError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when an MDP or policy violates its structural invariants.
class InvalidModel : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Dense S x A table of doubles (occupancies, rewards, probabilities).
class SaTable {
public:
    SaTable() = default;
    SaTable(std::size_t num_states, std::size_t num_actions, double fill = 0.0)
        : num_states_(num_states), num_actions_(num_actions), data_(num_states * num_actions, fill) {}

    std::size_t num_states() const noexcept { return num_states_; }
    std::size_t num_actions() const noexcept { return num_actions_; }

    double& operator()(std::size_t s, std::size_t a) { return data_[s * num_actions_ + a]; }
    double operator()(std::size_t s, std::size_t a) const { return data_[s * num_actions_ + a]; }

    std::span<double> row(std::size_t s) { return {data_.data() + s * num_actions_, num_actions_}; }
    std::span<const double> row(std::size_t s) const { return {data_.data() + s * num_actions_, num_actions_}; }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    bool operator==(const SaTable&) const = default;

private:
    std::size_t num_states_ = 0;
    std::size_t num_actions_ = 0;
    std::vector<double> data_;
};

/// Finite MDP with an absorbing final state that every other state enters
/// with probability 1 - gamma under every action.
///
/// Indices are 0-based. Constructors place the absorbing state last; the
/// field is explicit so augmented models may place it elsewhere.
struct TabularMdp {
    std::size_t num_states = 0;   // includes the absorbing state
    std::size_t num_actions = 0;
    double gamma = 0.0;           // probability of not being absorbed per step
    std::vector<double> transitions;  // S x A x S, row-major
    SaTable rewards;                  // mean rewards in [0, 1]
    std::size_t initial_state = 0;
    std::size_t absorbing_state = 0;

    TabularMdp() = default;

    /// Every non-absorbing row starts as the no-data model: stay with
    /// probability gamma, absorb with 1 - gamma. Rewards start at zero.
    TabularMdp(std::size_t states, std::size_t actions, double discount);

    double& p(std::size_t s, std::size_t a, std::size_t q) {
        return transitions[(s * num_actions + a) * num_states + q];
    }
    double p(std::size_t s, std::size_t a, std::size_t q) const {
        return transitions[(s * num_actions + a) * num_states + q];
    }
    std::span<double> row(std::size_t s, std::size_t a) {
        return {transitions.data() + (s * num_actions + a) * num_states, num_states};
    }
    std::span<const double> row(std::size_t s, std::size_t a) const {
        return {transitions.data() + (s * num_actions + a) * num_states, num_states};
    }
    bool is_absorbing(std::size_t s) const noexcept { return s == absorbing_state; }
};

/// Stationary stochastic policy, one action distribution per state.
struct Policy {
    SaTable probs;

    Policy() = default;
    explicit Policy(SaTable table) : probs(std::move(table)) {}

    static Policy uniform(std::size_t num_states, std::size_t num_actions);
    static Policy deterministic(std::span<const std::size_t> actions, std::size_t num_actions);

    double operator()(std::size_t s, std::size_t a) const { return probs(s, a); }
    std::size_t num_states() const noexcept { return probs.num_states(); }
    std::size_t num_actions() const noexcept { return probs.num_actions(); }
};

struct Step {
    std::size_t state = 0;
    std::size_t action = 0;
    double reward = 0.0;

    bool operator==(const Step&) const = default;
};

/// One finite episode. The successor of step t is the state of step t + 1;
/// the successor of the last step is the absorbing state.
struct SamplePath {
    std::vector<Step> steps;
    bool reached_absorbing = true;

    /// Absorption time: number of transitions until the absorbing state.
    std::size_t length() const noexcept { return steps.size(); }

    bool operator==(const SamplePath&) const = default;
};

using Dataset = std::vector<SamplePath>;

/// Occupancy x, first-visit probability rho and return probability lambda
/// per state-action pair. x = rho / (1 - lambda).
struct OccupancyStats {
    SaTable x;
    SaTable rho;
    SaTable lambda;
};

/// Returns one message per violated invariant; empty iff the MDP is valid.
/// gamma = 1 is accepted here (the analytic bias model uses it); sampling and
/// the exact solvers reject it.
std::vector<std::string> validate_mdp(const TabularMdp& mdp);

/// Returns one message per violated invariant of `policy` against `mdp`.
std::vector<std::string> validate_policy(const Policy& policy, const TabularMdp& mdp);

/// Throws InvalidModel listing every violation.
void require_valid(const TabularMdp& mdp);
void require_valid(const Policy& policy, const TabularMdp& mdp);

/// Samples actions from `policy` and successors from the transition kernel
/// until the absorbing state is reached. Rewards are realized at their means.
SamplePath sample_path(const TabularMdp& mdp, const Policy& policy, RandomStream& rng);

Dataset sample_dataset(const TabularMdp& mdp, const Policy& policy, std::size_t num_paths,
                       RandomStream& rng);

/// Exact value per state: solves (I - P_pi) v = r_pi on non-absorbing states
/// by dense LU; v(absorbing) = 0.
std::vector<double> exact_value(const TabularMdp& mdp, const Policy& policy);

/// Expected number of times each pair is taken starting from the initial state.
SaTable exact_occupancy(const TabularMdp& mdp, const Policy& policy);

/// Probability that (s, a) is taken at least once starting from the initial state.
double first_visit_prob(const TabularMdp& mdp, const Policy& policy, std::size_t s, std::size_t a);

/// Probability that (s, a) is taken again, given it was just taken.
double return_prob(const TabularMdp& mdp, const Policy& policy, std::size_t s, std::size_t a);

/// x, rho and lambda for every pair. Pairs at the absorbing state are zero.
OccupancyStats occupancy_stats(const TabularMdp& mdp, const Policy& policy);

struct OptimalSolution {
    std::vector<double> values;  // optimal values per state
    Policy policy;               // greedy deterministic policy
    std::size_t iterations = 0;
};

/// Value iteration to a sup-norm change of `tolerance` (or `max_iterations`),
/// then exact policy-iteration polishing so the returned greedy policy is
/// optimal up to rounding. Ties break towards the lowest action index.
OptimalSolution solve_optimal(const TabularMdp& mdp, double tolerance = 1e-10,
                              std::size_t max_iterations = 1'000'000);

/// Three-state, single-action chain {s0, s1, absorbing}:
/// s0 -> s0 w.p. gamma - sigma, s0 -> s1 w.p. sigma, s1 -> s1 w.p. gamma.
/// Requires 0 <= sigma <= gamma <= 1. Rewards: r(s0) = 0, r(s1) = 1.
TabularMdp make_figure1_mdp(double sigma, double gamma);

}  // namespace offrl
