#include "offrl/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "linalg.hpp"

namespace offrl {

namespace detail {

Eigen::VectorXd solve_checked(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, const char* what) {
    Eigen::VectorXd x = a.partialPivLu().solve(b);
    const double scale = std::max(1.0, x.size() ? x.cwiseAbs().maxCoeff() : 0.0);
    const double residual = x.size() ? (a * x - b).cwiseAbs().maxCoeff() : 0.0;
    if (!std::isfinite(residual) || residual > 1e-10 * scale) {
        std::ostringstream msg;
        msg << what << ": linear solve residual " << residual << " exceeds tolerance";
        throw SolverError(msg.str());
    }
    return x;
}

TransientIndex::TransientIndex(const TabularMdp& mdp) : index(mdp.num_states, npos) {
    states.reserve(mdp.num_states);
    for (std::size_t s = 0; s < mdp.num_states; ++s) {
        if (mdp.is_absorbing(s)) continue;
        index[s] = states.size();
        states.push_back(s);
    }
}

}  // namespace detail

namespace {

constexpr double kRowTolerance = 1e-12;

void require_discounted(const TabularMdp& mdp, const char* what) {
    if (!(mdp.gamma > 0.0 && mdp.gamma < 1.0)) {
        throw InvalidModel(std::string(what) + ": gamma must lie in (0, 1)");
    }
}

// Expected immediate reward and policy-averaged kernel restricted to
// non-absorbing states.
struct PolicyChain {
    Eigen::MatrixXd kernel;
    Eigen::VectorXd reward;
};

PolicyChain policy_chain(const TabularMdp& mdp, const Policy& policy, const detail::TransientIndex& idx) {
    const auto n = static_cast<Eigen::Index>(idx.size());
    PolicyChain chain{Eigen::MatrixXd::Zero(n, n), Eigen::VectorXd::Zero(n)};
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const std::size_t s = idx.states[i];
        for (std::size_t a = 0; a < mdp.num_actions; ++a) {
            const double pa = policy(s, a);
            if (pa == 0.0) continue;
            chain.reward(i) += pa * mdp.rewards(s, a);
            for (std::size_t q = 0; q < mdp.num_states; ++q) {
                const std::size_t j = idx.index[q];
                if (j != detail::TransientIndex::npos) chain.kernel(i, j) += pa * mdp.p(s, a, q);
            }
        }
    }
    return chain;
}

// Hitting probabilities h(s') of the event "take (s, a)" before absorption.
Eigen::VectorXd hitting_probabilities(const TabularMdp& mdp, const Policy& policy,
                                      const detail::TransientIndex& idx, std::size_t s, std::size_t a) {
    const auto n = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const std::size_t sp = idx.states[i];
        for (std::size_t ap = 0; ap < mdp.num_actions; ++ap) {
            const double pa = policy(sp, ap);
            if (pa == 0.0) continue;
            if (sp == s && ap == a) {
                rhs(i) += pa;
                continue;
            }
            for (std::size_t q = 0; q < mdp.num_states; ++q) {
                const std::size_t j = idx.index[q];
                if (j != detail::TransientIndex::npos) system(i, j) -= pa * mdp.p(sp, ap, q);
            }
        }
    }
    return detail::solve_checked(system, rhs, "hitting probabilities");
}

void check_pair(const TabularMdp& mdp, std::size_t s, std::size_t a) {
    if (s >= mdp.num_states || a >= mdp.num_actions) throw std::out_of_range("state-action pair out of range");
    if (mdp.is_absorbing(s)) throw std::invalid_argument("pair at the absorbing state");
}

double lambda_from_hitting(const TabularMdp& mdp, const detail::TransientIndex& idx, const Eigen::VectorXd& h,
                           std::size_t s, std::size_t a) {
    double lambda = 0.0;
    for (std::size_t q = 0; q < mdp.num_states; ++q) {
        const std::size_t j = idx.index[q];
        if (j != detail::TransientIndex::npos) lambda += mdp.p(s, a, q) * h(static_cast<Eigen::Index>(j));
    }
    return lambda;
}

}  // namespace

TabularMdp::TabularMdp(std::size_t states, std::size_t actions, double discount)
    : num_states(states),
      num_actions(actions),
      gamma(discount),
      transitions(states * actions * states, 0.0),
      rewards(states, actions),
      initial_state(0),
      absorbing_state(states == 0 ? 0 : states - 1) {
    for (std::size_t s = 0; s < states; ++s) {
        for (std::size_t a = 0; a < actions; ++a) {
            if (s == absorbing_state) {
                p(s, a, s) = 1.0;
            } else {
                p(s, a, s) = gamma;
                p(s, a, absorbing_state) = 1.0 - gamma;
            }
        }
    }
}

Policy Policy::uniform(std::size_t num_states, std::size_t num_actions) {
    return Policy(SaTable(num_states, num_actions, 1.0 / static_cast<double>(num_actions)));
}

Policy Policy::deterministic(std::span<const std::size_t> actions, std::size_t num_actions) {
    SaTable table(actions.size(), num_actions);
    for (std::size_t s = 0; s < actions.size(); ++s) table(s, actions[s]) = 1.0;
    return Policy(std::move(table));
}

std::vector<std::string> validate_mdp(const TabularMdp& mdp) {
    std::vector<std::string> issues;
    auto report = [&](auto&&... parts) {
        std::ostringstream msg;
        (msg << ... << parts);
        issues.push_back(msg.str());
    };
    const std::size_t S = mdp.num_states;
    const std::size_t A = mdp.num_actions;
    if (S < 2) report("need at least two states (one absorbing)");
    if (A < 1) report("need at least one action");
    if (!(mdp.gamma > 0.0 && mdp.gamma <= 1.0)) report("gamma ", mdp.gamma, " outside (0, 1]");
    if (mdp.transitions.size() != S * A * S) report("transition tensor has wrong size");
    if (mdp.rewards.num_states() != S || mdp.rewards.num_actions() != A) report("reward table has wrong shape");
    if (mdp.initial_state >= S) report("initial state out of range");
    if (mdp.absorbing_state >= S) report("absorbing state out of range");
    if (!issues.empty()) return issues;

    const double leak = 1.0 - mdp.gamma;
    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t a = 0; a < A; ++a) {
            double sum = 0.0;
            bool negative = false;
            for (std::size_t q = 0; q < S; ++q) {
                const double v = mdp.p(s, a, q);
                if (!(v >= 0.0) || !std::isfinite(v)) negative = true;
                sum += v;
            }
            if (negative) report("negative or non-finite probability at (", s, ",", a, ")");
            if (std::abs(sum - 1.0) > kRowTolerance) report("row not stochastic at (", s, ",", a, "): sum ", sum);
            const double r = mdp.rewards(s, a);
            if (!(r >= 0.0 && r <= 1.0)) report("reward outside [0,1] at (", s, ",", a, ")");
            if (mdp.is_absorbing(s)) {
                if (mdp.p(s, a, s) != 1.0) report("absorbing state does not self-loop under action ", a);
                if (r != 0.0) report("nonzero reward at the absorbing state under action ", a);
            } else if (std::abs(mdp.p(s, a, mdp.absorbing_state) - leak) > kRowTolerance) {
                report("leak != 1-gamma at (", s, ",", a, "): ", mdp.p(s, a, mdp.absorbing_state));
            }
        }
    }
    return issues;
}

std::vector<std::string> validate_policy(const Policy& policy, const TabularMdp& mdp) {
    std::vector<std::string> issues;
    if (policy.num_states() != mdp.num_states || policy.num_actions() != mdp.num_actions) {
        issues.emplace_back("policy shape does not match the MDP");
        return issues;
    }
    for (std::size_t s = 0; s < policy.num_states(); ++s) {
        double sum = 0.0;
        for (std::size_t a = 0; a < policy.num_actions(); ++a) {
            const double v = policy(s, a);
            if (!(v >= 0.0)) issues.push_back("negative probability in policy row " + std::to_string(s));
            sum += v;
        }
        if (std::abs(sum - 1.0) > kRowTolerance) issues.push_back("policy row " + std::to_string(s) + " does not sum to 1");
    }
    return issues;
}

namespace {
[[noreturn]] void throw_issues(const char* what, const std::vector<std::string>& issues) {
    std::string msg = what;
    for (const auto& issue : issues) msg += "\n  - " + issue;
    throw InvalidModel(msg);
}
}  // namespace

void require_valid(const TabularMdp& mdp) {
    if (auto issues = validate_mdp(mdp); !issues.empty()) throw_issues("invalid MDP:", issues);
}

void require_valid(const Policy& policy, const TabularMdp& mdp) {
    if (auto issues = validate_policy(policy, mdp); !issues.empty()) throw_issues("invalid policy:", issues);
}

SamplePath sample_path(const TabularMdp& mdp, const Policy& policy, RandomStream& rng) {
    require_discounted(mdp, "sample_path");
    SamplePath path;
    std::size_t s = mdp.initial_state;
    while (!mdp.is_absorbing(s)) {
        const std::size_t a = rng.categorical(policy.probs.row(s));
        path.steps.push_back({s, a, mdp.rewards(s, a)});
        s = rng.categorical(mdp.row(s, a));
    }
    path.reached_absorbing = true;
    return path;
}

Dataset sample_dataset(const TabularMdp& mdp, const Policy& policy, std::size_t num_paths, RandomStream& rng) {
    Dataset data;
    data.reserve(num_paths);
    for (std::size_t i = 0; i < num_paths; ++i) data.push_back(sample_path(mdp, policy, rng));
    return data;
}

std::vector<double> exact_value(const TabularMdp& mdp, const Policy& policy) {
    require_discounted(mdp, "exact_value");
    const detail::TransientIndex idx(mdp);
    const auto chain = policy_chain(mdp, policy, idx);
    const auto n = static_cast<Eigen::Index>(idx.size());
    const Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n) - chain.kernel;
    const Eigen::VectorXd v = detail::solve_checked(system, chain.reward, "exact_value");
    std::vector<double> values(mdp.num_states, 0.0);
    for (std::size_t i = 0; i < idx.size(); ++i) values[idx.states[i]] = v(static_cast<Eigen::Index>(i));
    return values;
}

SaTable exact_occupancy(const TabularMdp& mdp, const Policy& policy) {
    require_discounted(mdp, "exact_occupancy");
    const detail::TransientIndex idx(mdp);
    SaTable x(mdp.num_states, mdp.num_actions);
    if (mdp.is_absorbing(mdp.initial_state)) return x;
    const auto chain = policy_chain(mdp, policy, idx);
    const auto n = static_cast<Eigen::Index>(idx.size());
    // Flow balance: mu = e_{s0} + P_pi^T mu.
    const Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n) - chain.kernel.transpose();
    Eigen::VectorXd start = Eigen::VectorXd::Zero(n);
    start(static_cast<Eigen::Index>(idx.index[mdp.initial_state])) = 1.0;
    const Eigen::VectorXd mu = detail::solve_checked(system, start, "exact_occupancy");
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const std::size_t s = idx.states[i];
        for (std::size_t a = 0; a < mdp.num_actions; ++a) x(s, a) = mu(static_cast<Eigen::Index>(i)) * policy(s, a);
    }
    return x;
}

double first_visit_prob(const TabularMdp& mdp, const Policy& policy, std::size_t s, std::size_t a) {
    require_discounted(mdp, "first_visit_prob");
    check_pair(mdp, s, a);
    if (mdp.is_absorbing(mdp.initial_state)) return 0.0;
    const detail::TransientIndex idx(mdp);
    const auto h = hitting_probabilities(mdp, policy, idx, s, a);
    return h(static_cast<Eigen::Index>(idx.index[mdp.initial_state]));
}

double return_prob(const TabularMdp& mdp, const Policy& policy, std::size_t s, std::size_t a) {
    require_discounted(mdp, "return_prob");
    check_pair(mdp, s, a);
    const detail::TransientIndex idx(mdp);
    const auto h = hitting_probabilities(mdp, policy, idx, s, a);
    return lambda_from_hitting(mdp, idx, h, s, a);
}

OccupancyStats occupancy_stats(const TabularMdp& mdp, const Policy& policy) {
    OccupancyStats stats{exact_occupancy(mdp, policy), SaTable(mdp.num_states, mdp.num_actions),
                         SaTable(mdp.num_states, mdp.num_actions)};
    const detail::TransientIndex idx(mdp);
    const bool start_absorbing = mdp.is_absorbing(mdp.initial_state);
    for (std::size_t s : idx.states) {
        for (std::size_t a = 0; a < mdp.num_actions; ++a) {
            const auto h = hitting_probabilities(mdp, policy, idx, s, a);
            stats.rho(s, a) = start_absorbing ? 0.0 : h(static_cast<Eigen::Index>(idx.index[mdp.initial_state]));
            stats.lambda(s, a) = lambda_from_hitting(mdp, idx, h, s, a);
        }
    }
    return stats;
}

namespace {

double q_value(const TabularMdp& mdp, const std::vector<double>& v, std::size_t s, std::size_t a) {
    double q = mdp.rewards(s, a);
    const auto row = mdp.row(s, a);
    for (std::size_t t = 0; t < mdp.num_states; ++t) q += row[t] * v[t];
    return q;
}

std::vector<std::size_t> greedy_actions(const TabularMdp& mdp, const std::vector<double>& v,
                                        const std::vector<std::size_t>* incumbent) {
    std::vector<std::size_t> actions(mdp.num_states, 0);
    for (std::size_t s = 0; s < mdp.num_states; ++s) {
        if (mdp.is_absorbing(s)) continue;
        std::size_t best = incumbent ? (*incumbent)[s] : 0;
        double best_q = q_value(mdp, v, s, best);
        for (std::size_t a = 0; a < mdp.num_actions; ++a) {
            const double q = q_value(mdp, v, s, a);
            // Switching away from the incumbent requires a strict gain, which
            // keeps policy iteration from cycling between tied actions.
            const double margin = incumbent ? 1e-12 * std::max(1.0, std::abs(best_q)) : 0.0;
            if (q > best_q + margin) {
                best = a;
                best_q = q;
            }
        }
        actions[s] = best;
    }
    return actions;
}

}  // namespace

OptimalSolution solve_optimal(const TabularMdp& mdp, double tolerance, std::size_t max_iterations) {
    require_discounted(mdp, "solve_optimal");
    OptimalSolution sol;
    std::vector<double> v(mdp.num_states, 0.0), next(mdp.num_states, 0.0);
    for (sol.iterations = 0; sol.iterations < max_iterations; ++sol.iterations) {
        double change = 0.0;
        for (std::size_t s = 0; s < mdp.num_states; ++s) {
            if (mdp.is_absorbing(s)) continue;
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t a = 0; a < mdp.num_actions; ++a) best = std::max(best, q_value(mdp, v, s, a));
            next[s] = best;
            change = std::max(change, std::abs(best - v[s]));
        }
        v.swap(next);
        if (change <= tolerance) break;
    }
    if (sol.iterations == max_iterations) throw SolverError("value iteration did not converge");

    std::vector<std::size_t> actions = greedy_actions(mdp, v, nullptr);
    for (int round = 0; round < 1000; ++round) {
        sol.policy = Policy::deterministic(actions, mdp.num_actions);
        v = exact_value(mdp, sol.policy);
        auto improved = greedy_actions(mdp, v, &actions);
        if (improved == actions) break;
        actions = std::move(improved);
    }
    sol.values = std::move(v);
    return sol;
}

TabularMdp make_figure1_mdp(double sigma, double gamma) {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("make_figure1_mdp: gamma must lie in (0, 1]");
    if (!(sigma >= 0.0 && sigma <= gamma)) throw std::invalid_argument("make_figure1_mdp: need 0 <= sigma <= gamma");
    TabularMdp mdp(3, 1, gamma);
    mdp.p(0, 0, 0) = gamma - sigma;
    mdp.p(0, 0, 1) = sigma;
    mdp.p(0, 0, 2) = 1.0 - gamma;
    mdp.p(1, 0, 1) = gamma;
    mdp.p(1, 0, 2) = 1.0 - gamma;
    mdp.rewards(0, 0) = 0.0;
    mdp.rewards(1, 0) = 1.0;
    return mdp;
}

}  // namespace offrl
