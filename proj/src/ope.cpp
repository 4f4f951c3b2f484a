#include "offrl/ope.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace offrl {

ModelFrame ModelFrame::of(const TabularMdp& mdp) {
    return {mdp.num_states, mdp.num_actions, mdp.gamma, mdp.rewards, mdp.initial_state, mdp.absorbing_state};
}

TransitionCounts counts_for(const ModelFrame& frame, std::span<const SamplePath> dataset) {
    return accumulate_counts(dataset, frame.num_states, frame.num_actions, frame.absorbing_state);
}

EstimatedModel estimate_model(const ModelFrame& frame, const TransitionCounts& counts, ProjectionMode mode) {
    return build_model(counts, frame.gamma, frame.rewards, frame.initial_state, mode);
}

double model_based_evaluate(const TransitionCounts& counts, const Policy& target, const ModelFrame& frame,
                            ProjectionMode mode) {
    const auto model = estimate_model(frame, counts, mode);
    return exact_value(model.mdp, target)[frame.initial_state];
}

double model_based_evaluate(std::span<const SamplePath> dataset, const Policy& target, const ModelFrame& frame,
                            ProjectionMode mode) {
    return model_based_evaluate(counts_for(frame, dataset), target, frame, mode);
}

OptimizedPolicy model_based_optimize(const TransitionCounts& counts, const ModelFrame& frame, ProjectionMode mode) {
    const auto model = estimate_model(frame, counts, mode);
    auto solution = solve_optimal(model.mdp);
    return {std::move(solution.policy), solution.values[frame.initial_state]};
}

OptimizedPolicy model_based_optimize(std::span<const SamplePath> dataset, const ModelFrame& frame,
                                     ProjectionMode mode) {
    return model_based_optimize(counts_for(frame, dataset), frame, mode);
}

double importance_weight(const SamplePath& path, const Policy& target, const Policy& behavior) {
    double weight = 1.0;
    for (const auto& step : path.steps) {
        const double pt = target(step.state, step.action);
        const double pb = behavior(step.state, step.action);
        if (pb == 0.0) {
            if (pt == 0.0) {
                weight = 0.0;
                continue;
            }
            std::ostringstream msg;
            msg << "importance weight undefined: behavior probability 0 at (" << step.state << "," << step.action
                << ") where the target probability is " << pt;
            throw UndefinedWeight(msg.str());
        }
        weight *= pt / pb;
    }
    return weight;
}

double importance_sampling_evaluate(std::span<const SamplePath> dataset, const Policy& target,
                                    const Policy& behavior) {
    if (dataset.empty()) throw std::invalid_argument("importance_sampling_evaluate: empty dataset");
    double sum = 0.0;
    for (const auto& path : dataset) {
        const double weight = importance_weight(path, target, behavior);
        if (weight == 0.0) continue;
        double ret = 0.0;
        for (const auto& step : path.steps) ret += step.reward;
        sum += weight * ret;
    }
    return sum / static_cast<double>(dataset.size());
}

Policy DeltaMdpPair::extend(const Policy& policy) const {
    const std::size_t A = optimistic.num_actions;
    SaTable table(optimistic.num_states, A, 1.0 / static_cast<double>(A));
    for (std::size_t s = 0; s < base_states; ++s) {
        for (std::size_t a = 0; a < A; ++a) table(s, a) = policy(s, a);
    }
    return Policy(std::move(table));
}

DeltaMdpPair construct_delta_mdps(const TabularMdp& a, const TabularMdp& b) {
    if (a.num_states != b.num_states || a.num_actions != b.num_actions || a.absorbing_state != b.absorbing_state) {
        throw InvalidModel("construct_delta_mdps: models have different shapes");
    }
    if (a.gamma != b.gamma) throw InvalidModel("construct_delta_mdps: models have different gamma");
    const std::size_t S = a.num_states;
    const std::size_t A = a.num_actions;
    const std::size_t sink = a.absorbing_state;
    const double gamma = a.gamma;

    DeltaMdpPair pair;
    pair.base_states = S;
    for (std::size_t s = 0; s < S; ++s) {
        if (s == sink) continue;
        for (std::size_t act = 0; act < A; ++act) {
            if (std::abs(a.p(s, act, sink) - b.p(s, act, sink)) > 1e-12) {
                std::ostringstream msg;
                msg << "construct_delta_mdps: leak mismatch at (" << s << "," << act << ")";
                throw InvalidModel(msg.str());
            }
            pair.delta_origin.emplace_back(s, act);
        }
    }

    const std::size_t total = S + pair.delta_origin.size();
    TabularMdp m(total, A, gamma);
    m.absorbing_state = sink;
    m.initial_state = a.initial_state;
    std::fill(m.transitions.begin(), m.transitions.end(), 0.0);
    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t act = 0; act < A; ++act) m.rewards(s, act) = a.rewards(s, act);
    }
    for (std::size_t act = 0; act < A; ++act) m.p(sink, act, sink) = 1.0;

    for (std::size_t i = 0; i < pair.delta_origin.size(); ++i) {
        const auto [s, act] = pair.delta_origin[i];
        const std::size_t delta = S + i;
        double disagreement = 0.0;
        for (std::size_t q = 0; q < S; ++q) {
            m.p(s, act, q) = std::min(a.p(s, act, q), b.p(s, act, q));
            disagreement += std::abs(a.p(s, act, q) - b.p(s, act, q));
        }
        m.p(s, act, delta) = disagreement / 2.0;
        for (std::size_t e = 0; e < A; ++e) {
            m.p(delta, e, delta) = gamma;
            m.p(delta, e, sink) = 1.0 - gamma;
        }
    }

    pair.optimistic = m;
    pair.pessimistic = std::move(m);
    for (std::size_t i = 0; i < pair.delta_origin.size(); ++i) {
        for (std::size_t e = 0; e < A; ++e) {
            pair.optimistic.rewards(S + i, e) = 1.0;
            pair.pessimistic.rewards(S + i, e) = 0.0;
        }
    }
    return pair;
}

std::vector<double> optimize_row(std::span<const double> row, std::span<const double> values, double radius,
                                 std::size_t absorbing, bool maximize) {
    std::vector<double> p(row.begin(), row.end());
    std::vector<std::size_t> order;
    order.reserve(p.size());
    double mass = 0.0;
    for (std::size_t q = 0; q < p.size(); ++q) {
        if (q == absorbing) continue;
        order.push_back(q);
        mass += p[q];
    }
    if (order.empty() || radius <= 0.0) return p;
    // Ascending in the direction we want to move away from.
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
        return maximize ? values[i] < values[j] : values[i] > values[j];
    });
    const std::size_t target = order.back();
    const double budget = std::min(radius / 2.0, mass - p[target]);
    if (budget <= 0.0) return p;
    p[target] += budget;
    double remaining = budget;
    for (std::size_t q : order) {
        if (q == target || remaining <= 0.0) continue;
        const double take = std::min(p[q], remaining);
        p[q] -= take;
        remaining -= take;
    }
    return p;
}

namespace {

constexpr double kTolerance = 1e-10;
constexpr std::size_t kMaxIterations = 1'000'000;

void check_radii(const TabularMdp& model, const SaTable& radii) {
    if (radii.num_states() != model.num_states || radii.num_actions() != model.num_actions) {
        throw std::invalid_argument("radii table shape does not match the model");
    }
    for (double r : radii.data()) {
        if (!(r >= 0.0)) throw std::invalid_argument("radii must be nonnegative");
    }
}

// Robust policy evaluation by value iteration from `start`. Returns the value
// at the initial state, shifted outward by the contraction error bound so the
// result stays on the conservative side of the fixed point.
double robust_evaluate(const TabularMdp& model, const Policy& policy, const SaTable& rewards, const SaTable& radii,
                       bool maximize, std::vector<double> v) {
    const double cap = 2.0 * model.gamma;
    std::vector<double> next(v.size(), 0.0);
    double change = 0.0;
    std::size_t it = 0;
    for (; it < kMaxIterations; ++it) {
        change = 0.0;
        for (std::size_t s = 0; s < model.num_states; ++s) {
            if (model.is_absorbing(s)) {
                next[s] = 0.0;
                continue;
            }
            double value = 0.0;
            for (std::size_t a = 0; a < model.num_actions; ++a) {
                const double pa = policy(s, a);
                if (pa == 0.0) continue;
                const auto row = optimize_row(model.row(s, a), v, std::min(radii(s, a), cap), model.absorbing_state,
                                              maximize);
                double expect = 0.0;
                for (std::size_t q = 0; q < model.num_states; ++q) expect += row[q] * v[q];
                value += pa * (rewards(s, a) + expect);
            }
            next[s] = value;
            change = std::max(change, std::abs(value - v[s]));
        }
        v.swap(next);
        if (change <= kTolerance) break;
    }
    if (it == kMaxIterations) throw SolverError("robust value iteration did not converge");
    const double slack = model.gamma / (1.0 - model.gamma) * change;
    const double at_start = v[model.initial_state];
    return maximize ? at_start + slack : std::max(0.0, at_start - slack);
}

}  // namespace

ValueInterval value_interval_from_radii(const TabularMdp& model, const Policy& target, const SaTable& radii,
                                        double confidence) {
    require_valid(model);
    require_valid(target, model);
    check_radii(model, radii);
    const auto nominal = exact_value(model, target);
    ValueInterval out;
    out.radii = radii;
    out.confidence = confidence;
    out.upper = robust_evaluate(model, target, model.rewards, radii, true, nominal);
    out.lower = robust_evaluate(model, target, model.rewards, radii, false, nominal);
    const double horizon = 1.0 / (1.0 - model.gamma);
    out.upper = std::min(out.upper, horizon);
    out.lower = std::min(out.lower, out.upper);
    return out;
}

SaTable robust_occupancy_upper(const TabularMdp& model, const Policy& target, const SaTable& radii) {
    require_valid(model);
    require_valid(target, model);
    check_radii(model, radii);
    const auto nominal = exact_occupancy(model, target);
    SaTable upper(model.num_states, model.num_actions);
    SaTable indicator(model.num_states, model.num_actions);
    for (std::size_t s = 0; s < model.num_states; ++s) {
        if (model.is_absorbing(s)) continue;
        for (std::size_t a = 0; a < model.num_actions; ++a) {
            if (target(s, a) == 0.0) continue;
            indicator(s, a) = 1.0;
            TabularMdp scored = model;
            scored.rewards = indicator;
            const auto start = exact_value(scored, target);
            const double x = robust_evaluate(model, target, indicator, radii, true, start);
            upper(s, a) = std::max(x, nominal(s, a));
            indicator(s, a) = 0.0;
        }
    }
    return upper;
}

}  // namespace offrl
