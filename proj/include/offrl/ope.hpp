#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "offrl/estimation.hpp"
#include "offrl/mdp.hpp"

namespace offrl {

/// What the learner knows without data: sizes, discount, mean rewards and the
/// initial and absorbing states. Transitions are unknown.
struct ModelFrame {
    std::size_t num_states = 0;
    std::size_t num_actions = 0;
    double gamma = 0.0;
    SaTable rewards;
    std::size_t initial_state = 0;
    std::size_t absorbing_state = 0;

    static ModelFrame of(const TabularMdp& mdp);
    TransitionCounts empty_counts() const { return {num_states, num_actions, absorbing_state}; }
};

TransitionCounts counts_for(const ModelFrame& frame, std::span<const SamplePath> dataset);
EstimatedModel estimate_model(const ModelFrame& frame, const TransitionCounts& counts,
                              ProjectionMode mode = ProjectionMode::renormalized);

/// Value of the target policy at the initial state of the estimated model.
double model_based_evaluate(std::span<const SamplePath> dataset, const Policy& target, const ModelFrame& frame,
                            ProjectionMode mode = ProjectionMode::renormalized);
double model_based_evaluate(const TransitionCounts& counts, const Policy& target, const ModelFrame& frame,
                            ProjectionMode mode = ProjectionMode::renormalized);

struct OptimizedPolicy {
    Policy policy;            // greedy deterministic policy on the estimated model
    double estimated_value;   // its value at the initial state of the estimated model
};

/// Optimal policy of the estimated model (no pessimism penalty).
OptimizedPolicy model_based_optimize(std::span<const SamplePath> dataset, const ModelFrame& frame,
                                     ProjectionMode mode = ProjectionMode::renormalized);
OptimizedPolicy model_based_optimize(const TransitionCounts& counts, const ModelFrame& frame,
                                     ProjectionMode mode = ProjectionMode::renormalized);

/// Raised when a realized action has zero behavior probability but positive
/// target probability.
class UndefinedWeight : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Product of target/behavior action-probability ratios along the path.
double importance_weight(const SamplePath& path, const Policy& target, const Policy& behavior);

/// Ordinary importance sampling: mean over paths of weight x path return.
double importance_sampling_evaluate(std::span<const SamplePath> dataset, const Policy& target,
                                    const Policy& behavior);

/// Optimistic and pessimistic models sharing the kernel min(P_a, P_b), with
/// the disagreement mass of each pair routed to its own sink state Delta(s,a).
/// Delta states self-loop with probability gamma and leak 1 - gamma; they pay
/// reward 1 in the optimistic model and 0 in the pessimistic one.
struct DeltaMdpPair {
    TabularMdp optimistic;
    TabularMdp pessimistic;
    /// delta_origin[i] is the pair whose disagreement flows into state
    /// base_states + i.
    std::vector<std::pair<std::size_t, std::size_t>> delta_origin;
    std::size_t base_states = 0;

    /// Extends a policy of the base model to the augmented state space.
    Policy extend(const Policy& policy) const;
};

/// Requires equal shapes, gamma, absorbing state and leak. Rewards come from `a`.
DeltaMdpPair construct_delta_mdps(const TabularMdp& a, const TabularMdp& b);

struct ValueInterval {
    double lower = 0.0;
    double upper = 0.0;
    SaTable radii;
    double confidence = 0.0;  // 1 - delta of the radii, 0 when unspecified
};

/// Robust evaluation over the rectangular set of rows within L1 distance
/// radii(s,a) of the model rows. The leak to the absorbing state is held
/// fixed; radii above 2 gamma are clipped.
ValueInterval value_interval_from_radii(const TabularMdp& model, const Policy& target, const SaTable& radii,
                                        double confidence = 0.0);

/// Largest occupancy of each pair over the same uncertainty set. Absorbing
/// pairs are zero.
SaTable robust_occupancy_upper(const TabularMdp& model, const Policy& target, const SaTable& radii);

/// Inner step of robust value iteration: the best (maximize) or worst
/// expectation of `values` over rows within L1 distance `radius` of `row`,
/// keeping row[absorbing] fixed. Returns the optimizing row.
std::vector<double> optimize_row(std::span<const double> row, std::span<const double> values, double radius,
                                 std::size_t absorbing, bool maximize);

}  // namespace offrl
