#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "offrl/mdp.hpp"

namespace offrl {

/// Transition counts n(s, a, q) gathered from sample paths. Only
/// non-absorbing origin states are ever counted.
class TransitionCounts {
public:
    TransitionCounts() = default;
    TransitionCounts(std::size_t num_states, std::size_t num_actions, std::size_t absorbing_state);

    std::size_t num_states() const noexcept { return num_states_; }
    std::size_t num_actions() const noexcept { return num_actions_; }
    std::size_t absorbing_state() const noexcept { return absorbing_; }

    std::uint64_t n(std::size_t s, std::size_t a, std::size_t q) const { return n_[index(s, a, q)]; }
    /// Sum over all successors, absorbing included.
    std::uint64_t total(std::size_t s, std::size_t a) const { return total_[s * num_actions_ + a]; }
    /// Sum over non-absorbing successors.
    std::uint64_t transient_total(std::size_t s, std::size_t a) const {
        return total(s, a) - n(s, a, absorbing_);
    }

    void add(std::size_t s, std::size_t a, std::size_t q, std::uint64_t count = 1);
    void add_path(const SamplePath& path);

    TransitionCounts& operator+=(const TransitionCounts& other);
    bool operator==(const TransitionCounts&) const = default;

private:
    std::size_t index(std::size_t s, std::size_t a, std::size_t q) const {
        return (s * num_actions_ + a) * num_states_ + q;
    }

    std::size_t num_states_ = 0;
    std::size_t num_actions_ = 0;
    std::size_t absorbing_ = 0;
    std::vector<std::uint64_t> n_;
    std::vector<std::uint64_t> total_;
};

TransitionCounts accumulate_counts(std::span<const SamplePath> dataset, std::size_t num_states,
                                   std::size_t num_actions, std::size_t absorbing_state);

enum class ProjectionMode {
    /// P(s,a,q) = gamma * n(s,a,q) / sum_{q' != absorbing} n(s,a,q').
    renormalized,
    /// Euclidean projection of the empirical row onto rows whose leak is 1 - gamma.
    l2_projected,
};

std::string_view to_string(ProjectionMode mode) noexcept;
ProjectionMode projection_mode_from_string(std::string_view name);

struct EstimatedModel {
    TabularMdp mdp;
    TransitionCounts counts;
    ProjectionMode mode = ProjectionMode::renormalized;
};

/// Builds the estimated model from counts with known mean rewards. Pairs with
/// no transition into a non-absorbing state get P(s,a,s) = gamma.
EstimatedModel build_model(const TransitionCounts& counts, double gamma, const SaTable& rewards,
                           std::size_t initial_state = 0, ProjectionMode mode = ProjectionMode::renormalized);

/// Euclidean projection of `values` onto {p >= 0, sum p = mass}, by repeated
/// uniform shift and clipping.
std::vector<double> project_to_scaled_simplex(std::span<const double> values, double mass);

enum class CategoricalEstimator { sample_mean, deterministic_favored };

struct CategoricalEstimate {
    std::vector<double> probs;
    CategoricalEstimator estimator = CategoricalEstimator::sample_mean;
    std::optional<std::size_t> favored;  // argmax index used by the DF estimator
};

/// p_i = N_i / N. Throws std::invalid_argument when N = 0.
CategoricalEstimate sample_mean_categorical(std::span<const std::uint64_t> counts);

/// p_i = (N_i + sqrt(N) [i = d]) / (N + sqrt(N)), d = argmax N_i with ties to
/// the lowest index. Throws std::invalid_argument when N = 0.
CategoricalEstimate df_categorical(std::span<const std::uint64_t> counts);

/// E[sigma_hat] for the single-path sample-mean estimate of the s0 -> s1
/// probability in the three-state chain with gamma = 1: the series
/// sum_k (1-sigma)^(k-1) sigma / k, summed until the tail is below 1e-12.
double expected_sigma_hat_single_path(double sigma);

/// Closed form -sigma ln(sigma) / (1 - sigma) of the same series.
double expected_sigma_hat_closed_form(double sigma);

}  // namespace offrl
