#include "offrl/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace offrl {

TransitionCounts::TransitionCounts(std::size_t num_states, std::size_t num_actions, std::size_t absorbing_state)
    : num_states_(num_states),
      num_actions_(num_actions),
      absorbing_(absorbing_state),
      n_(num_states * num_actions * num_states, 0),
      total_(num_states * num_actions, 0) {
    if (absorbing_state >= num_states) throw std::invalid_argument("TransitionCounts: absorbing state out of range");
}

void TransitionCounts::add(std::size_t s, std::size_t a, std::size_t q, std::uint64_t count) {
    if (s >= num_states_ || a >= num_actions_ || q >= num_states_) {
        throw std::out_of_range("TransitionCounts::add: index out of range");
    }
    if (s == absorbing_) throw std::invalid_argument("TransitionCounts::add: transition from the absorbing state");
    n_[index(s, a, q)] += count;
    total_[s * num_actions_ + a] += count;
}

void TransitionCounts::add_path(const SamplePath& path) {
    const auto& steps = path.steps;
    for (std::size_t t = 0; t < steps.size(); ++t) {
        const std::size_t next = t + 1 < steps.size() ? steps[t + 1].state : absorbing_;
        add(steps[t].state, steps[t].action, next);
    }
}

TransitionCounts& TransitionCounts::operator+=(const TransitionCounts& other) {
    if (other.num_states_ != num_states_ || other.num_actions_ != num_actions_ || other.absorbing_ != absorbing_) {
        throw std::invalid_argument("TransitionCounts: shape mismatch in merge");
    }
    for (std::size_t i = 0; i < n_.size(); ++i) n_[i] += other.n_[i];
    for (std::size_t i = 0; i < total_.size(); ++i) total_[i] += other.total_[i];
    return *this;
}

TransitionCounts accumulate_counts(std::span<const SamplePath> dataset, std::size_t num_states,
                                   std::size_t num_actions, std::size_t absorbing_state) {
    TransitionCounts counts(num_states, num_actions, absorbing_state);
    for (const auto& path : dataset) counts.add_path(path);
    return counts;
}

std::string_view to_string(ProjectionMode mode) noexcept {
    return mode == ProjectionMode::renormalized ? "renormalized" : "l2_projected";
}

ProjectionMode projection_mode_from_string(std::string_view name) {
    if (name == "renormalized") return ProjectionMode::renormalized;
    if (name == "l2_projected" || name == "l2") return ProjectionMode::l2_projected;
    throw std::invalid_argument("unknown projection mode: " + std::string(name));
}

std::vector<double> project_to_scaled_simplex(std::span<const double> values, double mass) {
    std::vector<double> out(values.begin(), values.end());
    if (out.empty()) return out;
    std::vector<bool> active(out.size(), true);
    for (std::size_t round = 0; round <= out.size(); ++round) {
        double active_sum = 0.0;
        std::size_t active_count = 0;
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (active[i]) {
                active_sum += values[i];
                ++active_count;
            }
        }
        const double shift = (mass - active_sum) / static_cast<double>(active_count);
        bool clipped = false;
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (!active[i]) {
                out[i] = 0.0;
                continue;
            }
            out[i] = values[i] + shift;
            if (out[i] < 0.0) {
                active[i] = false;
                clipped = true;
            }
        }
        if (!clipped) return out;
    }
    throw std::logic_error("project_to_scaled_simplex: clipping did not terminate");
}

EstimatedModel build_model(const TransitionCounts& counts, double gamma, const SaTable& rewards,
                           std::size_t initial_state, ProjectionMode mode) {
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("build_model: gamma must lie in (0, 1)");
    const std::size_t S = counts.num_states();
    const std::size_t A = counts.num_actions();
    if (rewards.num_states() != S || rewards.num_actions() != A) {
        throw std::invalid_argument("build_model: reward table shape does not match the counts");
    }
    EstimatedModel model{TabularMdp(S, A, gamma), counts, mode};
    TabularMdp& mdp = model.mdp;
    mdp.absorbing_state = counts.absorbing_state();
    mdp.initial_state = initial_state;
    mdp.rewards = rewards;
    const std::size_t sink = mdp.absorbing_state;

    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t a = 0; a < A; ++a) {
            auto row = mdp.row(s, a);
            std::fill(row.begin(), row.end(), 0.0);
            if (s == sink) {
                row[s] = 1.0;
                continue;
            }
            row[sink] = 1.0 - gamma;
            const std::uint64_t transient = counts.transient_total(s, a);
            if (transient == 0) {
                row[s] = gamma;
                continue;
            }
            if (mode == ProjectionMode::renormalized) {
                for (std::size_t q = 0; q < S; ++q) {
                    if (q != sink) row[q] = gamma * static_cast<double>(counts.n(s, a, q)) / static_cast<double>(transient);
                }
            } else {
                const double total = static_cast<double>(counts.total(s, a));
                std::vector<double> freq;
                freq.reserve(S - 1);
                for (std::size_t q = 0; q < S; ++q) {
                    if (q != sink) freq.push_back(static_cast<double>(counts.n(s, a, q)) / total);
                }
                const auto projected = project_to_scaled_simplex(freq, gamma);
                std::size_t k = 0;
                for (std::size_t q = 0; q < S; ++q) {
                    if (q != sink) row[q] = projected[k++];
                }
            }
        }
    }
    return model;
}

namespace {

std::uint64_t checked_total(std::span<const std::uint64_t> counts) {
    const std::uint64_t total = std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
    if (total == 0) throw std::invalid_argument("categorical estimate needs at least one sample");
    return total;
}

}  // namespace

CategoricalEstimate sample_mean_categorical(std::span<const std::uint64_t> counts) {
    const double total = static_cast<double>(checked_total(counts));
    CategoricalEstimate est;
    est.estimator = CategoricalEstimator::sample_mean;
    est.probs.reserve(counts.size());
    for (auto c : counts) est.probs.push_back(static_cast<double>(c) / total);
    return est;
}

CategoricalEstimate df_categorical(std::span<const std::uint64_t> counts) {
    const double total = static_cast<double>(checked_total(counts));
    const double boost = std::sqrt(total);
    // max_element returns the first maximum: ties go to the lowest index.
    const auto d = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    CategoricalEstimate est;
    est.estimator = CategoricalEstimator::deterministic_favored;
    est.favored = d;
    est.probs.reserve(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const double numer = static_cast<double>(counts[i]) + (i == d ? boost : 0.0);
        est.probs.push_back(numer / (total + boost));
    }
    return est;
}

double expected_sigma_hat_single_path(double sigma) {
    if (!(sigma > 0.0 && sigma < 1.0)) throw std::invalid_argument("expected_sigma_hat_single_path: sigma must lie in (0, 1)");
    const double stay = 1.0 - sigma;
    double sum = 0.0;
    double weight = sigma;  // (1 - sigma)^(k-1) * sigma
    for (std::uint64_t k = 1;; ++k) {
        sum += weight / static_cast<double>(k);
        weight *= stay;
        // Remaining terms are bounded by sum_{j>k} (1-sigma)^(j-1) sigma / (k+1) = (1-sigma)^k / (k+1).
        if (weight / sigma / static_cast<double>(k + 1) < 1e-12) break;
    }
    return sum;
}

double expected_sigma_hat_closed_form(double sigma) {
    if (!(sigma > 0.0 && sigma < 1.0)) throw std::invalid_argument("expected_sigma_hat_closed_form: sigma must lie in (0, 1)");
    return -sigma * std::log(sigma) / (1.0 - sigma);
}

}  // namespace offrl
