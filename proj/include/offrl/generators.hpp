#pragma once

#include <cstddef>

#include "offrl/mdp.hpp"
#include "offrl/rng.hpp"

namespace offrl {

/// Parameters of the random test-MDP family: non-absorbing sub-rows drawn from
/// a symmetric Dirichlet and scaled to mass gamma, rewards uniform on [0, 1].
struct RandomMdpSpec {
    std::size_t num_states = 4;   // includes the absorbing state
    std::size_t num_actions = 2;
    double gamma = 0.9;
    double concentration = 1.0;
};

TabularMdp random_mdp(const RandomMdpSpec& spec, RandomStream& rng);

/// Each row drawn from a symmetric Dirichlet(concentration).
Policy random_policy(std::size_t num_states, std::size_t num_actions, double concentration, RandomStream& rng);

/// Samples from a symmetric Dirichlet of the given dimension.
std::vector<double> dirichlet(std::size_t dim, double concentration, RandomStream& rng);

}  // namespace offrl
