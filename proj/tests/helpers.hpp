#pragma once

#include <vector>

#include "offrl/mdp.hpp"

namespace offrl::testing {

/// {s0, absorbing} with one action; r(s0) = reward.
inline TabularMdp single_state_mdp(double gamma, double reward = 1.0, std::size_t actions = 1) {
    TabularMdp mdp(2, actions, gamma);
    for (std::size_t a = 0; a < actions; ++a) mdp.rewards(0, a) = reward;
    return mdp;
}

inline SamplePath make_path(std::vector<Step> steps) {
    SamplePath path;
    path.steps = std::move(steps);
    return path;
}

}  // namespace offrl::testing
