#include "offrl/generators.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace offrl {

std::vector<double> dirichlet(std::size_t dim, double concentration, RandomStream& rng) {
    if (!(concentration > 0.0)) throw std::invalid_argument("dirichlet: concentration must be positive");
    std::gamma_distribution<double> draw(concentration, 1.0);
    std::vector<double> w(dim);
    double total = 0.0;
    for (auto& v : w) {
        v = draw(rng.engine());
        total += v;
    }
    if (total <= 0.0) {
        // All draws underflowed (tiny concentration); fall back to a vertex.
        w.assign(dim, 0.0);
        w[rng.next_u64() % dim] = 1.0;
        return w;
    }
    for (auto& v : w) v /= total;
    return w;
}

TabularMdp random_mdp(const RandomMdpSpec& spec, RandomStream& rng) {
    if (spec.num_states < 2 || spec.num_actions < 1) throw std::invalid_argument("random_mdp: need S >= 2, A >= 1");
    if (!(spec.gamma > 0.0 && spec.gamma < 1.0)) throw std::invalid_argument("random_mdp: gamma must lie in (0, 1)");
    TabularMdp mdp(spec.num_states, spec.num_actions, spec.gamma);
    const std::size_t transient = spec.num_states - 1;
    for (std::size_t s = 0; s < transient; ++s) {
        for (std::size_t a = 0; a < spec.num_actions; ++a) {
            const auto w = dirichlet(transient, spec.concentration, rng);
            auto row = mdp.row(s, a);
            std::fill(row.begin(), row.end(), 0.0);
            for (std::size_t q = 0; q < transient; ++q) row[q] = spec.gamma * w[q];
            row[mdp.absorbing_state] = 1.0 - spec.gamma;
            mdp.rewards(s, a) = rng.uniform();
        }
    }
    return mdp;
}

Policy random_policy(std::size_t num_states, std::size_t num_actions, double concentration, RandomStream& rng) {
    SaTable table(num_states, num_actions);
    for (std::size_t s = 0; s < num_states; ++s) {
        const auto w = dirichlet(num_actions, concentration, rng);
        for (std::size_t a = 0; a < num_actions; ++a) table(s, a) = w[a];
    }
    return Policy(std::move(table));
}

}  // namespace offrl
