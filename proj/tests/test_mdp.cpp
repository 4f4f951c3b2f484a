#include <doctest.h>

#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "offrl/generators.hpp"
#include "offrl/mdp.hpp"
#include "offrl/rng.hpp"

using namespace offrl;
using offrl::testing::single_state_mdp;

TEST_CASE("validate_mdp accepts the single-state chain") {
    const auto mdp = single_state_mdp(0.9);
    CHECK(validate_mdp(mdp).empty());
    CHECK(mdp.p(0, 0, 0) == doctest::Approx(0.9));
    CHECK(mdp.p(0, 0, 1) == doctest::Approx(0.1));
}

TEST_CASE("validate_mdp reports a wrong leak and a non-stochastic row") {
    auto mdp = single_state_mdp(0.9);
    mdp.p(0, 0, 0) = 0.8;
    mdp.p(0, 0, 1) = 0.2;
    auto problems = validate_mdp(mdp);
    REQUIRE(!problems.empty());
    bool mentions_leak = false;
    for (const auto& p : problems) mentions_leak = mentions_leak || p.find("leak") != std::string::npos;
    CHECK(mentions_leak);

    mdp = single_state_mdp(0.9);
    mdp.p(0, 0, 0) = 0.89;
    problems = validate_mdp(mdp);
    REQUIRE(!problems.empty());
    CHECK_THROWS_AS(require_valid(mdp), InvalidModel);
}

TEST_CASE("validate_mdp rejects rewards outside [0, 1] and a rewarding absorbing state") {
    auto mdp = single_state_mdp(0.9, 1.5);
    CHECK(!validate_mdp(mdp).empty());
    mdp = single_state_mdp(0.9);
    mdp.rewards(1, 0) = 0.5;
    CHECK(!validate_mdp(mdp).empty());
}

TEST_CASE("validate_policy checks shapes and rows") {
    const auto mdp = single_state_mdp(0.9, 1.0, 2);
    CHECK(validate_policy(Policy::uniform(2, 2), mdp).empty());
    CHECK(!validate_policy(Policy::uniform(3, 2), mdp).empty());
    SaTable probs(2, 2, 0.5);
    probs(0, 0) = 0.7;
    CHECK(!validate_policy(Policy(probs), mdp).empty());
    probs(0, 0) = 1.5;
    probs(0, 1) = -0.5;
    CHECK(!validate_policy(Policy(probs), mdp).empty());
}

TEST_CASE("exact solvers on the single-state chain") {
    const auto mdp = single_state_mdp(0.9);
    const auto policy = Policy::uniform(2, 1);
    CHECK(exact_value(mdp, policy)[0] == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(exact_value(mdp, policy)[1] == 0.0);
    CHECK(exact_occupancy(mdp, policy)(0, 0) == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(first_visit_prob(mdp, policy, 0, 0) == doctest::Approx(1.0));
    CHECK(return_prob(mdp, policy, 0, 0) == doctest::Approx(0.9));
}

TEST_CASE("return probability is at most gamma") {
    const auto mdp = single_state_mdp(0.01);
    CHECK(return_prob(mdp, Policy::uniform(2, 1), 0, 0) <= 0.01 + 1e-15);
}

TEST_CASE("total occupancy is 1 / (1 - gamma) for any two-action policy") {
    const auto mdp = single_state_mdp(0.9, 0.3, 2);
    SaTable probs(2, 2, 0.5);
    probs(0, 0) = 0.2;
    probs(0, 1) = 0.8;
    const auto x = exact_occupancy(mdp, Policy(probs));
    CHECK(x(0, 0) + x(0, 1) == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(x(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("an action never chosen has first-visit probability zero") {
    const auto mdp = single_state_mdp(0.9, 0.5, 2);
    const std::vector<std::size_t> actions{0, 0};
    const auto policy = Policy::deterministic(actions, 2);
    CHECK(first_visit_prob(mdp, policy, 0, 1) == 0.0);
    CHECK(exact_occupancy(mdp, policy)(0, 1) == 0.0);
}

TEST_CASE("zero rewards give zero values") {
    const auto mdp = single_state_mdp(0.9, 0.0);
    CHECK(exact_value(mdp, Policy::uniform(2, 1))[0] == 0.0);
}

TEST_CASE("figure-one chain rows and reachability") {
    const auto mdp = make_figure1_mdp(0.3, 0.9);
    CHECK(validate_mdp(mdp).empty());
    CHECK(mdp.p(0, 0, 0) == doctest::Approx(0.6));
    CHECK(mdp.p(0, 0, 1) == doctest::Approx(0.3));
    CHECK(mdp.p(0, 0, 2) == doctest::Approx(0.1));
    const auto policy = Policy::uniform(3, 1);
    CHECK(first_visit_prob(mdp, policy, 1, 0) == doctest::Approx(0.3 / 0.4).epsilon(1e-12));

    const auto unreachable = make_figure1_mdp(0.0, 0.9);
    CHECK(first_visit_prob(unreachable, policy, 1, 0) == 0.0);
    const auto no_stay = make_figure1_mdp(0.9, 0.9);
    CHECK(no_stay.p(0, 0, 0) == 0.0);
    CHECK_THROWS(make_figure1_mdp(0.95, 0.9));
}

TEST_CASE("value equals occupancy-weighted reward on the figure-one chain") {
    const auto mdp = make_figure1_mdp(0.3, 0.9);
    const auto policy = Policy::uniform(3, 1);
    const auto x = exact_occupancy(mdp, policy);
    CHECK(exact_value(mdp, policy)[0] == doctest::Approx(x(1, 0)).epsilon(1e-12));
    // rho = 0.75 and the s1 self-loop gives x = 0.75 / (1 - 0.9).
    CHECK(x(1, 0) == doctest::Approx(7.5).epsilon(1e-12));
}

TEST_CASE("occupancy identity and value linearity on random models") {
    RandomStream rng(StreamId{7, 1, 0});
    for (int trial = 0; trial < 20; ++trial) {
        const auto mdp = random_mdp({6, 3, 0.9, 1.0}, rng);
        REQUIRE(validate_mdp(mdp).empty());
        const auto policy = random_policy(6, 3, 1.0, rng);
        const auto stats = occupancy_stats(mdp, policy);
        const auto v = exact_value(mdp, policy);
        double weighted = 0.0, total = 0.0;
        for (std::size_t s = 0; s < 6; ++s) {
            CHECK(v[s] >= -1e-12);
            CHECK(v[s] <= 10.0 + 1e-9);
            for (std::size_t a = 0; a < 3; ++a) {
                weighted += stats.x(s, a) * mdp.rewards(s, a);
                total += stats.x(s, a);
                if (mdp.is_absorbing(s)) continue;
                CHECK(stats.lambda(s, a) < 1.0);
                if (stats.rho(s, a) > 0.0) {
                    CHECK(std::abs(stats.x(s, a) - stats.rho(s, a) / (1.0 - stats.lambda(s, a))) <= 1e-9);
                }
            }
        }
        CHECK(std::abs(v[mdp.initial_state] - weighted) <= 1e-9);
        CHECK(total <= 10.0 + 1e-9);
    }
}

TEST_CASE("sample paths end at the absorbing state and have geometric length") {
    const auto mdp = single_state_mdp(0.9);
    const auto policy = Policy::uniform(2, 1);
    RandomStream rng(StreamId{11, 0, 0});
    const std::size_t m = 100000;
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const auto path = sample_path(mdp, policy, rng);
        REQUIRE(path.reached_absorbing);
        REQUIRE(!path.steps.empty());
        for (const auto& st : path.steps) REQUIRE(st.state != mdp.absorbing_state);
        total += static_cast<double>(path.length());
    }
    const double mean = total / static_cast<double>(m);
    CHECK(std::abs(mean - 10.0) <= 0.2);
    CHECK(std::abs(mean - 10.0) <= 4.0 / std::sqrt(static_cast<double>(m)) * 9.0);
}

TEST_CASE("sampling is reproducible from the stream id") {
    const auto mdp = make_figure1_mdp(0.3, 0.9);
    const auto policy = Policy::uniform(3, 1);
    RandomStream a(StreamId{3, 4, 5});
    RandomStream b(StreamId{3, 4, 5});
    RandomStream c(StreamId{3, 4, 6});
    const auto da = sample_dataset(mdp, policy, 50, a);
    CHECK(da == sample_dataset(mdp, policy, 50, b));
    CHECK(da != sample_dataset(mdp, policy, 50, c));
}

TEST_CASE("rewards are realized at their means") {
    const auto mdp = make_figure1_mdp(0.3, 0.9);
    RandomStream rng(StreamId{1, 2, 3});
    for (int i = 0; i < 100; ++i) {
        for (const auto& st : sample_path(mdp, Policy::uniform(3, 1), rng).steps) {
            CHECK(st.reward == mdp.rewards(st.state, st.action));
        }
    }
}

TEST_CASE("empirical reach frequency matches first_visit_prob on the figure-one chain") {
    const auto mdp = make_figure1_mdp(0.3, 0.9);
    const auto policy = Policy::uniform(3, 1);
    const double rho = first_visit_prob(mdp, policy, 1, 0);
    RandomStream rng(StreamId{5, 0, 0});
    const std::size_t m = 200000;
    std::size_t reached = 0;
    for (std::size_t i = 0; i < m; ++i) {
        const auto path = sample_path(mdp, policy, rng);
        for (const auto& st : path.steps) {
            if (st.state == 1) {
                ++reached;
                break;
            }
        }
    }
    const double freq = static_cast<double>(reached) / static_cast<double>(m);
    const double se = std::sqrt(rho * (1.0 - rho) / static_cast<double>(m));
    CHECK(std::abs(freq - rho) <= 4.0 * se);
}

TEST_CASE("solve_optimal dominates every deterministic policy") {
    RandomStream rng(StreamId{9, 0, 0});
    const auto mdp = random_mdp({4, 2, 0.9, 1.0}, rng);
    const auto opt = solve_optimal(mdp);
    for (std::size_t code = 0; code < 8; ++code) {
        const std::vector<std::size_t> actions{code & 1u, (code >> 1) & 1u, (code >> 2) & 1u, 0};
        const auto v = exact_value(mdp, Policy::deterministic(actions, 2));
        for (std::size_t s = 0; s < 4; ++s) CHECK(v[s] <= opt.values[s] + 1e-9);
    }
    const auto v_greedy = exact_value(mdp, opt.policy);
    for (std::size_t s = 0; s < 4; ++s) CHECK(v_greedy[s] == doctest::Approx(opt.values[s]).epsilon(1e-9));
}

TEST_CASE("random_mdp respects the spec and the Dirichlet sums to one") {
    RandomStream rng(StreamId{2, 0, 0});
    const auto mdp = random_mdp({5, 3, 0.95, 0.5}, rng);
    CHECK(mdp.num_states == 5);
    CHECK(mdp.num_actions == 3);
    CHECK(mdp.absorbing_state == 4);
    CHECK(validate_mdp(mdp).empty());
    const auto d = dirichlet(7, 2.0, rng);
    CHECK(std::accumulate(d.begin(), d.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("stream derivation separates experiments and trials") {
    const StreamId a{1, 2, 3};
    const StreamId b{1, 2, 4};
    const StreamId c{1, 3, 3};
    CHECK(a.derive_seed() != b.derive_seed());
    CHECK(a.derive_seed() != c.derive_seed());
    CHECK(a.derive_seed() == StreamId{1, 2, 3}.derive_seed());
}

TEST_CASE("geometric_trials has mean 1 / p") {
    RandomStream rng(StreamId{4, 4, 4});
    double total = 0.0;
    const int m = 200000;
    for (int i = 0; i < m; ++i) total += static_cast<double>(rng.geometric_trials(0.25));
    // variance (1 - p) / p^2 = 12
    CHECK(std::abs(total / m - 4.0) <= 4.0 * std::sqrt(12.0 / m));
    CHECK(rng.geometric_trials(1.0) == 1);
}
