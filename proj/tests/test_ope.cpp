#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "offrl/generators.hpp"
#include "offrl/ope.hpp"

using namespace offrl;
using offrl::testing::make_path;
using offrl::testing::single_state_mdp;

TEST_CASE("model-based evaluation on an empty dataset uses the self-loop model") {
    const auto mdp = single_state_mdp(0.9);
    const Dataset empty;
    CHECK(model_based_evaluate(empty, Policy::uniform(2, 1), ModelFrame::of(mdp)) ==
          doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("model-based evaluation recovers the value when frequencies are exact") {
    // Three paths whose s0 transitions are 6:3:1 match the row [0.6, 0.3, 0.1].
    const auto mdp = make_figure1_mdp(0.3, 0.9);
    const auto frame = ModelFrame::of(mdp);
    auto counts = frame.empty_counts();
    counts.add(0, 0, 0, 6);
    counts.add(0, 0, 1, 3);
    counts.add(0, 0, 2, 1);
    counts.add(1, 0, 1, 9);
    counts.add(1, 0, 2, 1);
    const auto pi = Policy::uniform(3, 1);
    CHECK(model_based_evaluate(counts, pi, frame) ==
          doctest::Approx(exact_value(mdp, pi)[0]).epsilon(1e-9));
}

TEST_CASE("model-based evaluation is accurate on the figure-one chain") {
    const auto mdp = make_figure1_mdp(0.3, 0.9);
    const auto frame = ModelFrame::of(mdp);
    const auto pi = Policy::uniform(3, 1);
    const double truth = exact_value(mdp, pi)[0];
    int close = 0;
    for (std::uint64_t rep = 0; rep < 40; ++rep) {
        RandomStream rng(StreamId{21, 0, rep});
        const auto data = sample_dataset(mdp, pi, 10000, rng);
        if (std::abs(model_based_evaluate(data, pi, frame) - truth) <= 0.05) ++close;
    }
    CHECK(close >= 38);
}

TEST_CASE("importance sampling with identical policies averages returns") {
    const auto mdp = make_figure1_mdp(0.3, 0.9);
    const auto pi = Policy::uniform(3, 1);
    const Dataset data{make_path({{0, 0, 0.0}, {1, 0, 1.0}, {1, 0, 1.0}}), make_path({{0, 0, 0.0}})};
    CHECK(importance_weight(data[0], pi, pi) == 1.0);
    CHECK(importance_sampling_evaluate(data, pi, pi) == doctest::Approx(1.0));
    const Dataset zero{make_path({{0, 0, 0.0}})};
    CHECK(importance_sampling_evaluate(zero, pi, pi) == 0.0);
    (void)mdp;
}

TEST_CASE("importance weights multiply action ratios and reject support violations") {
    SaTable tp(2, 2, 0.5), bp(2, 2, 0.5);
    tp(0, 0) = 1.0;
    tp(0, 1) = 0.0;
    bp(0, 0) = 0.25;
    bp(0, 1) = 0.75;
    const Policy target(tp), behavior(bp);
    const auto path = make_path({{0, 0, 0.0}, {0, 0, 0.0}});
    CHECK(importance_weight(path, target, behavior) == doctest::Approx(16.0));
    CHECK(importance_weight(make_path({{0, 1, 0.0}}), target, behavior) == 0.0);

    SaTable zb(2, 2, 0.5);
    zb(0, 0) = 0.0;
    zb(0, 1) = 1.0;
    CHECK_THROWS_AS(importance_weight(make_path({{0, 0, 0.0}}), target, Policy(zb)), UndefinedWeight);
}

TEST_CASE("importance sampling is unbiased on a two-action chain") {
    TabularMdp mdp(3, 2, 0.9);
    mdp.p(0, 0, 0) = 0.8;
    mdp.p(0, 0, 1) = 0.1;
    mdp.p(0, 1, 0) = 0.4;
    mdp.p(0, 1, 1) = 0.5;
    mdp.rewards(0, 1) = 0.5;
    mdp.rewards(1, 0) = 1.0;
    mdp.rewards(1, 1) = 1.0;
    REQUIRE(validate_mdp(mdp).empty());
    const auto behavior = Policy::uniform(3, 2);
    SaTable tp(3, 2, 0.5);
    tp(0, 0) = 0.0;
    tp(0, 1) = 1.0;
    const Policy target(tp);
    const double truth = exact_value(mdp, target)[0];
    const int reps = 2000;
    double sum = 0.0, sq = 0.0;
    for (int r = 0; r < reps; ++r) {
        RandomStream rng(StreamId{31, 0, static_cast<std::uint64_t>(r)});
        const double est = importance_sampling_evaluate(sample_dataset(mdp, behavior, 100, rng), target, behavior);
        sum += est;
        sq += est * est;
    }
    const double mean = sum / reps;
    const double sd = std::sqrt((sq - reps * mean * mean) / (reps - 1));
    CHECK(std::abs(mean - truth) <= 4.0 * sd / std::sqrt(static_cast<double>(reps)));
}

TEST_CASE("optimization picks a dominating action") {
    auto mdp = single_state_mdp(0.9, 0.2, 2);
    mdp.rewards(0, 1) = 0.8;
    const auto frame = ModelFrame::of(mdp);
    const Dataset empty;
    const auto result = model_based_optimize(empty, frame);
    CHECK(result.policy(0, 1) == 1.0);
    CHECK(result.estimated_value == doctest::Approx(8.0).epsilon(1e-9));
}

TEST_CASE("optimization is exact on the estimated model") {
    RandomStream rng(StreamId{41, 0, 0});
    for (int trial = 0; trial < 5; ++trial) {
        const auto mdp = random_mdp({4, 2, 0.9, 1.0}, rng);
        const auto frame = ModelFrame::of(mdp);
        const auto data = sample_dataset(mdp, Policy::uniform(4, 2), 200, rng);
        const auto result = model_based_optimize(data, frame);
        const auto model = estimate_model(frame, counts_for(frame, data));
        const double v = exact_value(model.mdp, result.policy)[0];
        CHECK(v == doctest::Approx(result.estimated_value).epsilon(1e-9));
        for (std::size_t code = 0; code < 8; ++code) {
            const std::vector<std::size_t> actions{code & 1u, (code >> 1) & 1u, (code >> 2) & 1u, 0};
            CHECK(exact_value(model.mdp, Policy::deterministic(actions, 2))[0] <= v + 1e-9);
        }
    }
}

TEST_CASE("delta construction of identical models reproduces the value") {
    RandomStream rng(StreamId{51, 0, 0});
    const auto mdp = random_mdp({4, 2, 0.9, 1.0}, rng);
    const auto pi = random_policy(4, 2, 1.0, rng);
    const auto pair = construct_delta_mdps(mdp, mdp);
    const auto ext = pair.extend(pi);
    const double v = exact_value(mdp, pi)[0];
    CHECK(exact_value(pair.optimistic, ext)[0] == doctest::Approx(v).epsilon(1e-12));
    CHECK(exact_value(pair.pessimistic, ext)[0] == doctest::Approx(v).epsilon(1e-12));
    CHECK(validate_mdp(pair.optimistic).empty());
    CHECK(validate_mdp(pair.pessimistic).empty());
}

TEST_CASE("delta models sandwich both kernels") {
    RandomStream rng(StreamId{52, 0, 0});
    for (int trial = 0; trial < 20; ++trial) {
        const auto a = random_mdp({5, 2, 0.9, 1.0}, rng);
        auto b = random_mdp({5, 2, 0.9, 1.0}, rng);
        b.rewards = a.rewards;
        const auto pi = random_policy(5, 2, 1.0, rng);
        const auto pair = construct_delta_mdps(a, b);
        const auto ext = pair.extend(pi);
        const double va = exact_value(a, pi)[0], vb = exact_value(b, pi)[0];
        CHECK(exact_value(pair.pessimistic, ext)[0] <= std::min(va, vb) + 1e-9);
        CHECK(exact_value(pair.optimistic, ext)[0] >= std::max(va, vb) - 1e-9);
    }
}

TEST_CASE("delta construction rejects a leak mismatch") {
    const auto a = single_state_mdp(0.9);
    const auto b = single_state_mdp(0.8);
    CHECK_THROWS(construct_delta_mdps(a, b));
}

TEST_CASE("zero radii give a degenerate interval and occupancy") {
    RandomStream rng(StreamId{61, 0, 0});
    const auto mdp = random_mdp({4, 2, 0.9, 1.0}, rng);
    const auto pi = random_policy(4, 2, 1.0, rng);
    const SaTable zero(4, 2, 0.0);
    const auto interval = value_interval_from_radii(mdp, pi, zero);
    const double v = exact_value(mdp, pi)[0];
    CHECK(interval.lower == doctest::Approx(v).epsilon(1e-8));
    CHECK(interval.upper == doctest::Approx(v).epsilon(1e-8));
    const auto x = exact_occupancy(mdp, pi);
    const auto xu = robust_occupancy_upper(mdp, pi, zero);
    for (std::size_t s = 0; s < 3; ++s) {
        for (std::size_t a = 0; a < 2; ++a) CHECK(xu(s, a) == doctest::Approx(x(s, a)).epsilon(1e-8));
    }
}

TEST_CASE("vacuous radii contain the value of any kernel with the same leak") {
    RandomStream rng(StreamId{62, 0, 0});
    const auto model = random_mdp({4, 2, 0.9, 1.0}, rng);
    const auto pi = random_policy(4, 2, 1.0, rng);
    const SaTable wide(4, 2, 5.0);
    const auto interval = value_interval_from_radii(model, pi, wide);
    CHECK(interval.lower >= -1e-9);
    CHECK(interval.upper <= 10.0 + 1e-9);
    for (int i = 0; i < 10; ++i) {
        auto other = random_mdp({4, 2, 0.9, 1.0}, rng);
        other.rewards = model.rewards;
        const double v = exact_value(other, pi)[0];
        CHECK(interval.lower <= v + 1e-9);
        CHECK(v <= interval.upper + 1e-9);
    }
}

TEST_CASE("robust occupancy bounds grow with the radii") {
    RandomStream rng(StreamId{63, 0, 0});
    const auto mdp = random_mdp({4, 2, 0.9, 1.0}, rng);
    const auto pi = random_policy(4, 2, 1.0, rng);
    const auto small = robust_occupancy_upper(mdp, pi, SaTable(4, 2, 0.05));
    const auto large = robust_occupancy_upper(mdp, pi, SaTable(4, 2, 0.2));
    const auto x = exact_occupancy(mdp, pi);
    for (std::size_t s = 0; s < 3; ++s) {
        for (std::size_t a = 0; a < 2; ++a) {
            CHECK(small(s, a) >= x(s, a) - 1e-9);
            CHECK(large(s, a) >= small(s, a) - 1e-9);
        }
    }
}

TEST_CASE("optimize_row moves mass towards the best successor and keeps the leak") {
    const std::vector<double> row{0.5, 0.4, 0.1};
    const std::vector<double> values{1.0, 3.0, 0.0};
    const auto up = optimize_row(row, values, 0.2, 2, true);
    CHECK(up[0] == doctest::Approx(0.4));
    CHECK(up[1] == doctest::Approx(0.5));
    CHECK(up[2] == doctest::Approx(0.1));
    const auto down = optimize_row(row, values, 0.2, 2, false);
    CHECK(down[0] == doctest::Approx(0.6));
    CHECK(down[1] == doctest::Approx(0.3));
}
