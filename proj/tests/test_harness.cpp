#include <doctest.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "offrl/harness.hpp"

using namespace offrl;

namespace {

ExperimentConfig small_config(ExperimentKind kind, std::size_t trials) {
    ExperimentConfig c;
    c.kind = kind;
    c.trials = trials;
    c.seed = 5;
    return c;
}

std::filesystem::path temp_dir(const char* name) {
    auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("experiment kinds round trip through their names and short forms") {
    for (auto kind : all_experiment_kinds()) CHECK(experiment_kind_from_string(to_string(kind)) == kind);
    CHECK(experiment_kind_from_string("lemma3") == ExperimentKind::lemma3_coverage);
    CHECK(experiment_kind_from_string("theorem2") == ExperimentKind::theorem2_mse);
    CHECK(experiment_kind_from_string("certificate") == ExperimentKind::certificate_coverage);
    CHECK_THROWS_AS(experiment_kind_from_string("lemma9"), ConfigError);
}

TEST_CASE("config parsing is strict") {
    const auto ok = ExperimentConfig::from_json(json::parse(R"({"schema_version": 1, "kind": "lemma3", "trials": 10})"));
    CHECK(ok.kind == ExperimentKind::lemma3_coverage);
    CHECK(ok.trial_count() == 10);
    CHECK_THROWS_AS(ExperimentConfig::from_json(json::parse(R"({"kind": "lemma3"})")), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json(json::parse(R"({"schema_version": 2, "kind": "lemma3"})")),
                    ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json(json::parse(R"({"schema_version": 1, "kind": "lemma3", "trials": 0})")),
                    ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json(json::parse(R"({"schema_version": 1, "kind": "lemma3", "bogus": 1})")),
                    ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json(json::parse(R"({"schema_version": 1, "kind": "lemma3", "trials": "x"})")),
                    ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json(json::parse(
                        R"({"schema_version": 1, "kind": "ope_sweep", "generator": {}, "files": {"mdp": "m.json"}})")),
                    ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json(json::parse(
                        R"({"schema_version": 1, "kind": "ope_sweep", "generator": {"gamma": 1.0}})")),
                    ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json(json::parse("[1, 2]")), ConfigError);
}

TEST_CASE("config hash ignores output and workers but not the seed") {
    auto a = small_config(ExperimentKind::lemma3_coverage, 10);
    auto b = a;
    b.workers = 8;
    b.output = "elsewhere.csv";
    CHECK(a.hash() == b.hash());
    CHECK(a.hash().size() == 16);
    b.seed = 6;
    CHECK(a.hash() != b.hash());
    CHECK(ExperimentConfig::from_json(a.to_json()).hash() == a.hash());
}

TEST_CASE("content hash is FNV-1a") {
    CHECK(content_hash("") == "cbf29ce484222325");
    CHECK(content_hash("a") == "af63dc4c8601ec8c");
}

TEST_CASE("Wilson interval") {
    const auto zero = wilson_interval(0, 2000);
    CHECK(zero.lower == 0.0);
    CHECK(zero.upper > 0.0);
    CHECK(zero.upper < 0.005);
    const auto half = wilson_interval(50, 100);
    CHECK(half.lower < 0.5);
    CHECK(half.upper > 0.5);
    CHECK(half.lower + half.upper == doctest::Approx(1.0));
    const auto narrow = wilson_interval(200, 2000);
    CHECK(narrow.upper - narrow.lower <= 0.1);
}

TEST_CASE("type-7 quantiles") {
    CHECK(quantile({3.0, 1.0, 2.0}, 0.5) == 2.0);
    CHECK(quantile({1.0, 2.0, 3.0, 4.0}, 0.5) == 2.5);
    CHECK(quantile({1.0, 2.0}, 1.0) == 2.0);
    CHECK(quantile({5.0}, 0.9) == 5.0);
    CHECK_THROWS(quantile({}, 0.5));
    CHECK_THROWS(quantile({1.0}, 1.5));
}

TEST_CASE("parallel_for runs each index once and rethrows") {
    std::vector<std::atomic<int>> hits(1000);
    parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i].fetch_add(1); });
    for (const auto& h : hits) CHECK(h.load() == 1);
    CHECK_THROWS_AS(parallel_for(100, 4,
                                 [](std::size_t i) {
                                     if (i == 37) throw std::runtime_error("boom");
                                 }),
                    std::runtime_error);
}

TEST_CASE("bias curve rows and peak") {
    const auto table = run_bias_curve({0.3}, 20000, 1);
    REQUIRE(table.rows.size() == 1);
    CHECK(table.values("analytic")[0] == doctest::Approx(0.51599).epsilon(1e-5));
    CHECK(std::abs(table.values("mc_z")[0]) < 5.0);
    const auto analytic_only = run_bias_curve({0.2, 0.4}, 0, 1);
    CHECK(std::isnan(analytic_only.values("mc_mean")[0]));
    const auto peak = max_single_path_bias();
    CHECK(std::abs(peak.bias - 0.216) <= 0.002);
    CHECK(peak.sigma > 0.25);
    CHECK(peak.sigma < 0.4);
    CHECK_THROWS(run_bias_curve({1.0}, 10, 1));
}

TEST_CASE("theorem2 MSE on a deterministic distribution is zero") {
    const auto est = run_theorem2_mse({1.0, 0.0}, 100, 1000, 3);
    CHECK(est.mse_df == 0.0);
    CHECK(est.mse_sm == 0.0);
    CHECK(est.bound == 0.0);
}

TEST_CASE("theorem2 MSE respects the bound with a loose distribution") {
    const auto est = run_theorem2_mse({0.6, 0.4}, 25, 100000, 4, 2);
    CHECK(est.component == 0);
    CHECK(est.mse_df <= est.bound + 3.0 * est.se_df);
    CHECK(est.draws == 100000);
}

TEST_CASE("theorem2 experiment locates the DF versus sample-mean crossover") {
    auto config = small_config(ExperimentKind::theorem2_mse, 20000);
    const auto result = run_experiment(config);
    CHECK(result.passed);
    REQUIRE(result.summary["crossover_p"].is_number());
    const double p = result.summary["crossover_p"].get<double>();
    CHECK(p > 0.8);
    CHECK(p < 0.9);
    CHECK(result.summary["crossover"].front()["df_better"] == false);
    config.params = {{"crossover_grid", {0.4}}};
    CHECK_THROWS_AS(run_experiment(config), ConfigError);
}

TEST_CASE("results do not depend on the worker count") {
    auto config = small_config(ExperimentKind::theorem1_coverage, 6);
    config.params = {{"n_grid", {50, 200, 800}}};
    const auto serial = run_experiment(config);
    config.workers = 3;
    const auto parallel = run_experiment(config);
    CHECK(to_csv(serial.table, serial.config_hash) == to_csv(parallel.table, parallel.config_hash));
    CHECK(serial.summary.dump() == parallel.summary.dump());
}

TEST_CASE("every experiment kind runs at a small size") {
    struct Small {
        ExperimentKind kind;
        std::size_t trials;
        json params;
    };
    const std::vector<Small> cases{
        {ExperimentKind::occupancy_identity, 5, json::object()},
        {ExperimentKind::lemma1_sandwich, 6, json::object()},
        {ExperimentKind::bias_curve, 1000, {{"sigma_grid", {0.3, 0.6}}}},
        {ExperimentKind::theorem2_mse, 2000, json::object()},
        {ExperimentKind::lemma2_coverage, 5, {{"epsilon_prime", 0.35}}},
        {ExperimentKind::lemma3_coverage, 20, json::object()},
        {ExperimentKind::lemma4_coverage, 20, json::object()},
        {ExperimentKind::theorem1_coverage, 4, {{"n_grid", {50, 100}}}},
        {ExperimentKind::ope_sweep, 4, {{"n_grid", {50, 100}}}},
        {ExperimentKind::is_unbiasedness, 20, json::object()},
        {ExperimentKind::certificate_coverage, 3, {{"num_paths", 100}}},
        {ExperimentKind::corollary1_coverage, 2, {{"num_paths", 500}}},
    };
    for (const auto& c : cases) {
        CAPTURE(to_string(c.kind));
        auto config = small_config(c.kind, c.trials);
        config.params = c.params;
        const auto result = run_experiment(config);
        CHECK(result.config_hash == config.hash());
        CHECK(!result.table.columns.empty());
        CHECK(!result.table.rows.empty());
        CHECK(result.summary["kind"] == std::string(to_string(c.kind)));
    }
}

TEST_CASE("coverage experiments count failures against the threshold") {
    const auto result = run_experiment(small_config(ExperimentKind::lemma3_coverage, 50));
    CHECK(result.summary["paths"] == 267.0);
    CHECK(result.table.values("paths").front() == 267.0);
    CHECK(result.passed);
}

TEST_CASE("kinds that draw their own models reject model sources") {
    auto config = small_config(ExperimentKind::bias_curve, 10);
    config.generator = RandomMdpSpec{};
    CHECK_THROWS_AS(run_experiment(config), ConfigError);
}

TEST_CASE("bad parameters are configuration errors") {
    auto config = small_config(ExperimentKind::theorem2_mse, 10);
    config.params = {{"p", {0.5, 0.6}}};
    CHECK_THROWS_AS(run_experiment(config), ConfigError);
    config.params = {{"n", "ten"}};
    CHECK_THROWS_AS(run_experiment(config), ConfigError);
}

TEST_CASE("model files feed an experiment") {
    const auto dir = temp_dir("offrl_harness_files");
    TabularMdp mdp(3, 2, 0.9);
    mdp.p(0, 0, 0) = 0.4;
    mdp.p(0, 0, 1) = 0.5;
    mdp.rewards(1, 0) = 1.0;
    mdp.rewards(1, 1) = 1.0;
    save_mdp((dir / "m.json").string(), mdp);
    save_policy((dir / "t.json").string(), Policy::uniform(3, 2));
    auto config = small_config(ExperimentKind::ope_sweep, 3);
    config.files = ModelFiles{(dir / "m.json").string(), (dir / "t.json").string(), ""};
    config.params = {{"n_grid", {20}}};
    const auto result = run_experiment(config);
    CHECK(result.summary["true_value"].get<double>() ==
          doctest::Approx(exact_value(mdp, Policy::uniform(3, 2))[0]));
}

TEST_CASE("outputs carry the config hash and refuse mismatched overwrites") {
    const auto dir = temp_dir("offrl_harness_out");
    const auto path = (dir / "run.csv").string();
    auto config = small_config(ExperimentKind::occupancy_identity, 3);
    const auto result = run_experiment(config);
    write_experiment_outputs(result, path, false);
    std::ifstream in(path);
    std::string first;
    std::getline(in, first);
    CHECK(first == "# config_hash=" + config.hash());
    CHECK(std::filesystem::exists(path + ".json"));

    write_experiment_outputs(result, path, false);  // same hash: allowed

    config.seed = 99;
    const auto other = run_experiment(config);
    CHECK_THROWS_AS(write_experiment_outputs(other, path, false), OutputConflict);
    write_experiment_outputs(other, path, true);
    std::ifstream again(path);
    std::getline(again, first);
    CHECK(first == "# config_hash=" + config.hash());

    std::ofstream((dir / "foreign.csv").string()) << "a,b\n1,2\n";
    CHECK_THROWS_AS(check_overwrite((dir / "foreign.csv").string(), config.hash(), false), OutputConflict);
}

TEST_CASE("output path resolution") {
    auto config = small_config(ExperimentKind::lemma4_coverage, 1);
    config.output = "x.csv";
    CHECK(resolve_output_path(config) == "x.csv");
    config.output.clear();
    ::setenv("OFFRL_OUTPUT_DIR", "/tmp/offrl_outputs", 1);
    CHECK(resolve_output_path(config) == "/tmp/offrl_outputs/lemma4_coverage.csv");
    ::unsetenv("OFFRL_OUTPUT_DIR");
    CHECK(resolve_output_path(config) == "lemma4_coverage.csv");
}
