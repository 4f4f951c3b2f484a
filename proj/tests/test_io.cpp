#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "helpers.hpp"
#include "offrl/generators.hpp"
#include "offrl/io.hpp"

using namespace offrl;
using offrl::testing::make_path;

TEST_CASE("mdp JSON round trip") {
    RandomStream rng(StreamId{1, 0, 0});
    const auto mdp = random_mdp({4, 2, 0.9, 1.0}, rng);
    const auto back = mdp_from_json(json::parse(mdp_to_json(mdp).dump()));
    CHECK(back.num_states == 4);
    CHECK(back.num_actions == 2);
    CHECK(back.gamma == mdp.gamma);
    CHECK(back.transitions == mdp.transitions);
    CHECK(back.rewards == mdp.rewards);
    CHECK(back.absorbing_state == 3);
}

TEST_CASE("mdp JSON defaults the absorbing state and validates on load") {
    json doc = mdp_to_json(make_figure1_mdp(0.3, 0.9));
    doc.erase("absorbing_state");
    CHECK(mdp_from_json(doc).absorbing_state == 2);

    doc["transitions"][0][0] = {0.5, 0.3, 0.2};
    CHECK_THROWS_AS(mdp_from_json(doc), InvalidModel);
}

TEST_CASE("malformed mdp documents raise FormatError") {
    CHECK_THROWS_AS(mdp_from_json(json::parse(R"({"gamma": 0.9})")), FormatError);
    json doc = mdp_to_json(make_figure1_mdp(0.3, 0.9));
    doc["transitions"] = "nope";
    CHECK_THROWS_AS(mdp_from_json(doc), FormatError);
    doc = mdp_to_json(make_figure1_mdp(0.3, 0.9));
    doc["rewards"] = json::array({json::array({0.0})});
    CHECK_THROWS_AS(mdp_from_json(doc), FormatError);
}

TEST_CASE("policy JSON round trip") {
    RandomStream rng(StreamId{2, 0, 0});
    const auto pi = random_policy(3, 2, 1.0, rng);
    const auto back = policy_from_json(policy_to_json(pi));
    CHECK(back.probs == pi.probs);
}

TEST_CASE("dataset JSON lines round trip and skip blank lines") {
    const Dataset data{make_path({{0, 0, 0.0}, {1, 0, 1.0}}), make_path({{0, 1, 0.5}})};
    std::stringstream buffer;
    write_dataset_jsonl(buffer, data);
    const std::string text = buffer.str();
    CHECK(text.find("\"steps\"") != std::string::npos);
    std::stringstream with_blank(text + "\n\n");
    const auto back = read_dataset_jsonl(with_blank);
    REQUIRE(back.size() == 2);
    CHECK(back[0].steps == data[0].steps);
    CHECK(back[1].steps == data[1].steps);

    std::stringstream bad("{\"steps\": [[0, 0]]}\n");
    CHECK_THROWS_AS(read_dataset_jsonl(bad), FormatError);
    std::stringstream garbage("not json\n");
    CHECK_THROWS_AS(read_dataset_jsonl(garbage), FormatError);
}

TEST_CASE("dataset validation against a model") {
    const auto mdp = make_figure1_mdp(0.3, 0.9);
    CHECK(validate_dataset({make_path({{0, 0, 0.0}, {1, 0, 1.0}})}, mdp).empty());
    CHECK(!validate_dataset({make_path({{0, 0, 0.7}})}, mdp).empty());
    CHECK(!validate_dataset({make_path({{2, 0, 0.0}})}, mdp).empty());
    CHECK(!validate_dataset({make_path({{0, 3, 0.0}})}, mdp).empty());
}

TEST_CASE("counts CSV lists nonzero triples") {
    TransitionCounts counts(3, 1, 2);
    counts.add(0, 0, 1, 4);
    counts.add(1, 0, 2, 1);
    std::stringstream out;
    write_counts_csv(out, counts);
    CHECK(out.str() == "s,a,q,n\n0,0,1,4\n1,0,2,1\n");
}

TEST_CASE("evaluation records carry interval fields only when set") {
    EvaluationRecord rec;
    rec.estimator = "model_based";
    rec.estimate = 1.5;
    rec.n_paths = 10;
    rec.seed = 3;
    rec.config_hash = "abc";
    auto doc = to_json(rec);
    CHECK(doc["estimator"] == "model_based");
    CHECK(!doc.contains("lower"));
    rec.lower = 1.0;
    rec.upper = 2.0;
    rec.delta = 0.1;
    doc = to_json(rec);
    CHECK(doc["lower"] == 1.0);
    CHECK(doc["delta"] == 0.1);
}

TEST_CASE("non-finite numbers become strings") {
    CHECK(number_to_json(std::numeric_limits<double>::infinity()) == "inf");
    CHECK(number_to_json(-std::numeric_limits<double>::infinity()) == "-inf");
    CHECK(number_to_json(std::nan("")) == "nan");
    CHECK(number_to_json(2.5) == 2.5);
}

TEST_CASE("bound reports serialize with their conventions") {
    const auto mdp = offrl::testing::single_state_mdp(0.9);
    const auto pi = Policy::uniform(2, 1);
    const auto report = theorem1_path_bound(BoundQuery::from_policies(mdp, pi, pi, 1.0, 0.1));
    const auto doc = to_json(report);
    CHECK(doc["log_base"] == "e");
    CHECK(doc["states_include_absorbing"] == true);
    CHECK(doc["per_beta"].size() == report.per_beta.size());
    const auto table = format_table(report);
    CHECK(table.find("beta") != std::string::npos);
}

TEST_CASE("read_file reports missing files") {
    CHECK_THROWS_AS(read_file("/nonexistent/definitely/missing.json"), std::runtime_error);
}
