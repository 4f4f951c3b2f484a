#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <tuple>

#include "offrl/bounds.hpp"
#include "offrl/estimation.hpp"
#include "offrl/harness.hpp"
#include "offrl/io.hpp"
#include "offrl/ope.hpp"

namespace py = pybind11;
using namespace offrl;

namespace {

using PyStep = std::tuple<std::size_t, std::size_t, double>;
using PyPath = std::vector<PyStep>;

json from_python(const py::handle& obj) {
    const auto dumps = py::module_::import("json").attr("dumps");
    return json::parse(dumps(obj).cast<std::string>());
}

py::object to_python(const json& doc) {
    const auto loads = py::module_::import("json").attr("loads");
    return loads(doc.dump());
}

TabularMdp mdp_arg(const py::handle& obj) { return mdp_from_json(from_python(obj)); }

Policy policy_arg(const py::handle& obj, const TabularMdp* mdp = nullptr) {
    auto policy = policy_from_json(from_python(obj));
    if (mdp) require_valid(policy, *mdp);
    return policy;
}

Dataset dataset_arg(const std::vector<PyPath>& paths) {
    Dataset out;
    out.reserve(paths.size());
    for (const auto& p : paths) {
        SamplePath path;
        path.steps.reserve(p.size());
        for (const auto& [s, a, r] : p) path.steps.push_back({s, a, r});
        out.push_back(std::move(path));
    }
    return out;
}

std::vector<PyPath> dataset_result(const Dataset& dataset) {
    std::vector<PyPath> out;
    out.reserve(dataset.size());
    for (const auto& path : dataset) {
        PyPath p;
        p.reserve(path.steps.size());
        for (const auto& step : path.steps) p.emplace_back(step.state, step.action, step.reward);
        out.push_back(std::move(p));
    }
    return out;
}

Dataset checked_dataset(const std::vector<PyPath>& paths, const TabularMdp& mdp) {
    auto dataset = dataset_arg(paths);
    const auto problems = validate_dataset(dataset, mdp);
    if (!problems.empty()) throw std::invalid_argument("invalid dataset: " + problems.front());
    return dataset;
}

std::vector<std::vector<double>> table_rows(const SaTable& t) {
    std::vector<std::vector<double>> rows(t.num_states());
    for (std::size_t s = 0; s < t.num_states(); ++s) rows[s].assign(t.row(s).begin(), t.row(s).end());
    return rows;
}

}  // namespace

PYBIND11_MODULE(offrl, m) {
    m.doc() = "Tabular offline reinforcement learning: evaluation, optimization, sample-size bounds";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<InvalidModel>(m, "InvalidModel", PyExc_ValueError);

    m.def(
        "sample",
        [](const py::dict& mdp_doc, const py::dict& policy_doc, std::size_t num_paths, std::uint64_t seed) {
            const auto mdp = mdp_arg(mdp_doc);
            const auto policy = policy_arg(policy_doc, &mdp);
            RandomStream rng(StreamId{seed, 0, 0});
            return dataset_result(sample_dataset(mdp, policy, num_paths, rng));
        },
        py::arg("mdp"), py::arg("policy"), py::arg("num_paths"), py::arg("seed") = 0,
        "Sample paths; each path is a list of (state, action, reward).");

    m.def(
        "exact_value",
        [](const py::dict& mdp_doc, const py::dict& policy_doc) {
            const auto mdp = mdp_arg(mdp_doc);
            return exact_value(mdp, policy_arg(policy_doc, &mdp));
        },
        py::arg("mdp"), py::arg("policy"));

    m.def(
        "exact_occupancy",
        [](const py::dict& mdp_doc, const py::dict& policy_doc) {
            const auto mdp = mdp_arg(mdp_doc);
            return table_rows(exact_occupancy(mdp, policy_arg(policy_doc, &mdp)));
        },
        py::arg("mdp"), py::arg("policy"));

    m.def(
        "evaluate_model_based",
        [](const std::vector<PyPath>& paths, const py::dict& mdp_doc, const py::dict& target_doc,
           const std::string& projection) {
            const auto mdp = mdp_arg(mdp_doc);
            const auto target = policy_arg(target_doc, &mdp);
            const auto dataset = checked_dataset(paths, mdp);
            return model_based_evaluate(dataset, target, ModelFrame::of(mdp), projection_mode_from_string(projection));
        },
        py::arg("paths"), py::arg("mdp"), py::arg("target"), py::arg("projection") = "renormalized",
        "Value of the target policy on the model estimated from the paths. The MDP supplies sizes and rewards.");

    m.def(
        "evaluate_importance_sampling",
        [](const std::vector<PyPath>& paths, const py::dict& target_doc, const py::dict& behavior_doc) {
            return importance_sampling_evaluate(dataset_arg(paths), policy_arg(target_doc), policy_arg(behavior_doc));
        },
        py::arg("paths"), py::arg("target"), py::arg("behavior"));

    m.def(
        "optimize",
        [](const std::vector<PyPath>& paths, const py::dict& mdp_doc, const std::string& projection) {
            const auto mdp = mdp_arg(mdp_doc);
            const auto result = model_based_optimize(checked_dataset(paths, mdp), ModelFrame::of(mdp),
                                                     projection_mode_from_string(projection));
            return py::make_tuple(to_python(policy_to_json(result.policy)), result.estimated_value);
        },
        py::arg("paths"), py::arg("mdp"), py::arg("projection") = "renormalized",
        "Optimal deterministic policy of the estimated model and its estimated value.");

    m.def(
        "path_bound",
        [](const py::dict& mdp_doc, const py::dict& target_doc, const py::object& behavior_doc, double epsilon,
           double delta) {
            const auto mdp = mdp_arg(mdp_doc);
            const auto target = policy_arg(target_doc, &mdp);
            const auto behavior = behavior_doc.is_none() ? Policy::uniform(mdp.num_states, mdp.num_actions)
                                                         : policy_arg(behavior_doc, &mdp);
            return to_python(to_json(theorem1_path_bound(BoundQuery::from_policies(mdp, target, behavior, epsilon, delta))));
        },
        py::arg("mdp"), py::arg("target"), py::arg("behavior") = py::none(), py::arg("epsilon"),
        py::arg("delta") = 0.1, "Paths sufficient for an epsilon-accurate model-based estimate (report dict).");

    m.def(
        "certificate",
        [](const std::vector<PyPath>& paths, const py::dict& mdp_doc, const py::dict& target_doc,
           const py::dict& behavior_doc, double delta) {
            const auto mdp = mdp_arg(mdp_doc);
            const auto dataset = checked_dataset(paths, mdp);
            return to_python(to_json(accuracy_certificate(dataset, ModelFrame::of(mdp), policy_arg(target_doc, &mdp),
                                                          policy_arg(behavior_doc, &mdp), delta)));
        },
        py::arg("paths"), py::arg("mdp"), py::arg("target"), py::arg("behavior"), py::arg("delta") = 0.1);

    m.def("lemma2_threshold", &lemma2_threshold, py::arg("S"), py::arg("epsilon_prime"), py::arg("delta_prime"));
    m.def("lemma3_path_count", &lemma3_path_count, py::arg("gamma"), py::arg("rho_b"), py::arg("n_prime"),
          py::arg("delta_prime"));
    m.def("lemma4_path_count", &lemma4_path_count, py::arg("k"), py::arg("lambda_b"), py::arg("delta_prime"));
    m.def("df_mse_bound", &df_mse_bound, py::arg("p"), py::arg("n"));
    m.def("single_path_sigma_hat", &expected_sigma_hat_single_path, py::arg("sigma"),
          "Expected self-loop estimate from one path of the two-state chain.");

    m.def(
        "run_experiment",
        [](const py::dict& config_doc) {
            const auto config = ExperimentConfig::from_json(from_python(config_doc));
            ExperimentResult result;
            {
                py::gil_scoped_release release;
                result = run_experiment(config);
            }
            py::dict out;
            out["passed"] = result.passed;
            out["config_hash"] = result.config_hash;
            out["summary"] = to_python(result.summary);
            out["csv"] = to_csv(result.table, result.config_hash);
            return out;
        },
        py::arg("config"), "Run a verification experiment from a config dict.");
}
