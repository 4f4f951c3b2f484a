#include "offrl/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace offrl {

namespace {

template <typename F>
auto parse_guard(const char* what, F&& body) {
    try {
        return body();
    } catch (const json::exception& e) {
        throw FormatError(std::string(what) + ": " + e.what());
    }
}

std::size_t get_index(const json& doc, const char* key) {
    const auto& v = doc.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw FormatError(std::string("field '") + key + "' must be a nonnegative integer");
    }
    return v.get<std::size_t>();
}

SaTable table_from_json(const json& rows, std::size_t S, std::size_t A, const char* name) {
    if (!rows.is_array() || rows.size() != S) {
        throw FormatError(std::string("'") + name + "' must have num_states rows");
    }
    SaTable table(S, A);
    for (std::size_t s = 0; s < S; ++s) {
        if (!rows[s].is_array() || rows[s].size() != A) {
            throw FormatError(std::string("'") + name + "' row " + std::to_string(s) + " must have num_actions entries");
        }
        for (std::size_t a = 0; a < A; ++a) table(s, a) = rows[s][a].get<double>();
    }
    return table;
}

json table_to_json(const SaTable& table) {
    json rows = json::array();
    for (std::size_t s = 0; s < table.num_states(); ++s) {
        const auto r = table.row(s);
        rows.push_back(std::vector<double>(r.begin(), r.end()));
    }
    return rows;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    return out;
}

}  // namespace

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

json number_to_json(double value) {
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    return value;
}

json mdp_to_json(const TabularMdp& mdp) {
    json doc;
    doc["gamma"] = mdp.gamma;
    doc["num_states"] = mdp.num_states;
    doc["num_actions"] = mdp.num_actions;
    json transitions = json::array();
    for (std::size_t s = 0; s < mdp.num_states; ++s) {
        json per_action = json::array();
        for (std::size_t a = 0; a < mdp.num_actions; ++a) {
            const auto r = mdp.row(s, a);
            per_action.push_back(std::vector<double>(r.begin(), r.end()));
        }
        transitions.push_back(std::move(per_action));
    }
    doc["transitions"] = std::move(transitions);
    doc["rewards"] = table_to_json(mdp.rewards);
    doc["initial_state"] = mdp.initial_state;
    doc["absorbing_state"] = mdp.absorbing_state;
    return doc;
}

TabularMdp mdp_from_json(const json& doc) {
    auto mdp = parse_guard("mdp", [&] {
        if (!doc.is_object()) throw FormatError("mdp document must be a JSON object");
        TabularMdp m;
        m.gamma = doc.at("gamma").get<double>();
        m.num_states = get_index(doc, "num_states");
        m.num_actions = get_index(doc, "num_actions");
        if (m.num_states < 2 || m.num_actions < 1) {
            throw FormatError("mdp needs at least two states (one absorbing) and one action");
        }
        m.initial_state = get_index(doc, "initial_state");
        m.absorbing_state = doc.contains("absorbing_state") ? get_index(doc, "absorbing_state") : m.num_states - 1;
        const std::size_t S = m.num_states, A = m.num_actions;
        const auto& tr = doc.at("transitions");
        if (!tr.is_array() || tr.size() != S) throw FormatError("'transitions' must have num_states entries");
        m.transitions.assign(S * A * S, 0.0);
        for (std::size_t s = 0; s < S; ++s) {
            if (!tr[s].is_array() || tr[s].size() != A) {
                throw FormatError("'transitions' entry " + std::to_string(s) + " must have num_actions rows");
            }
            for (std::size_t a = 0; a < A; ++a) {
                const auto& row = tr[s][a];
                if (!row.is_array() || row.size() != S) {
                    throw FormatError("transition row (" + std::to_string(s) + "," + std::to_string(a) +
                                      ") must have num_states entries");
                }
                for (std::size_t q = 0; q < S; ++q) m.p(s, a, q) = row[q].get<double>();
            }
        }
        m.rewards = table_from_json(doc.at("rewards"), S, A, "rewards");
        return m;
    });
    require_valid(mdp);
    return mdp;
}

json policy_to_json(const Policy& policy) {
    return {{"num_states", policy.num_states()},
            {"num_actions", policy.num_actions()},
            {"probs", table_to_json(policy.probs)}};
}

Policy policy_from_json(const json& doc) {
    return parse_guard("policy", [&] {
        if (!doc.is_object()) throw FormatError("policy document must be a JSON object");
        const std::size_t S = get_index(doc, "num_states");
        const std::size_t A = get_index(doc, "num_actions");
        return Policy(table_from_json(doc.at("probs"), S, A, "probs"));
    });
}

TabularMdp load_mdp(const std::string& path) {
    return mdp_from_json(parse_guard(path.c_str(), [&] { return json::parse(read_file(path)); }));
}

void save_mdp(const std::string& path, const TabularMdp& mdp) { open_out(path) << mdp_to_json(mdp).dump(2) << '\n'; }

Policy load_policy(const std::string& path, const TabularMdp* mdp) {
    auto policy = policy_from_json(parse_guard(path.c_str(), [&] { return json::parse(read_file(path)); }));
    if (mdp) require_valid(policy, *mdp);
    return policy;
}

void save_policy(const std::string& path, const Policy& policy) {
    open_out(path) << policy_to_json(policy).dump(2) << '\n';
}

void write_dataset_jsonl(std::ostream& out, const Dataset& dataset) {
    for (const auto& path : dataset) {
        json steps = json::array();
        for (const auto& st : path.steps) steps.push_back(json::array({st.state, st.action, st.reward}));
        out << json{{"steps", std::move(steps)}}.dump() << '\n';
    }
}

Dataset read_dataset_jsonl(std::istream& in) {
    Dataset dataset;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = "dataset line " + std::to_string(line_no);
        dataset.push_back(parse_guard(where.c_str(), [&] {
            const auto doc = json::parse(line);
            SamplePath path;
            for (const auto& st : doc.at("steps")) {
                if (!st.is_array() || st.size() != 3) throw FormatError(where + ": each step must be [s, a, r]");
                if (!st[0].is_number_integer() || !st[1].is_number_integer() || st[0].get<long long>() < 0 ||
                    st[1].get<long long>() < 0) {
                    throw FormatError(where + ": state and action must be nonnegative integers");
                }
                path.steps.push_back({st[0].get<std::size_t>(), st[1].get<std::size_t>(), st[2].get<double>()});
            }
            return path;
        }));
    }
    return dataset;
}

void save_dataset(const std::string& path, const Dataset& dataset) {
    auto out = open_out(path);
    write_dataset_jsonl(out, dataset);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return read_dataset_jsonl(in);
}

std::vector<std::string> validate_dataset(const Dataset& dataset, const TabularMdp& mdp) {
    std::vector<std::string> problems;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& steps = dataset[i].steps;
        for (std::size_t t = 0; t < steps.size(); ++t) {
            const auto& st = steps[t];
            std::ostringstream where;
            where << "path " << i << " step " << t << ": ";
            if (st.state >= mdp.num_states || st.action >= mdp.num_actions) {
                problems.push_back(where.str() + "index out of range");
            } else if (mdp.is_absorbing(st.state)) {
                problems.push_back(where.str() + "step at the absorbing state");
            } else if (std::abs(st.reward - mdp.rewards(st.state, st.action)) > 1e-12) {
                problems.push_back(where.str() + "reward differs from the mean reward");
            }
        }
    }
    return problems;
}

void write_counts_csv(std::ostream& out, const TransitionCounts& counts) {
    out << "s,a,q,n\n";
    for (std::size_t s = 0; s < counts.num_states(); ++s) {
        for (std::size_t a = 0; a < counts.num_actions(); ++a) {
            for (std::size_t q = 0; q < counts.num_states(); ++q) {
                const auto n = counts.n(s, a, q);
                if (n > 0) out << s << ',' << a << ',' << q << ',' << n << '\n';
            }
        }
    }
}

json to_json(const EvaluationRecord& record) {
    json doc = {{"estimator", record.estimator},
                {"estimate", number_to_json(record.estimate)},
                {"n_paths", record.n_paths},
                {"seed", record.seed},
                {"config_hash", record.config_hash}};
    if (record.lower) doc["lower"] = number_to_json(*record.lower);
    if (record.upper) doc["upper"] = number_to_json(*record.upper);
    if (record.delta) doc["delta"] = *record.delta;
    return doc;
}

namespace {

json pair_to_json(const std::optional<PairRef>& pair) {
    if (!pair) return nullptr;
    return json::array({pair->state, pair->action});
}

}  // namespace

json to_json(const BoundReport& report) {
    json entries = json::array();
    for (const auto& e : report.per_beta) {
        std::vector<int> mask(e.in_d.begin(), e.in_d.end());
        entries.push_back({{"beta", e.beta},
                           {"required_paths", number_to_json(e.required_paths)},
                           {"d_cutoff", number_to_json(e.d_cutoff)},
                           {"alternative_cutoff", number_to_json(e.alternative_cutoff)},
                           {"d_size", e.d_size},
                           {"in_d", mask},
                           {"argmax", pair_to_json(e.argmax)},
                           {"term1", number_to_json(e.term1)},
                           {"term2", number_to_json(e.term2)},
                           {"samples_per_pair", number_to_json(e.samples_per_pair)},
                           {"unreachable", e.unreachable}});
    }
    return {{"formula", report.formula},
            {"required_paths", number_to_json(report.required_paths)},
            {"best_beta", report.best_beta},
            {"argmax", pair_to_json(report.argmax)},
            {"log_floor_applied", report.log_floor_applied},
            {"log_base", "e"},
            {"states_include_absorbing", true},
            {"per_beta", std::move(entries)},
            {"notes", report.notes}};
}

json to_json(const Certificate& certificate) {
    return {{"epsilon", number_to_json(certificate.epsilon)},
            {"delta", certificate.delta},
            {"num_paths", certificate.num_paths},
            {"radii", table_to_json(certificate.radii)},
            {"target_x_upper", table_to_json(certificate.target_x_upper)},
            {"behavior_x_lower", table_to_json(certificate.behavior_x_lower)},
            {"behavior_rho_lower", table_to_json(certificate.behavior_rho_lower)},
            {"report", to_json(certificate.report)},
            {"notes", certificate.notes}};
}

std::string format_table(const BoundReport& report) {
    std::ostringstream out;
    out << report.formula << "\n";
    out << std::left << std::setw(6) << "beta" << std::right << std::setw(16) << "paths" << std::setw(8) << "|D|"
        << std::setw(10) << "argmax" << std::setw(16) << "term1" << std::setw(16) << "term2" << "\n";
    for (const auto& e : report.per_beta) {
        std::string arg = "-";
        if (e.argmax) arg = "(" + std::to_string(e.argmax->state) + "," + std::to_string(e.argmax->action) + ")";
        out << std::left << std::setw(6) << std::setprecision(2) << e.beta << std::right << std::setprecision(6)
            << std::setw(16) << e.required_paths << std::setw(8) << e.d_size << std::setw(10) << arg << std::setw(16)
            << e.term1 << std::setw(16) << e.term2 << "\n";
    }
    out << "required paths: " << std::setprecision(10) << report.required_paths << " (beta = " << report.best_beta
        << ")\n";
    for (const auto& note : report.notes) out << "note: " << note << "\n";
    return out.str();
}

}  // namespace offrl
