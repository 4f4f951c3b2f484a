#include "offrl/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace offrl {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_open_unit(double v, const char* name) {
    if (!(v > 0.0 && v < 1.0)) throw std::invalid_argument(std::string(name) + " must lie in (0, 1)");
}

double ceil_or_inf(double v) { return std::isfinite(v) ? std::ceil(v) : kInf; }

void check_table(const SaTable& t, std::size_t S, std::size_t A, const char* name) {
    if (t.num_states() != S || t.num_actions() != A) {
        throw std::invalid_argument(std::string(name) + " has the wrong shape");
    }
}

}  // namespace

double lemma1_gap(double alpha, double beta, std::size_t S, std::size_t A, double gamma) {
    if (!(alpha >= 0.0)) throw std::invalid_argument("lemma1_gap: alpha must be nonnegative");
    if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("lemma1_gap: beta must lie in [0, 1]");
    require_open_unit(gamma, "gamma");
    const double sa = static_cast<double>(S * A);
    return alpha * std::pow(sa, beta) / std::pow(1.0 - gamma, 2.0 - beta);
}

double lemma2_threshold(std::size_t S, double epsilon_prime, double delta_prime) {
    require_open_unit(epsilon_prime, "epsilon'");
    require_open_unit(delta_prime, "delta'");
    const double eps2 = epsilon_prime * epsilon_prime;
    return std::ceil(40.0 * static_cast<double>(S) / eps2 * std::log(1.0 / epsilon_prime) *
                     std::log(5.0 / (3.0 * delta_prime)));
}

double lemma2_radius_from_count(std::size_t S, double count, double delta_prime, double gamma) {
    require_open_unit(delta_prime, "delta'");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
    const double cap = 2.0 * gamma;
    if (count < 1.0) return cap;
    const double mu = count;
    const double log_term = 2.0 * std::log(mu) + static_cast<double>(S) * std::log(2.0) +
                            std::log(5.0 / (3.0 * delta_prime));
    const double c = std::sqrt(2.0 / mu * log_term);
    return std::min(gamma * c, cap);
}

double lemma3_path_count(double gamma, double rho_b, double n_prime, double delta_prime) {
    require_open_unit(gamma, "gamma");
    require_open_unit(delta_prime, "delta'");
    if (!(rho_b >= 0.0 && rho_b <= 1.0)) throw std::invalid_argument("rho must lie in [0, 1]");
    if (!(n_prime >= 0.0)) throw std::invalid_argument("N' must be nonnegative");
    if (rho_b == 0.0) return kInf;
    return std::ceil(6.0 / (gamma * rho_b) * std::max(n_prime, std::log(1.0 / delta_prime)));
}

double lemma4_path_count(double k, double lambda_b, double delta_prime) {
    require_open_unit(delta_prime, "delta'");
    if (!(lambda_b >= 0.0 && lambda_b < 1.0)) throw std::invalid_argument("lambda must lie in [0, 1)");
    if (!(k >= 0.0)) throw std::invalid_argument("k must be nonnegative");
    return std::ceil(std::max(8.0 * k * (1.0 - lambda_b), std::log(1.0 / delta_prime)));
}

std::vector<double> BoundQuery::default_beta_grid() {
    std::vector<double> grid;
    for (int i = 0; i <= 10; ++i) grid.push_back(i / 10.0);
    return grid;
}

BoundQuery BoundQuery::from_policies(const TabularMdp& mdp, const Policy& target, const Policy& behavior,
                                     double epsilon, double delta) {
    BoundQuery q;
    q.S = mdp.num_states;
    q.A = mdp.num_actions;
    q.gamma = mdp.gamma;
    q.epsilon = epsilon;
    q.delta = delta;
    q.absorbing_state = mdp.absorbing_state;
    q.target_x = exact_occupancy(mdp, target);
    const auto stats = occupancy_stats(mdp, behavior);
    q.behavior_x = stats.x;
    q.behavior_rho = stats.rho;
    return q;
}

BoundReport theorem1_path_bound(const BoundQuery& query) {
    if (!(query.epsilon > 0.0)) throw std::invalid_argument("theorem1_path_bound: epsilon must be positive");
    require_open_unit(query.delta, "delta");
    require_open_unit(query.gamma, "gamma");
    if (query.beta_grid.empty()) throw std::invalid_argument("theorem1_path_bound: empty beta grid");
    const std::size_t S = query.S, A = query.A;
    check_table(query.target_x, S, A, "target occupancy");
    check_table(query.behavior_x, S, A, "behavior occupancy");
    check_table(query.behavior_rho, S, A, "behavior rho");

    const double s = static_cast<double>(S), a = static_cast<double>(A), sa = s * a;
    const double g = query.gamma, eps = query.epsilon, one_minus = 1.0 - g;
    const double raw_log_accuracy = std::log(g * sa / (std::pow(one_minus, 3.0) * eps));
    const double log_accuracy = std::max(1.0, raw_log_accuracy);
    const double log_confidence = std::log(5.0 * sa / query.delta);
    const double log_paths = std::log(3.0 * sa / query.delta);

    BoundReport report;
    report.formula = "explicit-constant form: path count for model-based evaluation";
    report.log_floor_applied = raw_log_accuracy < 1.0;
    report.required_paths = kInf;
    report.notes.push_back("natural logarithms; S includes the absorbing state");
    if (report.log_floor_applied) report.notes.push_back("ln(gamma S A / ((1-gamma)^3 eps)) floored at 1");

    for (double beta : query.beta_grid) {
        if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("theorem1_path_bound: beta outside [0, 1]");
        BetaEntry entry;
        entry.beta = beta;
        entry.in_d.assign(S * A, false);
        if (beta > 0.0) {
            entry.d_cutoff = std::pow(eps / 2.0, 1.0 / beta) * std::pow(one_minus, (2.0 - beta) / beta) / sa;
            entry.alternative_cutoff = std::pow(eps / 2.0, 1.0 / beta) * std::pow(one_minus, (1.0 - beta) / beta) / sa;
        } else {
            entry.d_cutoff = -kInf;
            entry.alternative_cutoff = -kInf;
        }
        const double scale = 40.0 * std::pow(s, beta + 1.0) * std::pow(a, beta) * g * g /
                             (std::pow(one_minus, 4.0 - 2.0 * beta) * eps * eps) * log_accuracy * log_confidence;
        double worst = 0.0;
        for (std::size_t st = 0; st < S; ++st) {
            if (st == query.absorbing_state) continue;
            for (std::size_t act = 0; act < A; ++act) {
                const double xt = query.target_x(st, act);
                if (beta > 0.0 && !(xt >= entry.d_cutoff)) continue;
                entry.in_d[st * A + act] = true;
                ++entry.d_size;
                const double xb = query.behavior_x(st, act);
                const double rho = query.behavior_rho(st, act);
                const double n_sa = scale * std::pow(xt, 2.0 * beta);
                const double term1 = xb > 0.0 ? 48.0 * n_sa / (g * xb) : kInf;
                const double term2 = rho > 0.0 ? 6.0 / (g * rho) * log_paths : kInf;
                if (!std::isfinite(term1) || !std::isfinite(term2)) entry.unreachable = true;
                const double need = std::max(term1, term2);
                if (!entry.argmax || need > worst) {
                    worst = need;
                    entry.argmax = PairRef{st, act};
                    entry.term1 = term1;
                    entry.term2 = term2;
                    entry.samples_per_pair = n_sa;
                }
            }
        }
        entry.required_paths = entry.d_size == 0 ? 0.0 : ceil_or_inf(worst);
        if (entry.required_paths < report.required_paths) {
            report.required_paths = entry.required_paths;
            report.best_beta = beta;
            report.argmax = entry.argmax;
        }
        report.per_beta.push_back(std::move(entry));
    }
    if (!std::isfinite(report.required_paths)) {
        report.best_beta = report.per_beta.front().beta;
        report.argmax = report.per_beta.front().argmax;
        report.notes.push_back("unreachable: a pair in D has zero behavior occupancy or first-visit probability");
    }
    for (const auto& e : report.per_beta) {
        if (e.beta > 0.0 && e.d_size == 0) {
            std::ostringstream msg;
            msg << "beta=" << e.beta << ": D is empty, requirement 0";
            report.notes.push_back(msg.str());
        }
    }
    return report;
}

BoundReport corollary1_path_bound(std::size_t S, std::size_t A, double gamma, double epsilon, double delta,
                                  const SaTable& behavior_x, const SaTable& behavior_rho,
                                  std::size_t absorbing_state) {
    if (!(epsilon > 0.0)) throw std::invalid_argument("corollary1_path_bound: epsilon must be positive");
    require_open_unit(delta, "delta");
    require_open_unit(gamma, "gamma");
    check_table(behavior_x, S, A, "behavior occupancy");
    check_table(behavior_rho, S, A, "behavior rho");
    const double s = static_cast<double>(S), sa = s * static_cast<double>(A);
    const double one_minus = 1.0 - gamma;
    const double raw_log_accuracy = std::log(gamma / (std::pow(one_minus, 3.0) * epsilon));
    const double log_accuracy = std::max(1.0, raw_log_accuracy);
    const double scale = 7680.0 * s * gamma / (std::pow(one_minus, 5.0) * epsilon * epsilon) * log_accuracy *
                         std::log(10.0 * sa / delta);
    const double log_paths = std::log(6.0 * sa / delta);

    BoundReport report;
    report.formula = "explicit-constant form: path count for model-based optimization";
    report.log_floor_applied = raw_log_accuracy < 1.0;
    report.notes.push_back("natural logarithms; S includes the absorbing state");
    BetaEntry entry;
    entry.in_d.assign(S * A, false);
    entry.d_cutoff = -kInf;
    entry.alternative_cutoff = -kInf;
    double worst = 0.0;
    for (std::size_t st = 0; st < S; ++st) {
        if (st == absorbing_state) continue;
        for (std::size_t act = 0; act < A; ++act) {
            entry.in_d[st * A + act] = true;
            ++entry.d_size;
            const double xb = behavior_x(st, act);
            const double rho = behavior_rho(st, act);
            const double term1 = xb > 0.0 ? scale / xb : kInf;
            const double term2 = rho > 0.0 ? 6.0 / (gamma * rho) * log_paths : kInf;
            if (!std::isfinite(term1) || !std::isfinite(term2)) entry.unreachable = true;
            const double need = std::max(term1, term2);
            if (!entry.argmax || need > worst) {
                worst = need;
                entry.argmax = PairRef{st, act};
                entry.term1 = term1;
                entry.term2 = term2;
            }
        }
    }
    entry.required_paths = entry.d_size == 0 ? 0.0 : ceil_or_inf(worst);
    report.required_paths = entry.required_paths;
    report.argmax = entry.argmax;
    report.per_beta.push_back(std::move(entry));
    return report;
}

double df_mse_bound(double p, double n) {
    if (!(p > 0.5 && p <= 1.0)) throw std::invalid_argument("df_mse_bound: p must lie in (1/2, 1]");
    if (!(n >= 1.0)) throw std::invalid_argument("df_mse_bound: n must be at least 1");
    if (p == 1.0) return 0.0;
    const double root = std::sqrt(n);
    const double variance_term = n * (1.0 - p) / ((n + root) * (n + root));
    const double flip_term = std::exp(-(2.0 * p - 1.0) * (2.0 * p - 1.0) * n / (12.0 * (1.0 - p)));
    return variance_term + flip_term;
}

IsLogRatioStats is_log_ratio_stats(const Policy& target, const Policy& behavior, double gamma,
                                   std::size_t absorbing_state, const TabularMdp* mdp) {
    require_open_unit(gamma, "gamma");
    if (target.num_states() != behavior.num_states() || target.num_actions() != behavior.num_actions()) {
        throw std::invalid_argument("is_log_ratio_stats: policy shapes differ");
    }
    IsLogRatioStats out;
    for (std::size_t s = 0; s < target.num_states(); ++s) {
        if (s == absorbing_state) continue;
        for (std::size_t a = 0; a < target.num_actions(); ++a) {
            const double pt = target(s, a);
            if (pt <= 0.0) continue;
            const double pb = behavior(s, a);
            if (pb <= 0.0) {
                std::ostringstream msg;
                msg << "is_log_ratio_stats: target puts mass on (" << s << "," << a << ") where behavior does not";
                throw UndefinedWeight(msg.str());
            }
            out.max_ratio = std::max(out.max_ratio, pt / pb);
        }
    }
    const double log_ratio = std::log(out.max_ratio);
    out.kl_bound = log_ratio / (1.0 - gamma);
    out.std_bound = std::sqrt(2.0) * log_ratio / (1.0 - gamma);
    if (mdp) {
        const auto x = exact_occupancy(*mdp, target);
        double kl = 0.0;
        for (std::size_t s = 0; s < target.num_states(); ++s) {
            if (s == absorbing_state) continue;
            for (std::size_t a = 0; a < target.num_actions(); ++a) {
                const double pt = target(s, a);
                if (pt > 0.0) kl += x(s, a) * std::log(pt / behavior(s, a));
            }
        }
        out.exact_kl = kl;
    }
    return out;
}

IsSampleBound is_sample_bound(double kl_bound, double std_bound, double c) {
    if (!(c >= 0.0)) throw std::invalid_argument("is_sample_bound: c must be nonnegative");
    IsSampleBound out;
    out.exponent = kl_bound + c * std_bound;
    out.paths = std::exp(out.exponent);
    out.overflow = !std::isfinite(out.paths);
    return out;
}

double empirical_bernstein_lower(std::span<const double> samples, double range, double delta) {
    require_open_unit(delta, "delta");
    const std::size_t n = samples.size();
    if (n < 2 || !(range > 0.0)) return 0.0;
    const double nd = static_cast<double>(n);
    const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / nd;
    double ss = 0.0;
    for (double v : samples) ss += (v - mean) * (v - mean);
    const double var = ss / (nd - 1.0);
    const double log_term = std::log(2.0 / delta);
    const double lower = mean - std::sqrt(2.0 * var * log_term / nd) - 7.0 * range * log_term / (3.0 * (nd - 1.0));
    return std::max(0.0, lower);
}

double smallest_certified_epsilon(BoundQuery query, double num_paths) {
    const double horizon = 1.0 / (1.0 - query.gamma);
    auto feasible = [&](double eps) {
        query.epsilon = eps;
        return theorem1_path_bound(query).required_paths <= num_paths;
    };
    if (!feasible(horizon)) return kInf;
    double hi = horizon;
    double lo = horizon * 1e-9;
    if (feasible(lo)) return lo;
    while (hi / lo > 1.0 + 1e-9) {
        const double mid = std::sqrt(lo * hi);
        if (feasible(mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    return hi;
}

Certificate accuracy_certificate(std::span<const SamplePath> dataset, const ModelFrame& frame, const Policy& target,
                                 const Policy& behavior, double delta, std::vector<double> beta_grid,
                                 EmpiricalBernsteinOptions options) {
    require_open_unit(delta, "delta");
    const std::size_t S = frame.num_states, A = frame.num_actions;
    for (const Policy* p : {&target, &behavior}) {
        if (p->num_states() != S || p->num_actions() != A) {
            throw std::invalid_argument("accuracy_certificate: policy shape does not match the model frame");
        }
    }
    const double pairs = static_cast<double>(S * A);
    Certificate cert;
    cert.delta = delta;
    cert.num_paths = dataset.size();
    cert.radii = SaTable(S, A);
    cert.target_x_upper = SaTable(S, A);
    cert.behavior_x_lower = SaTable(S, A);
    cert.behavior_rho_lower = SaTable(S, A);

    // Confidence radii, delta/3 shared over the pairs.
    const auto counts = counts_for(frame, dataset);
    const auto model = estimate_model(frame, counts, ProjectionMode::renormalized);
    const double radius_delta = delta / (3.0 * pairs);
    for (std::size_t s = 0; s < S; ++s) {
        if (s == frame.absorbing_state) continue;
        for (std::size_t a = 0; a < A; ++a) {
            cert.radii(s, a) = lemma2_radius_from_count(S, static_cast<double>(counts.transient_total(s, a)),
                                                        radius_delta, frame.gamma);
        }
    }
    cert.target_x_upper = robust_occupancy_upper(model.mdp, target, cert.radii);

    // Behavior statistics from per-path visit counts; delta/3 split between
    // the occupancy and first-visit bounds of every pair.
    const double stat_delta = delta / (6.0 * pairs);
    std::vector<std::vector<double>> visits(S * A, std::vector<double>(dataset.size(), 0.0));
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        for (const auto& step : dataset[i].steps) visits[step.state * A + step.action][i] += 1.0;
    }
    std::vector<double> seen(dataset.size());
    for (std::size_t s = 0; s < S; ++s) {
        if (s == frame.absorbing_state) continue;
        for (std::size_t a = 0; a < A; ++a) {
            const auto& y = visits[s * A + a];
            const double max_visits = y.empty() ? 0.0 : *std::max_element(y.begin(), y.end());
            cert.behavior_x_lower(s, a) =
                empirical_bernstein_lower(y, options.range_multiplier * max_visits, stat_delta);
            for (std::size_t i = 0; i < y.size(); ++i) seen[i] = y[i] > 0.0 ? 1.0 : 0.0;
            cert.behavior_rho_lower(s, a) = empirical_bernstein_lower(seen, 1.0, stat_delta);
        }
    }
    cert.notes.push_back("behavior occupancy range taken as " + std::to_string(options.range_multiplier) +
                         " x the largest per-path visit count");

    BoundQuery query;
    query.S = S;
    query.A = A;
    query.gamma = frame.gamma;
    query.delta = delta / 3.0;
    query.beta_grid = std::move(beta_grid);
    query.absorbing_state = frame.absorbing_state;
    query.target_x = cert.target_x_upper;
    query.behavior_x = cert.behavior_x_lower;
    query.behavior_rho = cert.behavior_rho_lower;

    cert.epsilon = smallest_certified_epsilon(query, static_cast<double>(dataset.size()));
    query.epsilon = std::isfinite(cert.epsilon) ? cert.epsilon : 1.0 / (1.0 - frame.gamma);
    cert.report = theorem1_path_bound(query);
    if (!std::isfinite(cert.epsilon)) cert.notes.push_back("vacuous: no epsilon below 1/(1-gamma) is certified");
    return cert;
}

}  // namespace offrl
