#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "offrl/mdp.hpp"
#include "offrl/ope.hpp"

namespace offrl {

// All logarithms are natural. S counts the absorbing state. Path and sample
// counts are returned as doubles so that unreachable requirements can be +inf.

/// Value-gap bound alpha (SA)^beta / (1 - gamma)^(2 - beta) for per-pair L1
/// errors of at most alpha / x(s,a)^beta.
double lemma1_gap(double alpha, double beta, std::size_t S, std::size_t A, double gamma);

/// Non-absorbing samples from a pair sufficient for an L1 error of at most
/// gamma * eps: ceil(40 S / eps^2 * ln(1/eps) * ln(5 / (3 delta))).
/// Throws std::invalid_argument unless 0 < eps < 1 and 0 < delta < 1.
double lemma2_threshold(std::size_t S, double epsilon_prime, double delta_prime);

/// Anytime L1 radius gamma * sqrt((2/mu)(2 ln mu + ln(2^S 5 / (3 delta)))) for
/// a pair with mu non-absorbing samples; 2 gamma (vacuous) when mu = 0.
/// Clipped to 2 gamma.
double lemma2_radius_from_count(std::size_t S, double count, double delta_prime, double gamma);

/// Paths sufficient for at least n_prime of them to contain a non-absorbing
/// sample from a pair: ceil(6 / (gamma rho) * max(n_prime, ln(1/delta))).
/// +inf when rho = 0.
double lemma3_path_count(double gamma, double rho_b, double n_prime, double delta_prime);

/// Paths-with-sample sufficient for at least k non-absorbing samples:
/// ceil(max(8 k (1 - lambda), ln(1/delta))). Throws unless 0 <= lambda < 1.
double lemma4_path_count(double k, double lambda_b, double delta_prime);

struct BoundQuery {
    std::size_t S = 0;
    std::size_t A = 0;
    double gamma = 0.0;
    double epsilon = 0.0;
    double delta = 0.0;
    std::vector<double> beta_grid = default_beta_grid();
    std::size_t absorbing_state = 0;
    SaTable target_x;    // occupancy (or an upper bound) of the target policy
    SaTable behavior_x;  // occupancy (or a lower bound) of the behavior policy
    SaTable behavior_rho;

    static std::vector<double> default_beta_grid();
    /// Fills sizes and statistics from exact occupancy computations.
    static BoundQuery from_policies(const TabularMdp& mdp, const Policy& target, const Policy& behavior,
                                    double epsilon, double delta);
};

struct PairRef {
    std::size_t state = 0;
    std::size_t action = 0;
};

struct BetaEntry {
    double beta = 0.0;
    double required_paths = 0.0;        // 0 when D is empty
    double d_cutoff = 0.0;              // membership threshold on target occupancy
    double alternative_cutoff = 0.0;    // cutoff with exponent (1 - beta) / beta
    std::vector<bool> in_d;             // mask over S x A (row-major)
    std::size_t d_size = 0;
    std::optional<PairRef> argmax;
    double term1 = 0.0;                 // at the arg-max pair
    double term2 = 0.0;
    double samples_per_pair = 0.0;      // n_{s,a} at the arg-max pair
    bool unreachable = false;           // a pair in D has zero behavior occupancy or rho
};

struct BoundReport {
    std::string formula;                // which bound produced the report
    double required_paths = 0.0;        // min over beta (ceil); +inf when unreachable
    double best_beta = 0.0;
    std::optional<PairRef> argmax;
    std::vector<BetaEntry> per_beta;
    bool log_floor_applied = false;
    std::vector<std::string> notes;
};

/// Path count sufficient for |V - V_hat| <= epsilon with probability
/// 1 - delta, with the explicit constants of the proof:
///   max over D of max(1920 S^(b+1) A^b gamma / ((1-gamma)^(4-2b) eps^2)
///                     * x_t^(2b) / x_b * ln(gamma S A / ((1-gamma)^3 eps))
///                     * ln(5 S A / delta),
///                   6 / (gamma rho_b) * ln(3 S A / delta)),
/// minimized over b in the beta grid. b = 0 takes D as all non-absorbing pairs.
/// The first logarithm is floored at 1.
BoundReport theorem1_path_bound(const BoundQuery& query);

/// Off-policy optimization counterpart (b = 0, constants 7680, ln(10SA/delta)
/// and ln(6SA/delta)) over all non-absorbing pairs.
BoundReport corollary1_path_bound(std::size_t S, std::size_t A, double gamma, double epsilon, double delta,
                                  const SaTable& behavior_x, const SaTable& behavior_rho,
                                  std::size_t absorbing_state);

/// MSE bound for the favored coordinate of the deterministic-favored estimate
/// with p > 1/2 and N samples: N(1-p)/(N+sqrt N)^2 + exp(-(2p-1)^2 N / (12(1-p))).
double df_mse_bound(double p, double n);

struct IsLogRatioStats {
    double kl_bound = 0.0;
    double std_bound = 0.0;
    double max_ratio = 1.0;
    std::optional<double> exact_kl;
};

/// Upper bounds on the mean and standard deviation of the path log-likelihood
/// ratio. With `mdp` given, also the exact KL sum x_t(s,a) ln(pi_t / pi_b).
IsLogRatioStats is_log_ratio_stats(const Policy& target, const Policy& behavior, double gamma,
                                   std::size_t absorbing_state, const TabularMdp* mdp = nullptr);

struct IsSampleBound {
    double paths = 0.0;       // exp(exponent), +inf on overflow
    double exponent = 0.0;
    bool overflow = false;
};

/// exp(kl_bound + c * std_bound).
IsSampleBound is_sample_bound(double kl_bound, double std_bound, double c = 1.0);

struct EmpiricalBernsteinOptions {
    /// Range used in the bound, as a multiple of the largest observed value.
    double range_multiplier = 2.0;
};

/// One-sided empirical Bernstein lower confidence bound on the mean of i.i.d.
/// samples with the given range, at confidence 1 - delta. Floored at 0.
double empirical_bernstein_lower(std::span<const double> samples, double range, double delta);

struct Certificate {
    double epsilon = 0.0;              // +inf when the data cannot certify anything below 1/(1-gamma)
    double delta = 0.0;
    std::size_t num_paths = 0;
    SaTable radii;
    SaTable target_x_upper;
    SaTable behavior_x_lower;
    SaTable behavior_rho_lower;
    BoundReport report;                // bound evaluated at the certified epsilon
    std::vector<std::string> notes;
};

/// Smallest epsilon in (0, 1/(1-gamma)] whose path bound is at most
/// num_paths, found by bisection on a log scale; +inf when none is.
double smallest_certified_epsilon(BoundQuery query, double num_paths);

/// Data-driven accuracy level for the model-based estimate, splitting delta in
/// thirds between the confidence radii, the behavior-occupancy lower bounds
/// and the path-count bound.
Certificate accuracy_certificate(std::span<const SamplePath> dataset, const ModelFrame& frame, const Policy& target,
                                 const Policy& behavior, double delta,
                                 std::vector<double> beta_grid = BoundQuery::default_beta_grid(),
                                 EmpiricalBernsteinOptions options = {});

}  // namespace offrl
