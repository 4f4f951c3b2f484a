#pragma once

#include <Eigen/Dense>

#include <vector>

#include "offrl/mdp.hpp"

namespace offrl::detail {

/// Solves a * x = b by LU with partial pivoting. Throws SolverError when the
/// residual exceeds 1e-10 relative to max(1, |x|_inf).
Eigen::VectorXd solve_checked(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, const char* what);

/// Maps non-absorbing states to contiguous indices. `index[absorbing]` is npos.
struct TransientIndex {
    std::vector<std::size_t> states;  // compact -> full
    std::vector<std::size_t> index;   // full -> compact
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    explicit TransientIndex(const TabularMdp& mdp);
    std::size_t size() const noexcept { return states.size(); }
};

}  // namespace offrl::detail
