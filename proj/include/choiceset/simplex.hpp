#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace choiceset {

/// Euclidean projection of `v` onto {x >= 0, sum x = 1, x_i = 0 where
/// allowed[i] is false}. An empty `allowed` permits every index.
Eigen::VectorXd project_simplex(const Eigen::VectorXd& v, const std::vector<bool>& allowed = {});

/// In-place column-wise projection; mask(i, j) == 0 forces entry (i, j) to 0.
void project_columns(Eigen::MatrixXd& F, const Eigen::MatrixXd* mask = nullptr);

struct SimplexQPResult {
  Eigen::VectorXd x;
  /// x^T H x - 2 b^T x (add the constant to get the residual).
  double value = 0.0;
  int iterations = 0;
};

/// Minimizes x^T H x - 2 b^T x over the probability simplex restricted to the
/// indices in `allowed` (all indices when empty), by a primal active-set
/// method. H must be symmetric positive semidefinite. `start` may hold a
/// feasible starting point.
SimplexQPResult solve_simplex_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& b,
                                 const std::vector<int>& allowed = {},
                                 const Eigen::VectorXd* start = nullptr);

enum class MioMethod { automatic, exhaustive, branch_and_bound };

struct BestSubsetOptions {
  MioMethod method = MioMethod::automatic;
  /// automatic picks exhaustive enumeration when the number of supports of
  /// size <= k is at most this.
  unsigned long long enumeration_budget = 250000;
  long long node_limit = 2000000;
};

struct SubsetQPSolution {
  std::vector<int> support;  // sorted column indices with positive weight
  Eigen::VectorXd x;
  double value = 0.0;  // x^T H x - 2 b^T x
  bool optimal = true;
  MioMethod method_used = MioMethod::exhaustive;
  long long nodes = 0;
};

/// Exact minimum of x^T H x - 2 b^T x over the simplex with at most k nonzero
/// entries. Exhaustive mode solves the equality-constrained system on every
/// affinely independent support of size <= k; branch-and-bound relaxes the
/// cardinality constraint. Sets optimal = false when the node limit is hit.
SubsetQPSolution best_subset_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& b, int k,
                                const BestSubsetOptions& opts = {});

/// Number of supports of size 1..k drawn from n columns (saturating).
unsigned long long count_supports(int n, int k);
/// C(n, k), saturating at ULLONG_MAX.
unsigned long long binomial(int n, int k);

}  // namespace choiceset
