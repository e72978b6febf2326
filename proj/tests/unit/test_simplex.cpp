#include <cmath>
#include <limits>

#include "doctest.h"

#include "choiceset/errors.hpp"
#include "choiceset/rng.hpp"
#include "choiceset/simplex.hpp"

using namespace choiceset;

namespace {

Eigen::MatrixXd random_psd(SplitMix64& rng, int n, int rank) {
  Eigen::MatrixXd a(rank, n);
  for (int i = 0; i < rank; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = rng.uniform();
  return a.transpose() * a;
}

// Global minimum over the simplex by solving the KKT system on every support
// and keeping feasible points.
double kkt_oracle(const Eigen::MatrixXd& H, const Eigen::VectorXd& b, int max_size) {
  const int n = static_cast<int>(b.size());
  double best = std::numeric_limits<double>::infinity();
  for (unsigned s = 1; s < (1u << n); ++s) {
    std::vector<int> idx;
    for (int j = 0; j < n; ++j)
      if ((s >> j) & 1u) idx.push_back(j);
    if (static_cast<int>(idx.size()) > max_size) continue;
    const int k = static_cast<int>(idx.size());
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(k + 1, k + 1);
    Eigen::VectorXd r(k + 1);
    for (int a = 0; a < k; ++a) {
      for (int c = 0; c < k; ++c) K(a, c) = 2.0 * H(idx[a], idx[c]);
      K(a, k) = K(k, a) = 1.0;
      r(a) = 2.0 * b(idx[a]);
    }
    r(k) = 1.0;
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    if (!lu.isInvertible()) continue;
    const Eigen::VectorXd sol = lu.solve(r);
    if (sol.head(k).minCoeff() < -1e-12) continue;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    for (int a = 0; a < k; ++a) x(idx[a]) = sol(a);
    best = std::min(best, x.dot(H * x) - 2.0 * b.dot(x));
  }
  return best;
}

}  // namespace

TEST_CASE("simplex projection") {
  const Eigen::Vector3d inside(0.2, 0.3, 0.5);
  CHECK((project_simplex(inside) - inside).norm() < 1e-15);
  const auto p = project_simplex(Eigen::Vector3d(1.0, 1.0, -5.0));
  CHECK(p.isApprox(Eigen::Vector3d(0.5, 0.5, 0.0)));
  const auto q = project_simplex(Eigen::Vector3d(3.0, 0.0, 0.0));
  CHECK(q.isApprox(Eigen::Vector3d(1.0, 0.0, 0.0)));
  const auto masked = project_simplex(Eigen::Vector3d(0.9, 0.05, 0.05), {false, true, true});
  CHECK(masked(0) == 0.0);
  CHECK(masked.sum() == doctest::Approx(1.0));

  SplitMix64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd v(6);
    for (int i = 0; i < 6; ++i) v(i) = 4.0 * rng.uniform() - 2.0;
    const auto x = project_simplex(v);
    CHECK(x.minCoeff() >= 0.0);
    CHECK(x.sum() == doctest::Approx(1.0).epsilon(1e-14));
    // Optimality: v - x = tau on the support, <= tau off it.
    double tau = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < 6; ++i)
      if (x(i) > 0) tau = v(i) - x(i);
    for (int i = 0; i < 6; ++i) {
      if (x(i) > 0) CHECK(v(i) - x(i) == doctest::Approx(tau).epsilon(1e-12));
      else CHECK(v(i) <= tau + 1e-12);
    }
    CHECK((project_simplex(x) - x).norm() < 1e-14);
  }
}

TEST_CASE("simplex QP matches the KKT oracle") {
  SplitMix64 rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 2 + trial % 5;
    const Eigen::MatrixXd H = random_psd(rng, n, 1 + trial % n) + 1e-9 * Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd b(n);
    for (int j = 0; j < n; ++j) b(j) = rng.uniform();
    const auto sol = solve_simplex_qp(H, b);
    CHECK(sol.x.minCoeff() >= 0.0);
    CHECK(sol.x.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sol.value == doctest::Approx(sol.x.dot(H * sol.x) - 2.0 * b.dot(sol.x)).epsilon(1e-12));
    CHECK(sol.value <= kkt_oracle(H, b, n) + 1e-10);
  }
}

TEST_CASE("simplex QP respects the allowed set") {
  const Eigen::Matrix3d H = Eigen::Matrix3d::Identity();
  const Eigen::Vector3d b(1.0, 0.0, 0.0);
  const auto sol = solve_simplex_qp(H, b, {1, 2});
  CHECK(sol.x(0) == 0.0);
  CHECK(sol.x(1) == doctest::Approx(0.5));
  CHECK(sol.x(2) == doctest::Approx(0.5));
}

TEST_CASE("best subset exhaustive and branch-and-bound agree with enumeration") {
  SplitMix64 rng(29);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 4 + trial % 5;
    const int k = 1 + trial % 3;
    const Eigen::MatrixXd H = random_psd(rng, n, n) + 1e-6 * Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd b(n);
    for (int j = 0; j < n; ++j) b(j) = rng.uniform();
    BestSubsetOptions ex{MioMethod::exhaustive};
    BestSubsetOptions bb{MioMethod::branch_and_bound};
    const auto a = best_subset_qp(H, b, k, ex);
    const auto c = best_subset_qp(H, b, k, bb);
    const double oracle = kkt_oracle(H, b, k);
    CHECK(a.optimal);
    CHECK(c.optimal);
    CHECK(static_cast<int>(a.support.size()) <= k);
    CHECK(static_cast<int>(c.support.size()) <= k);
    CHECK(a.value == doctest::Approx(oracle).epsilon(1e-10));
    CHECK(std::abs(a.value - c.value) <= 1e-10);
  }
}

TEST_CASE("branch-and-bound node limit clears the optimality flag") {
  // The relaxed optimum spreads weight over all 12 columns, so the root must branch.
  const Eigen::MatrixXd H = Eigen::MatrixXd::Identity(12, 12);
  const Eigen::VectorXd b = Eigen::VectorXd::Constant(12, 0.1);
  BestSubsetOptions opts{MioMethod::branch_and_bound};
  opts.node_limit = 1;
  const auto sol = best_subset_qp(H, b, 3, opts);
  CHECK_FALSE(sol.optimal);
  CHECK(sol.x.sum() == doctest::Approx(1.0));
  CHECK(static_cast<int>(sol.support.size()) <= 3);
}

TEST_CASE("combination counts") {
  CHECK(binomial(31, 5) == 169911ull);
  CHECK(binomial(5, 0) == 1ull);
  CHECK(count_supports(31, 2) == 31ull + 465ull);
  CHECK(binomial(200, 100) == std::numeric_limits<unsigned long long>::max());
  CHECK_THROWS_AS(best_subset_qp(Eigen::MatrixXd::Identity(2, 2), Eigen::Vector2d(1, 1), 0), DomainError);
}
