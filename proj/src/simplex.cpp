#include "choiceset/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "choiceset/errors.hpp"

namespace choiceset {

Eigen::VectorXd project_simplex(const Eigen::VectorXd& v, const std::vector<bool>& allowed) {
  const Eigen::Index n = v.size();
  std::vector<double> u;
  u.reserve(n);
  for (Eigen::Index i = 0; i < n; ++i)
    if (allowed.empty() || allowed[i]) u.push_back(v(i));
  if (u.empty()) throw DomainError("projection onto an empty simplex");
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0;
  double theta = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    cumsum += u[k];
    const double t = (cumsum - 1.0) / static_cast<double>(k + 1);
    if (u[k] - t > 0.0) theta = t;
  }
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i)
    if (allowed.empty() || allowed[i]) x(i) = std::max(v(i) - theta, 0.0);
  return x;
}

void project_columns(Eigen::MatrixXd& F, const Eigen::MatrixXd* mask) {
  std::vector<bool> allowed;
  for (Eigen::Index j = 0; j < F.cols(); ++j) {
    if (mask) {
      allowed.assign(F.rows(), false);
      for (Eigen::Index i = 0; i < F.rows(); ++i) allowed[i] = (*mask)(i, j) != 0.0;
    }
    F.col(j) = project_simplex(F.col(j), allowed);
  }
}

namespace {

// Solves min x^T H_SS x - 2 b_S^T x s.t. sum x = 1. Returns false when the
// reduced Hessian is numerically singular even after a tiny ridge.
bool solve_equality_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& b, const std::vector<int>& S,
                       Eigen::VectorXd& xs, double& nu) {
  const int s = static_cast<int>(S.size());
  Eigen::MatrixXd hs(s, s);
  Eigen::VectorXd bs(s);
  for (int i = 0; i < s; ++i) {
    bs(i) = b(S[i]);
    for (int j = 0; j < s; ++j) hs(i, j) = H(S[i], S[j]);
  }
  Eigen::LLT<Eigen::MatrixXd> llt(hs);
  const double scale = std::max(hs.diagonal().maxCoeff(), std::numeric_limits<double>::min());
  bool ok = llt.info() == Eigen::Success &&
            llt.matrixL().toDenseMatrix().diagonal().minCoeff() > 1e-9 * std::sqrt(scale);
  if (!ok) {
    hs.diagonal().array() += 1e-12 * scale;
    llt.compute(hs);
    if (llt.info() != Eigen::Success) return false;
  }
  const Eigen::VectorXd u = llt.solve(bs);
  const Eigen::VectorXd w = llt.solve(Eigen::VectorXd::Ones(s));
  const double denom = w.sum();
  if (!(std::abs(denom) > 0.0)) return false;
  nu = (u.sum() - 1.0) / denom;
  xs = u - nu * w;
  return true;
}

}  // namespace

SimplexQPResult solve_simplex_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& b,
                                 const std::vector<int>& allowed_in, const Eigen::VectorXd* start) {
  const int n = static_cast<int>(b.size());
  std::vector<int> allowed = allowed_in;
  if (allowed.empty()) {
    allowed.resize(n);
    std::iota(allowed.begin(), allowed.end(), 0);
  }
  if (allowed.empty()) throw DomainError("simplex QP over no variables");
  const double scale = std::max({H.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), 1e-300});
  const double dual_tol = 1e-13 * scale;

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  std::vector<int> S;
  if (start) {
    double mass = 0.0;
    for (int i : allowed)
      if ((*start)(i) > 0.0) {
        x(i) = (*start)(i);
        mass += x(i);
      }
    if (mass > 0.0) {
      x /= mass;
      for (int i : allowed)
        if (x(i) > 0.0) S.push_back(i);
    }
  }
  if (S.empty()) {
    int best = allowed[0];
    for (int i : allowed)
      if (H(i, i) - 2.0 * b(i) < H(best, best) - 2.0 * b(best)) best = i;
    x(best) = 1.0;
    S = {best};
  }

  SimplexQPResult res;
  const int max_iter = 20 * n + 50;
  for (int it = 0; it < max_iter; ++it) {
    res.iterations = it + 1;
    Eigen::VectorXd xs;
    double nu = 0.0;
    if (!solve_equality_qp(H, b, S, xs, nu)) break;
    if (xs.minCoeff() >= 0.0) {
      x.setZero();
      for (std::size_t i = 0; i < S.size(); ++i) x(S[i]) = xs(i);
      // Multipliers of the inactive bounds: g_j + nu with g = H x - b.
      const Eigen::VectorXd g = H * x - b;
      int enter = -1;
      double worst = -dual_tol;
      for (int j : allowed) {
        if (std::find(S.begin(), S.end(), j) != S.end()) continue;
        const double lam = g(j) + nu;
        if (lam < worst) {
          worst = lam;
          enter = j;
        }
      }
      if (enter < 0) break;
      S.push_back(enter);
      std::sort(S.begin(), S.end());
      continue;
    }
    // Step from the feasible x toward xs until the first coordinate hits zero.
    double alpha = 1.0;
    for (std::size_t i = 0; i < S.size(); ++i) {
      if (xs(i) < 0.0) {
        const double xi = x(S[i]);
        alpha = std::min(alpha, xi / (xi - xs(i)));
      }
    }
    for (std::size_t i = 0; i < S.size(); ++i) x(S[i]) += alpha * (xs(i) - x(S[i]));
    std::vector<int> kept;
    for (int i : S) {
      if (x(i) > 1e-15) {
        kept.push_back(i);
      } else {
        x(i) = 0.0;
      }
    }
    if (kept.empty()) {
      // Degenerate step; fall back to the best vertex of S.
      int best = S[0];
      for (int i : S)
        if (H(i, i) - 2.0 * b(i) < H(best, best) - 2.0 * b(best)) best = i;
      kept = {best};
      x.setZero();
      x(best) = 1.0;
    }
    S = std::move(kept);
    x /= x.sum();
  }
  x = x.cwiseMax(0.0);
  x /= x.sum();
  res.x = x;
  res.value = x.dot(H * x) - 2.0 * b.dot(x);
  return res;
}

unsigned long long binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  unsigned long long r = 1;
  for (int i = 1; i <= k; ++i) {
    const unsigned long long num = static_cast<unsigned long long>(n - k + i);
    if (r > std::numeric_limits<unsigned long long>::max() / num) {
      return std::numeric_limits<unsigned long long>::max();
    }
    r = r * num / static_cast<unsigned long long>(i);
  }
  return r;
}

unsigned long long count_supports(int n, int k) {
  unsigned long long total = 0;
  for (int s = 1; s <= std::min(n, k); ++s) {
    const auto c = binomial(n, s);
    if (c > std::numeric_limits<unsigned long long>::max() - total) {
      return std::numeric_limits<unsigned long long>::max();
    }
    total += c;
  }
  return total;
}

namespace {

// Depth-first enumeration of supports with an incrementally grown Cholesky
// factor. A support whose new pivot vanishes is affinely dependent (every
// column is a pmf, so H d = 0 forces 1^T d = 0); its optimum lives on a
// smaller support and all supersets are skipped.
class SupportEnumerator {
 public:
  SupportEnumerator(const Eigen::MatrixXd& H, const Eigen::VectorXd& b, int k)
      : H_(H), b_(b), k_(k), n_(static_cast<int>(b.size())), L_(Eigen::MatrixXd::Zero(k, k)),
        u_(k), w_(k) {}

  void run(SubsetQPSolution& best) {
    best_ = &best;
    best_value_ = std::numeric_limits<double>::infinity();
    descend(0, 0);
  }

 private:
  void descend(int depth, int first) {
    for (int j = first; j < n_; ++j) {
      // Extend L by column j.
      double diag = H_(j, j);
      for (int i = 0; i < depth; ++i) {
        double v = H_(support_[i], j);
        for (int q = 0; q < i; ++q) v -= L_(i, q) * L_(depth, q);
        v /= L_(i, i);
        L_(depth, i) = v;
        diag -= v * v;
      }
      if (!(diag > 1e-14 * H_(j, j))) continue;
      L_(depth, depth) = std::sqrt(diag);
      support_[depth] = j;
      // Forward solves for b and 1, reused by descendants.
      double ub = b_(j), uw = 1.0;
      for (int q = 0; q < depth; ++q) {
        ub -= L_(depth, q) * u_(q);
        uw -= L_(depth, q) * w_(q);
      }
      u_(depth) = ub / L_(depth, depth);
      w_(depth) = uw / L_(depth, depth);
      ++nodes_;
      evaluate(depth + 1);
      if (depth + 1 < k_) descend(depth + 1, j + 1);
    }
  }

  void evaluate(int s) {
    // x = H^{-1}(b - nu 1); value = b^T H^{-1} b - nu^2 1^T H^{-1} 1 - ... simplified below.
    const double bb = u_.head(s).squaredNorm();
    const double bw = u_.head(s).dot(w_.head(s));
    const double ww = w_.head(s).squaredNorm();
    const double nu = (bw - 1.0) / ww;
    // Back-substitute for x only when the value improves.
    const double value = -(bb - nu * nu * ww);
    if (std::isfinite(best_value_) && !(value < best_value_ - 1e-15 * std::abs(best_value_))) return;
    Eigen::VectorXd rhs = u_.head(s) - nu * w_.head(s);
    Eigen::VectorXd xs = L_.topLeftCorner(s, s).transpose().triangularView<Eigen::Upper>().solve(rhs);
    if (xs.minCoeff() < 0.0) return;
    best_value_ = value;
    best_->support.assign(support_.begin(), support_.begin() + s);
    best_->x = Eigen::VectorXd::Zero(n_);
    for (int i = 0; i < s; ++i) best_->x(support_[i]) = xs(i);
    best_->value = value;
  }

  const Eigen::MatrixXd& H_;
  const Eigen::VectorXd& b_;
  int k_;
  int n_;
  Eigen::MatrixXd L_;
  Eigen::VectorXd u_, w_;
  std::array<int, 64> support_{};
  SubsetQPSolution* best_ = nullptr;
  double best_value_ = 0.0;

 public:
  long long nodes_ = 0;
};

struct BnbNode {
  std::vector<int> included;
  std::vector<bool> excluded;
};

}  // namespace

SubsetQPSolution best_subset_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& b, int k,
                                const BestSubsetOptions& opts) {
  const int n = static_cast<int>(b.size());
  if (k < 1) throw DomainError("cardinality bound must be positive");
  if (n == 0) throw DomainError("best subset over an empty dictionary");
  k = std::min(k, n);
  if (k > 64) throw DomainError("cardinality bound above 64 is not supported");
  MioMethod method = opts.method;
  if (method == MioMethod::automatic) {
    method = count_supports(n, k) <= opts.enumeration_budget ? MioMethod::exhaustive
                                                             : MioMethod::branch_and_bound;
  }
  SubsetQPSolution sol;
  sol.method_used = method;

  if (method == MioMethod::exhaustive) {
    SupportEnumerator en(H, b, k);
    en.run(sol);
    sol.nodes = en.nodes_;
    if (sol.x.size() == 0) throw IdentificationError("no admissible support in the dictionary");
    sol.optimal = true;
    // Polish on the chosen support with the active-set solver.
    const auto polished = solve_simplex_qp(H, b, sol.support, &sol.x);
    if (polished.value <= sol.value) {
      sol.x = polished.x;
      sol.value = polished.value;
    }
  } else {
    // Incumbent from the top-k relaxed weights.
    const auto root = solve_simplex_qp(H, b);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int c) { return root.x(a) > root.x(c); });
    std::vector<int> top(order.begin(), order.begin() + k);
    std::sort(top.begin(), top.end());
    auto inc = solve_simplex_qp(H, b, top);
    sol.x = inc.x;
    sol.value = inc.value;
    sol.optimal = true;

    const double gap_tol = 1e-14 * std::max(1.0, std::abs(sol.value));
    std::vector<BnbNode> stack;
    stack.push_back({{}, std::vector<bool>(n, false)});
    long long nodes = 0;
    while (!stack.empty()) {
      if (nodes >= opts.node_limit) {
        sol.optimal = false;
        break;
      }
      BnbNode node = std::move(stack.back());
      stack.pop_back();
      ++nodes;
      std::vector<int> free_vars;
      for (int j = 0; j < n; ++j)
        if (!node.excluded[j]) free_vars.push_back(j);
      if (free_vars.empty()) continue;
      const bool leaf = static_cast<int>(node.included.size()) >= k;
      const auto relax = solve_simplex_qp(H, b, leaf ? node.included : free_vars);
      if (relax.value >= sol.value - gap_tol) continue;
      std::vector<int> support;
      for (int j = 0; j < n; ++j)
        if (relax.x(j) > 0.0) support.push_back(j);
      std::vector<int> merged = node.included;
      for (int j : support)
        if (std::find(merged.begin(), merged.end(), j) == merged.end()) merged.push_back(j);
      if (leaf || static_cast<int>(merged.size()) <= k) {
        sol.x = relax.x;
        sol.value = relax.value;
        continue;
      }
      // Branch on the heaviest relaxed weight not yet included.
      int branch = -1;
      for (int j : support) {
        if (std::find(node.included.begin(), node.included.end(), j) != node.included.end()) continue;
        if (branch < 0 || relax.x(j) > relax.x(branch)) branch = j;
      }
      BnbNode exclude = node;
      exclude.excluded[branch] = true;
      BnbNode include = std::move(node);
      include.included.push_back(branch);
      stack.push_back(std::move(exclude));
      stack.push_back(std::move(include));  // explored first
    }
    sol.nodes = nodes;
  }
  sol.support.clear();
  for (int j = 0; j < n; ++j)
    if (sol.x(j) > 0.0) sol.support.push_back(j);
  return sol;
}

}  // namespace choiceset
