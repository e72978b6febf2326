#include "choiceset/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "choiceset/errors.hpp"
#include "choiceset/rng.hpp"

namespace choiceset {

void FitConfig::validate(int num_alternatives) const {
  const double e = effective_eps();
  if (!(e > 0.0 && e < 1.0 / num_alternatives)) {
    throw DomainError("eps must lie in (0, 1/Y); got " + std::to_string(e));
  }
  if (starts < 1) throw DomainError("starts must be at least 1");
  if (max_iter < 1) throw DomainError("max_iter must be at least 1");
  if (!(tol >= 0.0)) throw DomainError("tol must be nonnegative");
  if (final_starts < 0) throw DomainError("final_starts must be nonnegative");
  if (!(step2_spread >= 0.0 && step2_spread < 1.0)) throw DomainError("step2_spread must lie in [0,1)");
  if (required_bits >> num_alternatives) throw DomainError("required alternative outside 1..Y");
}

double FitConfig::effective_eps() const {
  if (trim_mode == TrimMode::fixed) return eps;
  if (sample_size < 16) throw DomainError("vanishing trim needs a sample size of at least 16");
  const double n = static_cast<double>(sample_size);
  return std::log(std::log(n)) / std::sqrt(n);
}

namespace {

constexpr double kObjectiveFloor = 1e-28;

struct Entry {
  int i, j, k;
  double p;
};

// Mask of grouped outcomes allowed by a menu: every digit must be a member.
Eigen::VectorXd outcome_mask(const ChoiceSetMask& menu, int y_count, int group_size) {
  const int n = outcome_count(y_count, group_size);
  Eigen::VectorXd mask(n);
  for (int z = 0; z < n; ++z) {
    int rest = z;
    bool ok = true;
    for (int pos = 0; pos < group_size; ++pos) {
      ok = ok && menu.contains_index(rest % y_count);
      rest /= y_count;
    }
    mask(z) = ok ? 1.0 : 0.0;
  }
  return mask;
}

using Masks = std::array<Eigen::MatrixXd, 3>;

Masks menu_masks(const JointChoiceTensor& t, const std::vector<ChoiceSetMask>& menus) {
  Masks masks;
  const int d = static_cast<int>(menus.size());
  for (int m = 0; m < 3; ++m) {
    masks[m].resize(t.dim(m), d);
    for (int j = 0; j < d; ++j)
      masks[m].col(j) = outcome_mask(menus[j], t.num_alternatives(), t.grouping().group_size(m));
  }
  return masks;
}

std::vector<Eigen::MatrixXd> split_periods(const Eigen::MatrixXd& g, int y_count, int k_size) {
  std::vector<Eigen::MatrixXd> out(k_size, Eigen::MatrixXd::Zero(y_count, g.cols()));
  for (int z = 0; z < g.rows(); ++z) {
    int rest = z;
    for (int pos = k_size - 1; pos >= 0; --pos) {
      out[pos].row(rest % y_count) += g.row(z);
      rest /= y_count;
    }
  }
  return out;
}

// Grouped pmf as the product of per-period pmfs (first period most significant).
Eigen::MatrixXd join_periods(const std::vector<Eigen::MatrixXd>& per_period, int y_count) {
  const int k_size = static_cast<int>(per_period.size());
  const int n = outcome_count(y_count, k_size);
  const Eigen::Index d = per_period[0].cols();
  Eigen::MatrixXd g = Eigen::MatrixXd::Ones(n, d);
  for (int z = 0; z < n; ++z) {
    int rest = z;
    for (int pos = k_size - 1; pos >= 0; --pos) {
      g.row(z) = g.row(z).cwiseProduct(per_period[pos].row(rest % y_count));
      rest /= y_count;
    }
  }
  return g;
}

class CpProblem {
 public:
  explicit CpProblem(const JointChoiceTensor& t) : tensor_(t), dims_(t.dims()) {
    for (int i = 0; i < dims_[0]; ++i)
      for (int j = 0; j < dims_[1]; ++j)
        for (int k = 0; k < dims_[2]; ++k) {
          const double p = t(i, j, k);
          norm2_ += p * p;
          if (p != 0.0) entries_.push_back({i, j, k, p});
        }
  }

  const JointChoiceTensor& tensor() const { return tensor_; }
  int dim(int m) const { return dims_[m]; }
  double norm2() const { return norm2_; }

  double residual(const CpFactors& f) const {
    const auto& a = f.F[0];
    const auto& b = f.F[1];
    const auto& c = f.F[2];
    const Eigen::Index d = f.M.size();
    double total = 0.0;
    Eigen::VectorXd ab(d);
    for (int i = 0; i < dims_[0]; ++i)
      for (int j = 0; j < dims_[1]; ++j) {
        ab = a.row(i).transpose().cwiseProduct(b.row(j).transpose()).cwiseProduct(f.M);
        for (int k = 0; k < dims_[2]; ++k) {
          const double diff = tensor_(i, j, k) - c.row(k).dot(ab);
          total += diff * diff;
        }
      }
    return total;
  }

  double kl(const CpFactors& f) const {
    double total = 0.0;
    for (const auto& e : entries_) {
      double x = 0.0;
      for (Eigen::Index r = 0; r < f.M.size(); ++r)
        x += f.M(r) * f.F[0](e.i, r) * f.F[1](e.j, r) * f.F[2](e.k, r);
      if (!(x > 0.0)) return std::numeric_limits<double>::infinity();
      total += e.p * std::log(e.p / x);
    }
    return total;
  }

  // B(z, r) = sum over the other modes of P * F_a * F_b (no weights).
  Eigen::MatrixXd mttkrp(const CpFactors& f, int mode) const {
    const Eigen::Index d = f.M.size();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dims_[mode], d);
    for (const auto& e : entries_) {
      const int idx[3] = {e.i, e.j, e.k};
      const int a = mode == 0 ? 1 : 0;
      const int b = mode == 2 ? 1 : 2;
      for (Eigen::Index r = 0; r < d; ++r) {
        out(idx[mode], r) += e.p * f.F[a](idx[a], r) * f.F[b](idx[b], r);
      }
    }
    return out;
  }

  const std::vector<Entry>& entries() const { return entries_; }

 private:
  const JointChoiceTensor& tensor_;
  std::array<int, 3> dims_;
  double norm2_ = 0.0;
  std::vector<Entry> entries_;
};

Eigen::MatrixXd gram(const Eigen::MatrixXd& F) { return F.transpose() * F; }

// One projected-gradient (FISTA with restart) solve of the mode-m block.
void update_factor(const CpProblem& prob, CpFactors& f, int mode, const Eigen::MatrixXd* mask) {
  const int a = mode == 0 ? 1 : 0;
  const int b = mode == 2 ? 1 : 2;
  const Eigen::MatrixXd G =
      gram(f.F[a]).cwiseProduct(gram(f.F[b])).cwiseProduct(f.M * f.M.transpose());
  Eigen::MatrixXd B = prob.mttkrp(f, mode);
  B = B * f.M.asDiagonal();
  const double L = 2.0 * G.cwiseAbs().rowwise().sum().maxCoeff();
  if (!(L > 0.0)) return;
  // Objective change from x to x + delta, computed without cancellation.
  auto change_in = [&](const Eigen::MatrixXd& x, const Eigen::MatrixXd& delta) {
    return (delta * G).cwiseProduct(delta).sum() + 2.0 * delta.cwiseProduct(x * G - B).sum();
  };
  Eigen::MatrixXd x = f.F[mode];
  Eigen::MatrixXd y = x;
  double t = 1.0;
  bool restarted = false;
  for (int it = 0; it < 60; ++it) {
    Eigen::MatrixXd next = y - (2.0 / L) * (y * G - B);
    project_columns(next, mask);
    const Eigen::MatrixXd delta = next - x;
    if (change_in(x, delta) > 0.0) {
      if (restarted) break;
      restarted = true;
      y = x;
      t = 1.0;
      continue;
    }
    restarted = false;
    const double step = delta.cwiseAbs().maxCoeff();
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = next + ((t - 1.0) / t_next) * delta;
    x = std::move(next);
    t = t_next;
    if (step < 1e-15) break;
  }
  f.F[mode] = std::move(x);
}

void update_weights(const CpProblem& prob, CpFactors& f) {
  const Eigen::MatrixXd H = gram(f.F[0]).cwiseProduct(gram(f.F[1])).cwiseProduct(gram(f.F[2]));
  const Eigen::VectorXd b = prob.mttkrp(f, 0).cwiseProduct(f.F[0]).colwise().sum().transpose();
  const auto sol = solve_simplex_qp(H, b, {}, &f.M);
  f.M = sol.x;
}

struct TiedState {
  Eigen::MatrixXd previous;
  double momentum = 1.0;
  double step = 0.0;
};

Eigen::MatrixXd tied_gradient(const CpProblem& prob, const CpFactors& f) {
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(f.F[0].rows(), f.F[0].cols());
  for (int mode = 0; mode < 3; ++mode) {
    const int a = mode == 0 ? 1 : 0;
    const int b = mode == 2 ? 1 : 2;
    const Eigen::MatrixXd G =
        gram(f.F[a]).cwiseProduct(gram(f.F[b])).cwiseProduct(f.M * f.M.transpose());
    const Eigen::MatrixXd B = prob.mttkrp(f, mode) * f.M.asDiagonal();
    grad += 2.0 * (f.F[mode] * G - B);
  }
  return grad;
}

// Accelerated projected gradient on the shared F (all modes tied) with
// backtracking; restarts from the current point whenever the objective rises.
void update_tied(const CpProblem& prob, CpFactors& f, const Eigen::MatrixXd* mask, TiedState& st) {
  const double current = prob.residual(f);
  if (st.previous.size() == 0) st.previous = f.F[0];
  for (int attempt = 0; attempt < 2; ++attempt) {
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * st.momentum * st.momentum));
    Eigen::MatrixXd y = f.F[0] + ((st.momentum - 1.0) / t_next) * (f.F[0] - st.previous);
    project_columns(y, mask);
    CpFactors at_y = f;
    at_y.F = {y, y, y};
    const double f_y = prob.residual(at_y);
    const Eigen::MatrixXd grad = tied_gradient(prob, at_y);
    for (int tries = 0; tries < 50; ++tries) {
      Eigen::MatrixXd next = y - st.step * grad;
      project_columns(next, mask);
      CpFactors trial = f;
      trial.F = {next, next, next};
      const double f_next = prob.residual(trial);
      const Eigen::MatrixXd diff = next - y;
      if (f_next <= f_y + grad.cwiseProduct(diff).sum() + diff.squaredNorm() / (2.0 * st.step) + 1e-300) {
        if (f_next <= current) {
          st.previous = f.F[0];
          st.momentum = t_next;
          f = std::move(trial);
          st.step *= 1.2;
          return;
        }
        break;
      }
      st.step *= 0.5;
    }
    // Objective rose or no step was accepted: drop the momentum and retry.
    st.previous = f.F[0];
    st.momentum = 1.0;
  }
}

void em_sweep(const CpProblem& prob, CpFactors& f) {
  const Eigen::Index d = f.M.size();
  std::array<Eigen::MatrixXd, 3> acc;
  for (int m = 0; m < 3; ++m) acc[m] = Eigen::MatrixXd::Zero(prob.dim(m), d);
  Eigen::VectorXd macc = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd resp(d);
  for (const auto& e : prob.entries()) {
    for (Eigen::Index r = 0; r < d; ++r)
      resp(r) = f.M(r) * f.F[0](e.i, r) * f.F[1](e.j, r) * f.F[2](e.k, r);
    const double x = resp.sum();
    if (!(x > 0.0)) continue;
    resp *= e.p / x;
    macc += resp;
    acc[0].row(e.i) += resp.transpose();
    acc[1].row(e.j) += resp.transpose();
    acc[2].row(e.k) += resp.transpose();
  }
  for (Eigen::Index r = 0; r < d; ++r) {
    if (!(macc(r) > 0.0)) continue;
    for (int m = 0; m < 3; ++m) f.F[m].col(r) = acc[m].col(r) / macc(r);
  }
  f.M = macc / macc.sum();
}

double objective_of(const CpProblem& prob, const CpFactors& f, Objective obj) {
  return obj == Objective::euclidean ? prob.residual(f) : prob.kl(f);
}

FitTrace fit_cp(const CpProblem& prob, CpFactors& f, const Masks* masks, const FitConfig& cfg,
                bool tied) {
  FitTrace trace;
  double prev = objective_of(prob, f, cfg.objective);
  trace.history.push_back(prev);
  TiedState tied_state;
  if (tied) tied_state.step = 1.0 / (6.0 * std::max(f.M.maxCoeff(), 1e-12));
  for (int it = 0; it < cfg.max_iter; ++it) {
    if (cfg.objective == Objective::kullback_leibler) {
      em_sweep(prob, f);
      if (tied) {
        const Eigen::MatrixXd avg = (f.F[0] + f.F[1] + f.F[2]) / 3.0;
        f.F = {avg, avg, avg};
      }
    } else if (tied) {
      update_tied(prob, f, masks ? &(*masks)[0] : nullptr, tied_state);
      update_weights(prob, f);
    } else {
      for (int mode = 0; mode < 3; ++mode) update_factor(prob, f, mode, masks ? &(*masks)[mode] : nullptr);
      update_weights(prob, f);
    }
    const double obj = objective_of(prob, f, cfg.objective);
    trace.history.push_back(obj);
    trace.iterations = it + 1;
    if (obj <= kObjectiveFloor || prev - obj <= cfg.tol * std::abs(prev)) {
      trace.converged = true;
      prev = std::min(prev, obj);
      break;
    }
    prev = obj;
  }
  trace.objective = objective_of(prob, f, cfg.objective);
  return trace;
}

CpFactors random_factors(const CpProblem& prob, int d, const Masks* masks, std::uint64_t seed,
                         bool tied) {
  SplitMix64 rng(seed);
  CpFactors f;
  for (int m = 0; m < 3; ++m) {
    f.F[m].resize(prob.dim(m), d);
    for (int j = 0; j < d; ++j) {
      double sum = 0.0;
      for (int z = 0; z < prob.dim(m); ++z) {
        const bool allowed = !masks || (*masks)[m](z, j) != 0.0;
        const double v = allowed ? -std::log(1.0 - rng.uniform()) + 1e-12 : 0.0;
        f.F[m](z, j) = v;
        sum += v;
      }
      f.F[m].col(j) /= sum;
    }
  }
  if (tied) f.F[1] = f.F[2] = f.F[0];
  f.M.resize(d);
  for (int j = 0; j < d; ++j) f.M(j) = -std::log(1.0 - rng.uniform()) + 1e-12;
  f.M /= f.M.sum();
  return f;
}

bool tie_possible(const JointChoiceTensor& t) {
  return t.dim(0) == t.dim(1) && t.dim(1) == t.dim(2);
}

// Multistart masked fit. `warm` (if any) is start 0.
std::pair<CpFactors, FitTrace> multistart(const CpProblem& prob, int d, const Masks* masks,
                                          const FitConfig& cfg, int random_starts,
                                          const std::vector<CpFactors>& warm, int* best_index) {
  const bool tied = cfg.tie_F_across_t && tie_possible(prob.tensor());
  CpFactors best;
  FitTrace best_trace;
  best_trace.objective = std::numeric_limits<double>::infinity();
  int index = 0;
  auto consider = [&](CpFactors f, int idx) {
    if (masks) {
      for (int m = 0; m < 3; ++m) {
        f.F[m] = f.F[m].cwiseProduct((*masks)[m]);
        project_columns(f.F[m], &(*masks)[m]);
      }
    }
    if (tied) f.F[1] = f.F[2] = f.F[0];
    auto trace = fit_cp(prob, f, masks, cfg, tied);
    if (trace.objective < best_trace.objective) {
      best = std::move(f);
      best_trace = std::move(trace);
      if (best_index) *best_index = idx;
    }
  };
  for (const auto& w : warm) consider(w, index++);
  for (int s = 0; s < random_starts; ++s) {
    consider(random_factors(prob, d, masks, substream_seed(cfg.seed, static_cast<std::uint64_t>(s)), tied),
             index++);
  }
  return {std::move(best), std::move(best_trace)};
}

MixtureEstimate to_estimate(const JointChoiceTensor& t, const std::vector<ChoiceSetMask>& menus,
                            const CpFactors& f, double residual) {
  MixtureEstimate est;
  est.num_alternatives = t.num_alternatives();
  est.menus = menus;
  est.m = f.M;
  est.F = factors_by_period(t, f, &est.periods);
  est.diagnostics.residual = residual;
  for (const auto& F : est.F)
    for (int j = 0; j < F.cols(); ++j)
      for (int y = 0; y < F.rows(); ++y)
        if (menus[j].contains_index(y) && F(y, j) == 0.0) est.diagnostics.degenerate = true;
  return est;
}

// Keeps components with positive weight.
MixtureEstimate drop_inactive(const MixtureEstimate& est) {
  MixtureEstimate out = est;
  out.menus.clear();
  std::vector<int> keep;
  for (int j = 0; j < est.num_menus(); ++j)
    if (est.m(j) > 0.0) keep.push_back(j);
  out.m.resize(static_cast<Eigen::Index>(keep.size()));
  for (auto& F : out.F) F.resize(F.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    out.menus.push_back(est.menus[keep[k]]);
    out.m(k) = est.m(keep[k]);
    for (std::size_t p = 0; p < est.F.size(); ++p) out.F[p].col(k) = est.F[p].col(keep[k]);
  }
  out.m /= out.m.sum();
  return out;
}

// Alternatives whose fitted probability stays below eps in every period leave
// the menu; the estimate is refit until the menus settle.
MixtureEstimate refine_menus(const JointChoiceTensor& tensor, MixtureEstimate est, const FitConfig& cfg) {
  const double eps = cfg.effective_eps();
  const int y_count = tensor.num_alternatives();
  for (int round = 0; round < 4; ++round) {
    std::vector<ChoiceSetMask> menus;
    std::vector<int> source;
    Eigen::VectorXd m(est.num_menus());
    bool changed = false;
    for (int j = 0; j < est.num_menus(); ++j) {
      std::uint32_t bits = cfg.required_bits & est.menus[j].bits();
      for (const auto& F : est.F)
        for (int y = 0; y < y_count; ++y)
          if (F(y, j) >= eps && est.menus[j].contains_index(y)) bits |= 1u << y;
      if (bits == 0) bits = est.menus[j].bits();
      const auto menu = ChoiceSetMask::from_bits(bits, y_count);
      changed = changed || menu != est.menus[j];
      const auto it = std::find(menus.begin(), menus.end(), menu);
      if (it != menus.end()) {
        m(it - menus.begin()) += est.m(j);
        continue;
      }
      m(static_cast<Eigen::Index>(menus.size())) = est.m(j);
      menus.push_back(menu);
      source.push_back(j);
    }
    if (!changed) return est;
    CpFactors warm;
    warm.M = m.head(static_cast<Eigen::Index>(menus.size()));
    const Masks masks = menu_masks(tensor, menus);
    const auto& g = tensor.grouping();
    for (int mode = 0; mode < 3; ++mode) {
      std::vector<Eigen::MatrixXd> parts;
      for (int t : g.groups[mode]) {
        const auto pos = std::find(est.periods.begin(), est.periods.end(), t) - est.periods.begin();
        parts.push_back(est.F[pos](Eigen::all, source));
      }
      warm.F[mode] = join_periods(parts, y_count).cwiseProduct(masks[mode]);
      project_columns(warm.F[mode], &masks[mode]);
    }
    est = drop_inactive(final_fit(tensor, menus, cfg, &warm));
  }
  return est;
}

// Gives every active Step-1 column its own menu for the Step-2 start. Among
// columns that trimmed to the same menu, the one whose weakest member is
// largest keeps it; the others shed their least likely alternatives until
// they reach an unused menu.
std::vector<ChoiceSetMask> spread_start(const JointChoiceTensor& tensor,
                                        const std::vector<Eigen::MatrixXd>& by_period,
                                        const std::vector<int>& periods, const Eigen::VectorXd& M,
                                        const TrimResult& trim, double eps, std::uint32_t required,
                                        CpFactors& start) {
  const int y_count = tensor.num_alternatives();
  const int d = static_cast<int>(M.size());
  Eigen::MatrixXd strength = by_period[0];
  for (const auto& F : by_period) strength = strength.cwiseMax(F);
  std::vector<double> confidence(d);
  for (int j = 0; j < d; ++j) {
    double c = std::numeric_limits<double>::infinity();
    for (int y : trim.menus[trim.assignment[j]].alternatives()) c = std::min(c, strength(y - 1, j));
    confidence[j] = c;
  }
  std::vector<int> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return confidence[a] > confidence[b]; });

  std::vector<ChoiceSetMask> menus;
  std::vector<double> weights;
  std::vector<std::vector<Eigen::VectorXd>> cols;  // per menu, per period
  for (int j : order) {
    std::uint32_t bits = trim.menus[trim.assignment[j]].bits();
    auto used = [&](std::uint32_t b) {
      return std::find_if(menus.begin(), menus.end(), [&](const ChoiceSetMask& m) { return m.bits() == b; });
    };
    while (used(bits) != menus.end()) {
      int drop = -1;
      for (int y = 0; y < y_count; ++y) {
        if (!((bits >> y) & 1u) || ((required >> y) & 1u)) continue;
        if (drop < 0 || strength(y, j) < strength(drop, j)) drop = y;
      }
      if (drop < 0 || (bits & ~(1u << drop)) == 0) break;
      bits &= ~(1u << drop);
    }
    const auto it = used(bits);
    if (it != menus.end()) {
      weights[it - menus.begin()] += M(j);
      continue;
    }
    const auto menu = ChoiceSetMask::from_bits(bits, y_count);
    std::vector<Eigen::VectorXd> per;
    for (const auto& F : by_period) {
      Eigen::VectorXd col = Eigen::VectorXd::Zero(y_count);
      for (int y = 0; y < y_count; ++y)
        if (menu.contains_index(y) && F(y, j) >= eps) col(y) = F(y, j);
      if (!(col.sum() > 0.0))
        for (int y = 0; y < y_count; ++y) col(y) = menu.contains_index(y) ? 1.0 : 0.0;
      per.push_back(col / col.sum());
    }
    menus.push_back(menu);
    weights.push_back(M(j));
    cols.push_back(std::move(per));
  }
  const int k = static_cast<int>(menus.size());
  start.M = Eigen::Map<const Eigen::VectorXd>(weights.data(), k);
  const auto& g = tensor.grouping();
  for (int mode = 0; mode < 3; ++mode) {
    std::vector<Eigen::MatrixXd> parts;
    for (int t : g.groups[mode]) {
      const auto pos = std::find(periods.begin(), periods.end(), t) - periods.begin();
      Eigen::MatrixXd part(y_count, k);
      for (int c = 0; c < k; ++c) part.col(c) = cols[c][pos];
      parts.push_back(std::move(part));
    }
    start.F[mode] = join_periods(parts, y_count);
  }
  return menus;
}

}  // namespace

std::vector<Eigen::MatrixXd> factors_by_period(const JointChoiceTensor& tensor, const CpFactors& f,
                                               std::vector<int>* periods) {
  std::map<int, Eigen::MatrixXd> by_period;
  const auto& g = tensor.grouping();
  for (int m = 0; m < 3; ++m) {
    const auto parts = split_periods(f.F[m], tensor.num_alternatives(), g.group_size(m));
    for (int i = 0; i < g.group_size(m); ++i) by_period[g.groups[m][i]] = parts[i];
  }
  std::vector<Eigen::MatrixXd> out;
  if (periods) periods->clear();
  for (auto& [t, F] : by_period) {
    if (periods) periods->push_back(t);
    out.push_back(std::move(F));
  }
  return out;
}

double cp_residual(const JointChoiceTensor& tensor, const CpFactors& f) {
  return CpProblem(tensor).residual(f);
}

Step1Result step1_fit(const JointChoiceTensor& tensor, int d_hat, const FitConfig& cfg) {
  cfg.validate(tensor.num_alternatives());
  if (d_hat < 1) throw DomainError("d_hat must be positive");
  const CpProblem prob(tensor);
  std::vector<CpFactors> warm;
  if (cfg.spectral_start) {
    try {
      const auto est = spectral_identify(tensor, d_hat);
      CpFactors f;
      const auto& g = tensor.grouping();
      for (int m = 0; m < 3; ++m) {
        std::vector<Eigen::MatrixXd> parts;
        for (int t : g.groups[m]) parts.push_back(est.conditional(t));
        f.F[m] = join_periods(parts, tensor.num_alternatives());
      }
      f.M = est.m;
      warm.push_back(std::move(f));
    } catch (const std::exception&) {
      // Finite-sample spectral failures just drop the extra start.
    }
  }
  Step1Result res;
  int best = 0;
  auto [f, trace] = multistart(prob, d_hat, nullptr, cfg, cfg.starts, warm, &best);
  res.factors = std::move(f);
  res.trace = std::move(trace);
  res.best_start = best;
  res.warning = !res.trace.converged;
  return res;
}

TrimResult trim_normalize(const std::vector<Eigen::MatrixXd>& F, double eps, std::uint32_t required_bits) {
  if (F.empty()) throw DomainError("nothing to trim");
  const int y_count = static_cast<int>(F[0].rows());
  if (!(eps > 0.0 && eps < 1.0 / y_count)) throw DomainError("eps must lie in (0, 1/Y)");
  const int d = static_cast<int>(F[0].cols());
  std::vector<Eigen::MatrixXd> trimmed = F;
  std::vector<std::uint32_t> bits(d, required_bits);
  for (auto& f : trimmed) {
    for (int j = 0; j < d; ++j) {
      for (int y = 0; y < y_count; ++y) {
        if (f(y, j) < eps) f(y, j) = 0.0;
      }
      const double s = f.col(j).sum();
      if (!(s > 0.0)) {
        throw DomainError("degenerate component " + std::to_string(j + 1) + ": no entry reaches eps");
      }
      f.col(j) /= s;
      for (int y = 0; y < y_count; ++y)
        if (f(y, j) > 0.0) bits[j] |= 1u << y;
    }
  }
  TrimResult res;
  res.assignment.assign(d, -1);
  std::map<std::uint32_t, int> seen;
  for (int j = 0; j < d; ++j) {
    auto [it, inserted] = seen.emplace(bits[j], static_cast<int>(res.kept.size()));
    res.assignment[j] = it->second;
    if (!inserted) {
      res.dropped.push_back(j);
      continue;
    }
    res.kept.push_back(j);
    res.menus.push_back(ChoiceSetMask::from_bits(bits[j], y_count));
  }
  for (const auto& f : trimmed) {
    Eigen::MatrixXd kept(y_count, static_cast<Eigen::Index>(res.kept.size()));
    for (std::size_t k = 0; k < res.kept.size(); ++k) kept.col(k) = f.col(res.kept[k]);
    res.F.push_back(std::move(kept));
  }
  return res;
}

Step2Fit step2_masked_fit(const JointChoiceTensor& tensor, const std::vector<ChoiceSetMask>& start_menus,
                          const CpFactors& start, const FitConfig& cfg) {
  cfg.validate(tensor.num_alternatives());
  const int y_count = tensor.num_alternatives();
  if (static_cast<Eigen::Index>(start_menus.size()) != start.M.size()) {
    throw DomainError("warm start menus and weights differ in length");
  }
  Step2Fit out;
  out.dictionary = all_menus(y_count, cfg.required_bits);
  const int n = static_cast<int>(out.dictionary.size());
  const Masks masks = menu_masks(tensor, out.dictionary);
  const CpProblem prob(tensor);

  CpFactors init;
  for (int m = 0; m < 3; ++m) init.F[m] = Eigen::MatrixXd::Zero(tensor.dim(m), n);
  init.M = Eigen::VectorXd::Zero(n);
  std::vector<bool> from_start(n, false);
  for (std::size_t s = 0; s < start_menus.size(); ++s) {
    const ChoiceSetMask menu =
        ChoiceSetMask::from_bits(start_menus[s].bits() | cfg.required_bits, y_count);
    const auto it = std::find(out.dictionary.begin(), out.dictionary.end(), menu);
    const int j = static_cast<int>(it - out.dictionary.begin());
    if (from_start[j]) {
      init.M(j) += start.M(s);
      continue;
    }
    from_start[j] = true;
    init.M(j) = start.M(s);
    for (int m = 0; m < 3; ++m) init.F[m].col(j) = start.F[m].col(s);
  }
  std::array<Eigen::VectorXd, 3> marg;
  for (int m = 0; m < 3; ++m) marg[m] = tensor.marginal(m);
  int fresh = 0;
  for (int j = 0; j < n; ++j) {
    if (from_start[j]) continue;
    ++fresh;
    for (int m = 0; m < 3; ++m) {
      Eigen::VectorXd col;
      switch (cfg.step2_init) {
        case Step2Init::uniform:
          col = masks[m].col(j);
          break;
        case Step2Init::marginal:
          col = marg[m].cwiseProduct(masks[m].col(j));
          break;
        case Step2Init::nearest: {
          // Step-1 component with the most mass inside this menu.
          int best = -1;
          double best_mass = 0.0;
          for (Eigen::Index s = 0; s < start.M.size(); ++s) {
            double mass = 0.0;
            for (int q = 0; q < 3; ++q) mass += start.F[q].col(s).cwiseProduct(masks[q].col(j)).sum();
            if (mass > best_mass) {
              best_mass = mass;
              best = static_cast<int>(s);
            }
          }
          col = best >= 0 ? Eigen::VectorXd(start.F[m].col(best).cwiseProduct(masks[m].col(j)))
                          : Eigen::VectorXd(masks[m].col(j));
          break;
        }
      }
      if (!(col.sum() > 0.0)) col = masks[m].col(j);
      init.F[m].col(j) = col / col.sum();
    }
  }
  if (cfg.step2_spread > 0.0 && fresh > 0) {
    init.M *= 1.0 - cfg.step2_spread;
    for (int j = 0; j < n; ++j)
      if (!from_start[j]) init.M(j) += cfg.step2_spread / fresh;
  }
  init.M /= init.M.sum();
  for (int m = 0; m < 3; ++m) project_columns(init.F[m], &masks[m]);
  const bool tied = cfg.tie_F_across_t && tie_possible(tensor);
  if (tied) {
    const Eigen::MatrixXd avg = (init.F[0] + init.F[1] + init.F[2]) / 3.0;
    init.F = {avg, avg, avg};
  }
  out.factors = init;
  out.trace = fit_cp(prob, out.factors, &masks, cfg, tied);
  return out;
}

void weight_problem(const JointChoiceTensor& tensor, const std::array<Eigen::MatrixXd, 3>& F,
                    Eigen::MatrixXd& H, Eigen::VectorXd& b, double& c) {
  const CpProblem prob(tensor);
  CpFactors f;
  f.F = F;
  f.M = Eigen::VectorXd::Ones(F[0].cols());
  H = gram(F[0]).cwiseProduct(gram(F[1])).cwiseProduct(gram(F[2]));
  b = prob.mttkrp(f, 0).cwiseProduct(F[0]).colwise().sum().transpose();
  c = prob.norm2();
}

std::vector<ChoiceSetMask> BestSubsetSolution::selected() const {
  std::vector<ChoiceSetMask> out;
  for (std::size_t j = 0; j < B.size(); ++j)
    if (B[j] && M(static_cast<Eigen::Index>(j)) > 0.0) out.push_back(dictionary[j]);
  return out;
}

BestSubsetSolution best_subset_select(const JointChoiceTensor& tensor, const Step2Fit& step2, int d_hat,
                                      const FitConfig& cfg) {
  if (d_hat < 1) throw DomainError("d_hat must be positive");
  Eigen::MatrixXd H;
  Eigen::VectorXd b;
  double c = 0.0;
  weight_problem(tensor, step2.factors.F, H, b, c);
  const auto sol = best_subset_qp(H, b, d_hat, cfg.mio);
  BestSubsetSolution out;
  out.dictionary = step2.dictionary;
  out.B.assign(out.dictionary.size(), 0);
  for (int j : sol.support) out.B[j] = 1;
  out.M = sol.x;
  out.optimal = sol.optimal;
  out.method = sol.method_used;
  out.nodes = sol.nodes;
  CpFactors f{step2.factors.F, sol.x};
  out.objective = cp_residual(tensor, f);
  return out;
}

MixtureEstimate final_fit(const JointChoiceTensor& tensor, const std::vector<ChoiceSetMask>& menus,
                          const FitConfig& cfg, const CpFactors* warm) {
  cfg.validate(tensor.num_alternatives());
  if (menus.empty()) throw DomainError("final fit needs at least one menu");
  for (std::size_t a = 0; a < menus.size(); ++a)
    for (std::size_t b = a + 1; b < menus.size(); ++b)
      if (menus[a] == menus[b]) throw DomainError("menus must be distinct: " + menus[a].to_string());
  const CpProblem prob(tensor);
  const Masks masks = menu_masks(tensor, menus);
  std::vector<CpFactors> starts;
  if (warm) starts.push_back(*warm);
  const int random_starts = warm ? cfg.final_starts : std::max(cfg.final_starts, 1);
  auto [f, trace] = multistart(prob, static_cast<int>(menus.size()), &masks, cfg, random_starts, starts,
                               nullptr);
  auto est = to_estimate(tensor, menus, f, prob.residual(f));
  if (!trace.converged) est.diagnostics.warnings.push_back("iteration cap reached");
  return est;
}

BruteForceResult brute_force_estimate(const JointChoiceTensor& tensor, int d_hat,
                                      const std::vector<ChoiceSetMask>& candidates_in,
                                      const FitConfig& cfg, unsigned long long budget) {
  cfg.validate(tensor.num_alternatives());
  const auto candidates =
      candidates_in.empty() ? all_menus(tensor.num_alternatives(), cfg.required_bits) : candidates_in;
  const int n = static_cast<int>(candidates.size());
  if (d_hat < 1 || d_hat > n) throw DomainError("d_hat must lie in 1..number of candidate menus");
  BruteForceResult res;
  res.combinations = binomial(n, d_hat);
  if (res.combinations > budget) {
    throw BudgetExceededError("brute force needs " + std::to_string(res.combinations) +
                                  " menu combinations, budget is " + std::to_string(budget),
                              res.combinations);
  }
  const CpProblem prob(tensor);
  const Masks all_masks = menu_masks(tensor, candidates);

  // Entries not covered by any menu of a combination must be fit by 0.
  std::vector<std::vector<int>> combos;
  std::vector<double> bounds;
  std::vector<int> idx(d_hat);
  std::iota(idx.begin(), idx.end(), 0);
  while (true) {
    double bound = 0.0;
    for (const auto& e : prob.entries()) {
      bool covered = false;
      for (int j : idx) {
        if (all_masks[0](e.i, j) != 0.0 && all_masks[1](e.j, j) != 0.0 && all_masks[2](e.k, j) != 0.0) {
          covered = true;
          break;
        }
      }
      if (!covered) bound += e.p * e.p;
    }
    combos.push_back(idx);
    bounds.push_back(bound);
    int pos = d_hat - 1;
    while (pos >= 0 && idx[pos] == n - d_hat + pos) --pos;
    if (pos < 0) break;
    ++idx[pos];
    for (int q = pos + 1; q < d_hat; ++q) idx[q] = idx[q - 1] + 1;
  }
  std::vector<std::size_t> order(combos.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return bounds[a] < bounds[b]; });

  FitConfig local = cfg;
  local.final_starts = std::max(1, std::min(cfg.final_starts, 3));
  double best_obj = std::numeric_limits<double>::infinity();
  std::size_t best_combo = 0;
  for (std::size_t o : order) {
    if (bounds[o] >= best_obj) {
      ++res.pruned;
      continue;
    }
    std::vector<ChoiceSetMask> menus;
    for (int j : combos[o]) menus.push_back(candidates[j]);
    local.seed = substream_seed(cfg.seed, o);
    const auto est = final_fit(tensor, menus, local);
    ++res.fitted;
    const double obj = est.diagnostics.residual;
    if (obj < best_obj || (obj == best_obj && o < best_combo)) {
      best_obj = obj;
      best_combo = o;
      res.estimate = est;
    }
  }
  // Supersets padded with zero-probability alternatives tie with the truth.
  res.estimate = refine_menus(tensor, drop_inactive(res.estimate), cfg);
  return res;
}

PoolReport pool_supports(const std::vector<MixtureEstimate>& estimates) {
  PoolReport r;
  std::set<ChoiceSetMask> all;
  int y_count = 0;
  for (const auto& e : estimates) {
    y_count = std::max(y_count, e.num_alternatives);
    for (const auto& m : e.menus) all.insert(m);
  }
  r.menus.assign(all.begin(), all.end());
  r.full_variation = y_count > 0 && r.menus.size() == (std::size_t{1} << y_count) - 1;
  return r;
}

PipelineResult estimate_pipeline(const JointChoiceTensor& tensor, const FitConfig& cfg,
                                 std::optional<int> d_hat) {
  cfg.validate(tensor.num_alternatives());
  PipelineResult out;
  out.rank = estimate_rank(tensor, cfg.rank_tau);
  out.d_hat = d_hat.value_or(out.rank.d_hat);
  out.step1 = step1_fit(tensor, out.d_hat, cfg);

  // Step-1 components with zero weight carry no menu.
  const auto& f1 = out.step1.factors;
  std::vector<int> active;
  for (Eigen::Index j = 0; j < f1.M.size(); ++j)
    if (f1.M(j) > 0.0) active.push_back(static_cast<int>(j));
  CpFactors act;
  for (int m = 0; m < 3; ++m) act.F[m] = f1.F[m](Eigen::all, active);
  act.M = f1.M(active);
  const auto by_period = factors_by_period(tensor, act);
  out.trim = trim_normalize(by_period, cfg.effective_eps(), cfg.required_bits);

  const int kept = static_cast<int>(out.trim.menus.size());
  CpFactors start;
  start.M = Eigen::VectorXd::Zero(kept);
  for (std::size_t j = 0; j < active.size(); ++j) start.M(out.trim.assignment[j]) += act.M(j);
  const auto& g = tensor.grouping();
  std::vector<int> periods;
  factors_by_period(tensor, act, &periods);
  for (int m = 0; m < 3; ++m) {
    std::vector<Eigen::MatrixXd> parts;
    for (int t : g.groups[m]) {
      const auto pos = std::find(periods.begin(), periods.end(), t) - periods.begin();
      parts.push_back(out.trim.F[pos]);
    }
    start.F[m] = join_periods(parts, tensor.num_alternatives());
  }
  out.step1_estimate = to_estimate(tensor, out.trim.menus, start, cp_residual(tensor, start));

  CpFactors spread;
  const auto start_menus = spread_start(tensor, by_period, periods, act.M, out.trim, cfg.effective_eps(),
                                        cfg.required_bits, spread);
  out.step2 = step2_masked_fit(tensor, start_menus, spread, cfg);
  out.subset = best_subset_select(tensor, out.step2, out.d_hat, cfg);

  std::vector<ChoiceSetMask> chosen;
  std::vector<int> cols;
  for (std::size_t j = 0; j < out.subset.B.size(); ++j) {
    if (out.subset.B[j] && out.subset.M(static_cast<Eigen::Index>(j)) > 0.0) {
      chosen.push_back(out.subset.dictionary[j]);
      cols.push_back(static_cast<int>(j));
    }
  }
  CpFactors warm;
  for (int m = 0; m < 3; ++m) warm.F[m] = out.step2.factors.F[m](Eigen::all, cols);
  warm.M = out.subset.M(cols);
  warm.M /= warm.M.sum();
  out.final_estimate = refine_menus(tensor, drop_inactive(final_fit(tensor, chosen, cfg, &warm)), cfg);
  return out;
}

}  // namespace choiceset
