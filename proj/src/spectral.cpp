#include "choiceset/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <numeric>

#include "choiceset/errors.hpp"
#include "choiceset/rng.hpp"

namespace choiceset {

const Eigen::MatrixXd& MixtureEstimate::conditional(int t) const {
  for (std::size_t i = 0; i < periods.size(); ++i) {
    if (periods[i] == t) return F[i];
  }
  throw DomainError("period " + std::to_string(t) + " was not estimated");
}

void MixtureEstimate::sort_menus() {
  std::vector<int> order(menus.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return menus[a] < menus[b]; });
  std::vector<ChoiceSetMask> sorted_menus;
  Eigen::VectorXd sorted_m(m.size());
  std::vector<Eigen::MatrixXd> sorted_f = F;
  for (std::size_t k = 0; k < order.size(); ++k) {
    sorted_menus.push_back(menus[order[k]]);
    sorted_m(k) = m(order[k]);
    for (std::size_t p = 0; p < F.size(); ++p) sorted_f[p].col(k) = F[p].col(order[k]);
  }
  menus = std::move(sorted_menus);
  m = std::move(sorted_m);
  F = std::move(sorted_f);
}

RankReport estimate_rank(const Eigen::MatrixXd& pair_matrix, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw DomainError("rank threshold must lie in (0,1)");
  if (pair_matrix.size() == 0 || pair_matrix.cwiseAbs().maxCoeff() == 0.0) {
    throw DomainError("rank of an all-zero matrix is undefined");
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(pair_matrix);
  const auto& s = svd.singularValues();
  RankReport r;
  r.singular_values.assign(s.data(), s.data() + s.size());
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    if (s(k) > tau * s(0)) ++r.d_hat;
  }
  r.possibly_under_detected = r.d_hat == static_cast<int>(s.size());
  return r;
}

RankReport estimate_rank(const JointChoiceTensor& tensor, double tau) {
  return estimate_rank(tensor.pair_matrix(), tau);
}

PivotSelection select_pivot_outcomes(const Eigen::MatrixXd& pair_matrix, int d_hat,
                                     double rcond_tol) {
  const int n1 = static_cast<int>(pair_matrix.rows());
  const int n2 = static_cast<int>(pair_matrix.cols());
  if (d_hat < 1) throw DomainError("d_hat must be positive");
  if (d_hat > std::min(n1, n2)) {
    throw IdentificationError("d_hat = " + std::to_string(d_hat) + " exceeds the " +
                              std::to_string(n1) + "x" + std::to_string(n2) + " pair matrix");
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> by_col(pair_matrix);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> by_row(pair_matrix.transpose());
  PivotSelection sel;
  for (int k = 0; k < d_hat; ++k) {
    sel.cols.push_back(by_col.colsPermutation().indices()(k));
    sel.rows.push_back(by_row.colsPermutation().indices()(k));
  }
  const Eigen::MatrixXd block = pair_matrix(sel.rows, sel.cols);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(block);
  const auto& s = svd.singularValues();
  const double rcond = s(0) > 0.0 ? s(d_hat - 1) / s(0) : 0.0;
  if (!(rcond > rcond_tol)) {
    throw IdentificationError("no nonsingular " + std::to_string(d_hat) + "x" +
                              std::to_string(d_hat) + " pivot block (reciprocal condition " +
                              std::to_string(rcond) + ")");
  }
  sel.condition_number = 1.0 / rcond;
  return sel;
}

namespace {

// Per-period marginals of a grouped conditional pmf (rows = grouped outcomes).
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

}  // namespace

MixtureEstimate spectral_identify(const JointChoiceTensor& tensor, int d_hat,
                                  const SpectralOptions& opts) {
  const auto& grouping = tensor.grouping();
  if (grouping.group_size(2) != 1) {
    throw DomainError("the third tensor mode must hold a single period");
  }
  const int y_count = tensor.num_alternatives();
  const int d = d_hat;
  const Eigen::MatrixXd l12 = tensor.pair_matrix();
  const PivotSelection piv = select_pivot_outcomes(l12, d, opts.rcond_tol);

  MixtureEstimate est;
  est.num_alternatives = y_count;
  est.diagnostics.pivot_condition = piv.condition_number;

  const Eigen::MatrixXd l12_pivot_t = l12(piv.rows, piv.cols).transpose();
  const Eigen::MatrixXd inv_pivot_t = l12_pivot_t.partialPivLu().inverse();

  std::vector<Eigen::MatrixXd> r(y_count);
  SplitMix64 rng(opts.seed);
  Eigen::VectorXd w(y_count);
  for (int y = 0; y < y_count; ++y) w(y) = 0.5 + rng.uniform();
  w /= w.sum();
  Eigen::MatrixXd combined = Eigen::MatrixXd::Zero(d, d);
  for (int y = 0; y < y_count; ++y) {
    // L~_{2,1,y}(i, j) = P(z2 = c_i, z1 = r_j, y)
    const Eigen::MatrixXd l21y = tensor.slice(y)(piv.rows, piv.cols).transpose();
    r[y] = l21y * inv_pivot_t;
    combined += w(y) * r[y];
  }

  Eigen::EigenSolver<Eigen::MatrixXd> eig(combined);
  if (eig.info() != Eigen::Success) throw IllConditionedError("eigendecomposition did not converge");
  double max_imag = eig.eigenvalues().imag().cwiseAbs().maxCoeff();
  Eigen::MatrixXd lambda(d, d);
  for (int k = 0; k < d; ++k) {
    Eigen::VectorXcd v = eig.eigenvectors().col(k);
    const std::complex<double> s = v.sum();
    if (std::abs(s) < 1e-300) throw IllConditionedError("eigenvector sums to zero");
    v /= s;
    max_imag = std::max(max_imag, v.imag().cwiseAbs().maxCoeff());
    lambda.col(k) = v.real();
  }
  est.diagnostics.max_imag_discarded = max_imag;
  if (max_imag > opts.imag_tol) {
    throw IllConditionedError("complex eigenstructure, imaginary part " + std::to_string(max_imag));
  }
  est.diagnostics.min_eigvec_entry = lambda.minCoeff();
  if (lambda.minCoeff() < -opts.zero_tol) {
    throw IllConditionedError("eigenvector entry " + std::to_string(lambda.minCoeff()) +
                              " is negative beyond tolerance");
  }

  const Eigen::PartialPivLU<Eigen::MatrixXd> lambda_lu(lambda);
  Eigen::MatrixXd f3(y_count, d);
  for (int y = 0; y < y_count; ++y) {
    f3.row(y) = lambda_lu.solve(r[y] * lambda).diagonal().transpose();
  }
  for (int a = 0; a < d; ++a) {
    for (int b = a + 1; b < d; ++b) {
      if ((f3.col(a) - f3.col(b)).cwiseAbs().maxCoeff() <= opts.tie_tol) {
        throw IdentificationError("components " + std::to_string(a + 1) + " and " +
                                  std::to_string(b + 1) +
                                  " share eigenvalues in every slice and cannot be separated");
      }
    }
  }

  // Q = L_{2,1}[all z2, pivot z1] (L~12^T)^{-1}; Q Lambda has column sums 1/s_k.
  const Eigen::MatrixXd q = l12(piv.rows, Eigen::all).transpose() * inv_pivot_t;
  Eigen::MatrixXd g2 = q * lambda;
  for (int k = 0; k < d; ++k) {
    const double s = g2.col(k).sum();
    if (std::abs(s) < 1e-300) throw IllConditionedError("component with zero mass in mode 2");
    g2.col(k) /= s;
  }
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> g2_qr(g2);
  const Eigen::VectorXd p2 = l12.colwise().sum().transpose();
  Eigen::VectorXd m = g2_qr.solve(p2);
  if (m.minCoeff() < -opts.zero_tol) {
    throw IllConditionedError("recovered menu weight " + std::to_string(m.minCoeff()) + " is negative");
  }
  m = m.cwiseMax(0.0);
  m /= m.sum();
  if (m.minCoeff() <= 0.0) throw IdentificationError("a recovered component has zero weight");
  const Eigen::MatrixXd x = g2_qr.solve(l12.transpose());  // diag(m) G1^T
  Eigen::MatrixXd g1 = x.transpose();
  for (int k = 0; k < d; ++k) g1.col(k) /= m(k);

  // Residual of the unprojected fit.
  {
    double res = 0.0;
    const auto dims = tensor.dims();
    for (int i = 0; i < dims[0]; ++i)
      for (int j = 0; j < dims[1]; ++j)
        for (int y = 0; y < dims[2]; ++y) {
          double fit = 0.0;
          for (int k = 0; k < d; ++k) fit += m(k) * g1(i, k) * g2(j, k) * f3(y, k);
          const double diff = tensor(i, j, y) - fit;
          res += diff * diff;
        }
    est.diagnostics.residual = res;
  }

  // Per-period F, ordered by period.
  std::map<int, Eigen::MatrixXd> by_period;
  const auto f1 = split_periods(g1, y_count, grouping.group_size(0));
  const auto f2 = split_periods(g2, y_count, grouping.group_size(1));
  for (int i = 0; i < grouping.group_size(0); ++i) by_period[grouping.groups[0][i]] = f1[i];
  for (int i = 0; i < grouping.group_size(1); ++i) by_period[grouping.groups[1][i]] = f2[i];
  by_period[grouping.groups[2][0]] = f3;

  for (int k = 0; k < d; ++k) {
    std::uint32_t bits = 0;
    for (const auto& [t, f] : by_period) {
      for (int y = 0; y < y_count; ++y) {
        if (f(y, k) > opts.zero_tol) bits |= 1u << y;
      }
    }
    if (bits == 0) throw IdentificationError("component " + std::to_string(k + 1) + " has empty menu");
    est.menus.push_back(ChoiceSetMask::from_bits(bits, y_count));
  }
  for (auto& [t, f] : by_period) {
    for (int k = 0; k < d; ++k) {
      for (int y = 0; y < y_count; ++y) {
        if (!est.menus[k].contains_index(y)) {
          f(y, k) = 0.0;
        } else if (f(y, k) <= 0.0) {
          f(y, k) = 0.0;
          est.diagnostics.degenerate = true;
        }
      }
      f.col(k) /= f.col(k).sum();
    }
    est.periods.push_back(t);
    est.F.push_back(f);
  }
  est.m = m;
  for (int a = 0; a < d; ++a)
    for (int b = a + 1; b < d; ++b)
      if (est.menus[a] == est.menus[b]) {
        est.diagnostics.warnings.push_back("components " + std::to_string(a + 1) + " and " +
                                           std::to_string(b + 1) + " share menu " +
                                           est.menus[a].to_string());
      }
  return est;
}

bool menus_nested(const std::vector<ChoiceSetMask>& menus) {
  for (std::size_t a = 0; a < menus.size(); ++a)
    for (std::size_t b = a + 1; b < menus.size(); ++b)
      if (!menus[a].is_subset_of(menus[b]) && !menus[b].is_subset_of(menus[a])) return false;
  return true;
}

bool menus_have_excluded_choices(const std::vector<ChoiceSetMask>& menus) {
  for (std::size_t a = 0; a < menus.size(); ++a) {
    std::uint32_t others = 0;
    for (std::size_t b = 0; b < menus.size(); ++b)
      if (b != a) others |= menus[b].bits();
    if ((menus[a].bits() & ~others) == 0) return false;
  }
  return true;
}

bool menus_triangular(const std::vector<ChoiceSetMask>& menus) {
  // Peeling a menu that owns a private alternative never destroys another
  // menu's private alternative, so the greedy order is exhaustive.
  std::vector<std::uint32_t> left;
  for (const auto& m : menus) left.push_back(m.bits());
  while (!left.empty()) {
    bool peeled = false;
    for (std::size_t a = 0; a < left.size() && !peeled; ++a) {
      std::uint32_t others = 0;
      for (std::size_t b = 0; b < left.size(); ++b)
        if (b != a) others |= left[b];
      if (left[a] & ~others) {
        left.erase(left.begin() + static_cast<std::ptrdiff_t>(a));
        peeled = true;
      }
    }
    if (!peeled) return false;
  }
  return true;
}

LinearIndependenceReport lin_indep_check(const Eigen::MatrixXd& G,
                                         const std::vector<ChoiceSetMask>& menus, double tol) {
  LinearIndependenceReport r;
  r.num_menus = static_cast<int>(G.cols());
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(G);
  const auto& s = svd.singularValues();
  for (Eigen::Index k = 0; k < s.size(); ++k)
    if (s(k) > tol * s(0)) ++r.rank;
  r.smallest_singular_value = G.rows() >= G.cols() && s.size() > 0 ? s(s.size() - 1) : 0.0;
  r.full_rank = r.rank == r.num_menus;
  if (!menus.empty()) {
    r.nested = menus_nested(menus);
    r.excluded_choices = menus_have_excluded_choices(menus);
    r.triangular = menus_triangular(menus);
  }
  return r;
}

LinearIndependenceReport lin_indep_check(const MixtureModel& model, int K, double tol) {
  if (K < 1 || K > model.num_periods()) {
    throw DomainError("K must lie in 1.." + std::to_string(model.num_periods()));
  }
  std::vector<int> periods(K);
  std::iota(periods.begin(), periods.end(), 1);
  auto r = lin_indep_check(grouped_conditional(model, periods), model.menus(), tol);
  r.K = K;
  r.K_at_least_Y = K >= model.num_alternatives();
  return r;
}

void MarkovModel::validate() const {
  const int d = static_cast<int>(menus.size());
  if (num_alternatives < 1 || num_alternatives > kMaxAlternatives) {
    throw DomainError("number of alternatives must be in 1..16");
  }
  if (num_periods < 1) throw DomainError("number of periods must be positive");
  if (d == 0 || m.size() != d || static_cast<int>(initial.size()) != d ||
      static_cast<int>(transition.size()) != d) {
    throw DomainError("Markov model components disagree in count");
  }
  if (m.minCoeff() < 0.0 || std::abs(m.sum() - 1.0) > 1e-9) throw DomainError("m is not on the simplex");
  for (int j = 0; j < d; ++j) {
    const auto& menu = menus[j];
    if (initial[j].size() != num_alternatives || transition[j].rows() != num_alternatives ||
        transition[j].cols() != num_alternatives) {
      throw DomainError("Markov component " + std::to_string(j + 1) + " has wrong shape");
    }
    if (std::abs(initial[j].sum() - 1.0) > 1e-9) throw DomainError("initial pmf does not sum to 1");
    for (int y = 0; y < num_alternatives; ++y) {
      if ((initial[j](y) != 0.0) != menu.contains_index(y) || initial[j](y) < 0.0) {
        throw DomainError("initial pmf breaks the zero pattern of " + menu.to_string());
      }
      if (!menu.contains_index(y)) continue;
      if (std::abs(transition[j].col(y).sum() - 1.0) > 1e-9) {
        throw DomainError("transition column does not sum to 1 in " + menu.to_string());
      }
      for (int x = 0; x < num_alternatives; ++x) {
        if ((transition[j](x, y) != 0.0) != menu.contains_index(x) || transition[j](x, y) < 0.0) {
          throw DomainError("transition breaks the zero pattern of " + menu.to_string());
        }
      }
    }
  }
}

std::vector<double> markov_population_pmf(const MarkovModel& model) {
  model.validate();
  const int y_count = model.num_alternatives;
  const int n = outcome_count(y_count, model.num_periods);
  std::vector<double> pmf(n, 0.0);
  for (int z = 0; z < n; ++z) {
    const auto ys = decode_outcome(z, y_count, model.num_periods);
    for (int j = 0; j < model.m.size(); ++j) {
      double p = model.m(j) * model.initial[j](ys[0] - 1);
      for (int t = 1; t < model.num_periods && p > 0.0; ++t) {
        p *= model.transition[j](ys[t] - 1, ys[t - 1] - 1);
      }
      pmf[z] += p;
    }
  }
  return pmf;
}

std::vector<double> empirical_joint_pmf(const PanelDataset& data, const std::string& cell) {
  const int y_count = data.num_alternatives();
  std::vector<long long> counts(outcome_count(y_count, data.num_periods()), 0);
  long long n = 0;
  for (const auto& r : data.records()) {
    if (r.cell_id != cell) continue;
    ++counts[encode_outcome(r.choices, y_count)];
    ++n;
  }
  if (n == 0) throw DomainError("cell '" + cell + "' has no units");
  std::vector<double> pmf(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) pmf[i] = static_cast<double>(counts[i]) / n;
  return pmf;
}

MarkovEstimate markov_identify(int num_alternatives, int num_periods, std::span<const double> pmf,
                               int K_d, const MarkovOptions& opts) {
  const int y_count = num_alternatives;
  if (K_d < 1) throw DomainError("K_d must be positive");
  if (num_periods < 2 * K_d + 3) {
    throw DomainError("Markov identification needs T >= 2 K_d + 3 = " + std::to_string(2 * K_d + 3));
  }
  if (static_cast<int>(pmf.size()) != outcome_count(y_count, num_periods)) {
    throw DomainError("joint pmf has the wrong length");
  }
  const int n_block = outcome_count(y_count, K_d);
  const int cond1 = K_d;            // 0-based period index K_d + 1
  const int cond2 = 2 * K_d + 1;    // 0-based period index 2 K_d + 2
  const int target = 2 * K_d + 2;
  PeriodGrouping grouping;
  for (int t = 1; t <= K_d; ++t) grouping.groups[0].push_back(t);
  for (int t = K_d + 2; t <= 2 * K_d + 1; ++t) grouping.groups[1].push_back(t);
  grouping.groups[2].push_back(2 * K_d + 3);

  // Conditional tensors for every (a, b), accumulated in one pass.
  std::vector<std::vector<double>> cond(y_count * y_count,
                                        std::vector<double>(n_block * n_block * y_count, 0.0));
  for (int z = 0; z < static_cast<int>(pmf.size()); ++z) {
    if (pmf[z] == 0.0) continue;
    const auto ys = decode_outcome(z, y_count, num_periods);
    int i = 0, j = 0;
    for (int t = 0; t < K_d; ++t) i = i * y_count + (ys[t] - 1);
    for (int t = K_d + 1; t <= 2 * K_d; ++t) j = j * y_count + (ys[t] - 1);
    const int pair = (ys[cond1] - 1) * y_count + (ys[cond2] - 1);
    cond[pair][(static_cast<std::size_t>(i) * n_block + j) * y_count + (ys[target] - 1)] += pmf[z];
  }

  MarkovEstimate out;
  out.num_alternatives = y_count;
  out.pooled = opts.assume_stable;
  std::map<ChoiceSetMask, double> weight;
  std::map<ChoiceSetMask, Eigen::MatrixXd> trans_sum;
  std::map<ChoiceSetMask, Eigen::VectorXd> trans_mass;
  double used_mass = 0.0;
  for (int a = 0; a < y_count; ++a) {
    for (int b = 0; b < y_count; ++b) {
      MarkovPairReport rep;
      rep.previous_first = a + 1;
      rep.previous_second = b + 1;
      auto& probs = cond[a * y_count + b];
      rep.mass = std::accumulate(probs.begin(), probs.end(), 0.0);
      if (rep.mass < opts.min_pair_mass) {
        rep.skipped = true;
        rep.reason = "zero mass";
        out.pairs.push_back(std::move(rep));
        continue;
      }
      for (double& v : probs) v /= rep.mass;
      try {
        JointChoiceTensor t(y_count, grouping, probs);
        const auto rank = estimate_rank(t, opts.rank_tau);
        rep.estimate = spectral_identify(t, rank.d_hat, opts.spectral);
      } catch (const std::exception& e) {
        rep.skipped = true;
        rep.reason = e.what();
        out.pairs.push_back(std::move(rep));
        continue;
      }
      used_mass += rep.mass;
      const auto& f = rep.estimate.conditional(2 * K_d + 3);
      for (int k = 0; k < rep.estimate.num_menus(); ++k) {
        const auto& menu = rep.estimate.menus[k];
        const double w = rep.mass * rep.estimate.m(k);
        weight[menu] += w;
        auto& ts = trans_sum[menu];
        auto& tm = trans_mass[menu];
        if (ts.size() == 0) {
          ts = Eigen::MatrixXd::Zero(y_count, y_count);
          tm = Eigen::VectorXd::Zero(y_count);
        }
        ts.col(b) += w * f.col(k);
        tm(b) += w;
      }
      out.pairs.push_back(std::move(rep));
    }
  }
  if (!opts.assume_stable) return out;
  if (used_mass <= 0.0) throw IdentificationError("no conditioning pair could be identified");
  out.m.resize(static_cast<Eigen::Index>(weight.size()));
  int k = 0;
  for (const auto& [menu, w] : weight) {
    out.menus.push_back(menu);
    out.m(k++) = w / used_mass;
    Eigen::MatrixXd q = trans_sum[menu];
    for (int b = 0; b < y_count; ++b)
      if (trans_mass[menu](b) > 0.0) q.col(b) /= trans_mass[menu](b);
    out.transition.push_back(q);
  }
  return out;
}

}  // namespace choiceset
