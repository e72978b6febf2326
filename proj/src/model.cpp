#include "choiceset/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "choiceset/errors.hpp"
#include "choiceset/rng.hpp"

namespace choiceset {
namespace {

constexpr double kSimplexTol = 1e-9;

void require_probability_vector(const Eigen::VectorXd& v, const std::string& what) {
  if (v.size() == 0) throw DomainError(what + " is empty");
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!(v(i) >= 0.0)) throw DomainError(what + " has a negative entry");
  }
  if (std::abs(v.sum() - 1.0) > kSimplexTol) {
    throw DomainError(what + " sums to " + std::to_string(v.sum()) + ", expected 1");
  }
}

}  // namespace

void DGPSpec::validate() const {
  if (choice_given_menu.cols() != menu_probs.size()) {
    throw DomainError("Pyd has " + std::to_string(choice_given_menu.cols()) +
                      " columns but Pd has " + std::to_string(menu_probs.size()) + " entries");
  }
  require_probability_vector(menu_probs, "Pd");
  for (Eigen::Index j = 0; j < choice_given_menu.cols(); ++j) {
    require_probability_vector(choice_given_menu.col(j), "Pyd column " + std::to_string(j + 1));
  }
}

std::vector<ChoiceSetMask> DGPSpec::menus() const {
  std::vector<ChoiceSetMask> out;
  const int y_count = static_cast<int>(choice_given_menu.rows());
  for (Eigen::Index j = 0; j < choice_given_menu.cols(); ++j) {
    std::uint32_t bits = 0;
    for (int y = 0; y < y_count; ++y) {
      if (choice_given_menu(y, j) > 0.0) bits |= 1u << y;
    }
    out.push_back(ChoiceSetMask::from_bits(bits, y_count));
  }
  return out;
}

DGPSpec dgp1() {
  DGPSpec d;
  d.choice_given_menu.resize(5, 5);
  d.choice_given_menu << 1, 0.6, 0.5, 0.4, 0.2,
                         0, 0.4, 0, 0, 0,
                         0, 0, 0.5, 0, 0,
                         0, 0, 0, 0.6, 0,
                         0, 0, 0, 0, 0.8;
  d.menu_probs.resize(5);
  d.menu_probs << 0.2, 0.15, 0.3, 0.15, 0.2;
  return d;
}

DGPSpec dgp2() {
  DGPSpec d;
  d.choice_given_menu.resize(5, 5);
  d.choice_given_menu << 1, 0.6, 0.5, 0.25, 0.1,
                         0, 0.4, 0.2, 0.35, 0.25,
                         0, 0, 0.3, 0.25, 0.15,
                         0, 0, 0, 0.15, 0.3,
                         0, 0, 0, 0, 0.2;
  d.menu_probs.resize(5);
  d.menu_probs << 0.2, 0.15, 0.3, 0.15, 0.2;
  return d;
}

MixtureModel::MixtureModel(int num_alternatives, std::vector<ChoiceSetMask> menus,
                           Eigen::VectorXd weights, std::vector<Eigen::MatrixXd> conditionals)
    : num_alternatives_(num_alternatives),
      menus_(std::move(menus)),
      weights_(std::move(weights)),
      conditionals_(std::move(conditionals)) {
  if (num_alternatives_ < 1 || num_alternatives_ > kMaxAlternatives) {
    throw DomainError("number of alternatives must be in 1..16");
  }
  const int d = static_cast<int>(menus_.size());
  if (d == 0) throw DomainError("model needs at least one menu");
  if (weights_.size() != d) throw DomainError("menu weights and menus differ in length");
  require_probability_vector(weights_, "menu weights");
  if (conditionals_.empty()) throw DomainError("model needs at least one period");
  std::set<std::uint32_t> seen;
  for (const auto& menu : menus_) {
    if (menu.num_alternatives() != num_alternatives_) {
      throw DomainError("menu " + menu.to_string() + " built for a different Y");
    }
    if (!seen.insert(menu.bits()).second) {
      throw DomainError("menus must be pairwise distinct; " + menu.to_string() + " repeats");
    }
  }
  for (std::size_t t = 0; t < conditionals_.size(); ++t) {
    const auto& f = conditionals_[t];
    if (f.rows() != num_alternatives_ || f.cols() != d) {
      throw DomainError("conditional for period " + std::to_string(t + 1) + " has wrong shape");
    }
    for (int j = 0; j < d; ++j) {
      const std::string where =
          "period " + std::to_string(t + 1) + ", menu " + menus_[j].to_string();
      require_probability_vector(f.col(j), "F at " + where);
      for (int y = 0; y < num_alternatives_; ++y) {
        const bool member = menus_[j].contains_index(y);
        if (!member && f(y, j) != 0.0) {
          throw DomainError("F is positive outside the menu at " + where);
        }
        if (member && !(f(y, j) > 0.0)) {
          throw DomainError("full support violated at " + where + ", alternative " +
                            std::to_string(y + 1));
        }
      }
    }
  }
}

MixtureModel MixtureModel::from_dgp(const DGPSpec& dgp, int num_periods) {
  dgp.validate();
  if (num_periods < 1) throw DomainError("number of periods must be positive");
  std::vector<Eigen::MatrixXd> f(num_periods, dgp.choice_given_menu);
  return MixtureModel(static_cast<int>(dgp.choice_given_menu.rows()), dgp.menus(),
                      dgp.menu_probs, std::move(f));
}

double eval_mixture_pmf(const MixtureModel& model, std::span<const int> choices) {
  if (static_cast<int>(choices.size()) != model.num_periods()) {
    throw DomainError("tuple has " + std::to_string(choices.size()) + " choices, model has " +
                      std::to_string(model.num_periods()) + " periods");
  }
  for (int y : choices) {
    if (y < 1 || y > model.num_alternatives()) {
      throw DomainError("choice " + std::to_string(y) + " outside 1.." +
                        std::to_string(model.num_alternatives()));
    }
  }
  double total = 0.0;
  for (int j = 0; j < model.num_menus(); ++j) {
    double term = model.weights()(j);
    for (int t = 0; t < model.num_periods(); ++t) term *= model.choice_prob(t + 1, choices[t], j);
    total += term;
  }
  return total;
}

Eigen::MatrixXd grouped_conditional(const MixtureModel& model, std::span<const int> periods) {
  const int y_count = model.num_alternatives();
  const int k = static_cast<int>(periods.size());
  const int n = outcome_count(y_count, k);
  Eigen::MatrixXd out(n, model.num_menus());
  for (int z = 0; z < n; ++z) {
    const auto tuple = decode_outcome(z, y_count, k);
    for (int j = 0; j < model.num_menus(); ++j) {
      double p = 1.0;
      for (int i = 0; i < k; ++i) p *= model.choice_prob(periods[i], tuple[i], j);
      out(z, j) = p;
    }
  }
  return out;
}

JointChoiceTensor build_population_tensor(const MixtureModel& model,
                                          const PeriodGrouping& grouping) {
  grouping.validate(model.num_periods());
  std::array<Eigen::MatrixXd, 3> g;
  for (int m = 0; m < 3; ++m) g[m] = grouped_conditional(model, grouping.groups[m]);
  const int n1 = static_cast<int>(g[0].rows());
  const int n2 = static_cast<int>(g[1].rows());
  const int n3 = static_cast<int>(g[2].rows());
  std::vector<double> probs(static_cast<std::size_t>(n1) * n2 * n3, 0.0);
  for (int j = 0; j < model.num_menus(); ++j) {
    const double w = model.weights()(j);
    std::size_t idx = 0;
    for (int a = 0; a < n1; ++a)
      for (int b = 0; b < n2; ++b) {
        const double ab = w * g[0](a, j) * g[1](b, j);
        for (int c = 0; c < n3; ++c) probs[idx++] += ab * g[2](c, j);
      }
  }
  return JointChoiceTensor(model.num_alternatives(), grouping, std::move(probs), 1e-12);
}

namespace {

// Draws one unit: menu index, then T choices (0-based) into `out`.
void draw_unit(const MixtureModel& model, std::uint64_t seed, int unit, std::vector<int>& out) {
  SplitMix64 rng(substream_seed(seed, static_cast<std::uint64_t>(unit)));
  const auto& w = model.weights();
  const int j = draw_categorical(rng, std::span<const double>(w.data(), w.size()));
  for (int t = 0; t < model.num_periods(); ++t) {
    const auto col = model.conditional(t + 1).col(j);
    out[t] = draw_categorical(rng, std::span<const double>(col.data(), col.size()));
  }
}

}  // namespace

PanelDataset sample_panel(const MixtureModel& model, int num_units, std::uint64_t seed,
                          const std::string& cell_id) {
  if (num_units < 1) throw DomainError("sample size must be at least 1");
  std::vector<PanelRecord> records;
  records.reserve(num_units);
  std::vector<int> choices(model.num_periods());
  for (int i = 0; i < num_units; ++i) {
    draw_unit(model, seed, i, choices);
    PanelRecord r{"u" + std::to_string(i), cell_id, choices};
    for (int& y : r.choices) ++y;
    records.push_back(std::move(r));
  }
  return PanelDataset(model.num_alternatives(), model.num_periods(), std::move(records));
}

JointChoiceTensor sample_tensor(const MixtureModel& model, int num_units, std::uint64_t seed,
                                const PeriodGrouping& grouping) {
  if (num_units < 1) throw DomainError("sample size must be at least 1");
  grouping.validate(model.num_periods());
  const int y_count = model.num_alternatives();
  std::array<int, 3> dims{};
  for (int m = 0; m < 3; ++m) dims[m] = outcome_count(y_count, grouping.group_size(m));
  std::vector<long long> counts(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2], 0);
  std::vector<int> choices(model.num_periods());
  for (int i = 0; i < num_units; ++i) {
    draw_unit(model, seed, i, choices);
    std::array<int, 3> z{};
    for (int m = 0; m < 3; ++m) {
      int idx = 0;
      for (int t : grouping.groups[m]) idx = idx * y_count + choices[t - 1];
      z[m] = idx;
    }
    ++counts[(static_cast<std::size_t>(z[0]) * dims[1] + z[1]) * dims[2] + z[2]];
  }
  std::vector<double> probs(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    probs[i] = static_cast<double>(counts[i]) / static_cast<double>(num_units);
  }
  return JointChoiceTensor(y_count, grouping, std::move(probs));
}

AssumptionReport check_assumptions(const MixtureModel& model, double eps) {
  AssumptionReport r;
  r.min_supported = std::numeric_limits<double>::infinity();
  r.full_support = true;
  for (int t = 1; t <= model.num_periods(); ++t) {
    for (int j = 0; j < model.num_menus(); ++j) {
      for (int y = 1; y <= model.num_alternatives(); ++y) {
        if (!model.menus()[j].contains(y)) continue;
        const double v = model.choice_prob(t, y, j);
        if (v < r.min_supported) {
          r.min_supported = v;
          r.argmin = {t, y, j, v};
        }
        if (!(v > 0.0)) r.full_support = false;
        if (v < eps) r.below_eps.push_back({t, y, j, v});
      }
    }
  }
  r.eps_separated = r.below_eps.empty();
  std::set<std::uint32_t> seen;
  r.menus_distinct = true;
  for (const auto& m : model.menus()) {
    if (!seen.insert(m.bits()).second) r.menus_distinct = false;
  }
  return r;
}

}  // namespace choiceset
