#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "choiceset/choice_set.hpp"
#include "choiceset/panel.hpp"
#include "choiceset/tensor.hpp"

namespace choiceset {

/// Simulation design: column j of `choice_given_menu` is F(. | D_j) and its
/// zero pattern defines menu j; `menu_probs` is the distribution over menus.
struct DGPSpec {
  Eigen::MatrixXd choice_given_menu;  // Y x d, column-stochastic
  Eigen::VectorXd menu_probs;         // length d
  bool tie_F_across_t = true;

  /// Throws DomainError unless columns and weights are probability vectors.
  void validate() const;
  std::vector<ChoiceSetMask> menus() const;
};

/// The two designs used for the finite-sample experiments (Y = 5, five menus).
DGPSpec dgp1();
DGPSpec dgp2();

/// Finite mixture of latent menus. For each period t, `conditional(t)` is the
/// Y x d matrix of F_t(y | D_j); its zero pattern equals the menu of column j.
class MixtureModel {
 public:
  /// `conditionals` holds one Y x d matrix per period. Validates simplex
  /// constraints, structural zeros, full support and distinct menus.
  MixtureModel(int num_alternatives, std::vector<ChoiceSetMask> menus, Eigen::VectorXd weights,
               std::vector<Eigen::MatrixXd> conditionals);

  /// T periods, replicating the DGP matrix in each period when tied.
  static MixtureModel from_dgp(const DGPSpec& dgp, int num_periods = 3);

  int num_alternatives() const noexcept { return num_alternatives_; }
  int num_periods() const noexcept { return static_cast<int>(conditionals_.size()); }
  int num_menus() const noexcept { return static_cast<int>(menus_.size()); }
  const std::vector<ChoiceSetMask>& menus() const noexcept { return menus_; }
  const Eigen::VectorXd& weights() const noexcept { return weights_; }
  /// Y x d matrix for 1-based period t.
  const Eigen::MatrixXd& conditional(int t) const { return conditionals_.at(t - 1); }

  /// F_t(y | D_j) with 1-based t and y, 0-based menu index j.
  double choice_prob(int t, int y, int j) const { return conditionals_[t - 1](y - 1, j); }

 private:
  int num_alternatives_;
  std::vector<ChoiceSetMask> menus_;
  Eigen::VectorXd weights_;
  std::vector<Eigen::MatrixXd> conditionals_;
};

/// sum_j m_j prod_t F_t(y_t | D_j) for a length-T tuple of 1-based choices.
double eval_mixture_pmf(const MixtureModel& model, std::span<const int> choices);

/// Exact population pmf of the grouped outcomes defined by `grouping`.
JointChoiceTensor build_population_tensor(const MixtureModel& model, const PeriodGrouping& grouping);

/// Component pmfs of a grouped outcome: column j is P(z = . | D_j) for the
/// periods in `periods`.
Eigen::MatrixXd grouped_conditional(const MixtureModel& model, std::span<const int> periods);

/// n i.i.d. units with ids "u<i>" in cell `cell_id`. Unit i draws from its
/// own substream of `seed`, so growing n leaves earlier units unchanged.
PanelDataset sample_panel(const MixtureModel& model, int num_units, std::uint64_t seed,
                          const std::string& cell_id = "0");

/// Draws the same units as sample_panel(model, n, seed) and counts them
/// directly into a tensor for `grouping`, skipping the record construction.
JointChoiceTensor sample_tensor(const MixtureModel& model, int num_units, std::uint64_t seed,
                                const PeriodGrouping& grouping);

struct CellLocation {
  int period;  // 1-based
  int alternative;  // 1-based
  int menu;  // 0-based menu index
  double value;
};

struct AssumptionReport {
  double min_supported = 0.0;
  CellLocation argmin{};
  bool full_support = false;    // every supported cell > 0
  bool eps_separated = false;   // every supported cell >= eps
  bool menus_distinct = false;
  std::vector<CellLocation> below_eps;
  bool ok() const { return full_support && eps_separated && menus_distinct; }
};

/// Full-support and eps-separation diagnostics over supported cells.
AssumptionReport check_assumptions(const MixtureModel& model, double eps);

}  // namespace choiceset
