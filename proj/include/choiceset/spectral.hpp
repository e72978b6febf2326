#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "choiceset/choice_set.hpp"
#include "choiceset/model.hpp"
#include "choiceset/tensor.hpp"

namespace choiceset {

/// Recovered mixture. F[i] is the Y x d matrix for 1-based period periods[i].
struct MixtureEstimate {
  struct Diagnostics {
    double pivot_condition = 0.0;
    double max_imag_discarded = 0.0;
    double min_eigvec_entry = 0.0;
    /// Sum of squared differences between the input tensor and the fitted one.
    double residual = 0.0;
    /// Supported cells of F that came out exactly 0.
    bool degenerate = false;
    std::vector<std::string> warnings;
  };

  int num_alternatives = 0;
  std::vector<ChoiceSetMask> menus;
  Eigen::VectorXd m;
  std::vector<int> periods;
  std::vector<Eigen::MatrixXd> F;
  Diagnostics diagnostics;

  int num_menus() const { return static_cast<int>(menus.size()); }
  /// F for 1-based period t; throws DomainError if t was not estimated.
  const Eigen::MatrixXd& conditional(int t) const;
  /// Reorders components so menus ascend by bit pattern.
  void sort_menus();
};

struct RankReport {
  int d_hat = 0;
  std::vector<double> singular_values;
  /// d_hat equals the smaller dimension of L12, so the true count may be larger.
  bool possibly_under_detected = false;
};

inline constexpr double kDefaultRankTau = 1e-3;

/// Counts singular values of L12 above tau * sigma_1. Throws DomainError for an
/// all-zero matrix or tau outside (0,1).
RankReport estimate_rank(const JointChoiceTensor& tensor, double tau = kDefaultRankTau);
RankReport estimate_rank(const Eigen::MatrixXd& pair_matrix, double tau = kDefaultRankTau);

struct PivotSelection {
  std::vector<int> rows;
  std::vector<int> cols;
  double condition_number = 0.0;
};

/// Picks d rows and d columns of L12 by column-pivoted QR of L12^T and L12.
/// Throws IdentificationError if the selected block is numerically singular
/// (reciprocal condition below `rcond_tol`).
PivotSelection select_pivot_outcomes(const Eigen::MatrixXd& pair_matrix, int d_hat,
                                     double rcond_tol = 1e-10);

struct SpectralOptions {
  double zero_tol = 1e-6;
  double imag_tol = 1e-6;
  double rcond_tol = 1e-10;
  /// Two components whose slice diagonals agree within this bound for every
  /// alternative cannot be separated.
  double tie_tol = 1e-9;
  std::uint64_t seed = 0x5eed;
};

/// Eigendecomposition recovery of (menus, m, F) from a tensor whose third mode
/// is a single period. Throws IllConditionedError or IdentificationError.
MixtureEstimate spectral_identify(const JointChoiceTensor& tensor, int d_hat,
                                  const SpectralOptions& opts = {});

struct LinearIndependenceReport {
  int K = 0;
  int rank = 0;
  int num_menus = 0;
  double smallest_singular_value = 0.0;
  bool full_rank = false;
  bool nested = false;
  bool excluded_choices = false;
  /// Menus can be ordered so each owns an alternative absent from all later
  /// ones; implies a triangular G with positive diagonal when K = 1.
  bool triangular = false;
  bool K_at_least_Y = false;
};

/// Rank of G = [P(y(1..K) | D)] built from the model's first K periods.
LinearIndependenceReport lin_indep_check(const MixtureModel& model, int K, double tol = 1e-10);
/// Rank of an explicit G (outcomes x menus); structural flags use `menus` when given.
LinearIndependenceReport lin_indep_check(const Eigen::MatrixXd& G,
                                         const std::vector<ChoiceSetMask>& menus = {},
                                         double tol = 1e-10);

bool menus_nested(const std::vector<ChoiceSetMask>& menus);
bool menus_have_excluded_choices(const std::vector<ChoiceSetMask>& menus);
bool menus_triangular(const std::vector<ChoiceSetMask>& menus);

/// First-order Markov choices within each menu. transition[j](y, y') is
/// P(y_t = y | y_{t-1} = y', D_j), stationary over t.
struct MarkovModel {
  int num_alternatives = 0;
  int num_periods = 0;
  std::vector<ChoiceSetMask> menus;
  Eigen::VectorXd m;
  std::vector<Eigen::VectorXd> initial;
  std::vector<Eigen::MatrixXd> transition;

  /// Throws DomainError on simplex or structural-zero violations.
  void validate() const;
};

/// Joint pmf of (y_1..y_T), indexed like encode_outcome.
std::vector<double> markov_population_pmf(const MarkovModel& model);

/// Empirical pmf of full choice histories in one cell.
std::vector<double> empirical_joint_pmf(const PanelDataset& data, const std::string& cell);

struct MarkovPairReport {
  int previous_first = 0;  // y at period K_d + 1, 1-based
  int previous_second = 0;  // y at period 2 K_d + 2, 1-based
  double mass = 0.0;
  bool skipped = false;
  std::string reason;
  MixtureEstimate estimate;
};

struct MarkovEstimate {
  int num_alternatives = 0;
  std::vector<ChoiceSetMask> menus;
  Eigen::VectorXd m;
  /// transition[j](y, y'); column y' is zero when y' was never a conditioning
  /// value with D_j present.
  std::vector<Eigen::MatrixXd> transition;
  std::vector<MarkovPairReport> pairs;
  bool pooled = true;
};

struct MarkovOptions {
  SpectralOptions spectral;
  double rank_tau = kDefaultRankTau;
  double min_pair_mass = 1e-12;
  /// Pool transitions across conditioning pairs (distribution stability).
  bool assume_stable = true;
};

/// Runs spectral_identify on each conditional tensor of
/// (y(1..K_d), y(K_d+2..2K_d+1), y_{2K_d+3}) given (y_{K_d+1}, y_{2K_d+2}) and
/// aggregates the pieces. Requires T >= 2 K_d + 3.
MarkovEstimate markov_identify(int num_alternatives, int num_periods, std::span<const double> pmf,
                               int K_d, const MarkovOptions& opts = {});

}  // namespace choiceset
