#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "choiceset/choice_set.hpp"
#include "choiceset/simplex.hpp"
#include "choiceset/spectral.hpp"
#include "choiceset/tensor.hpp"

namespace choiceset {

enum class Objective { euclidean, kullback_leibler };
enum class TrimMode { fixed, vanishing };

/// How dictionary columns absent from the Step-1 solution are initialized
/// before the masked refit.
enum class Step2Init { nearest, uniform, marginal };

struct FitConfig {
  double eps = 0.01;
  /// vanishing uses log(log n)/sqrt(n) with n = sample_size.
  TrimMode trim_mode = TrimMode::fixed;
  long long sample_size = 0;
  int starts = 20;
  int max_iter = 3000;
  double tol = 1e-10;
  std::uint64_t seed = 1;
  bool tie_F_across_t = false;
  Objective objective = Objective::euclidean;
  /// Alternatives (bit y-1 for alternative y) assumed to be in every menu.
  std::uint32_t required_bits = 0;
  double rank_tau = kDefaultRankTau;
  /// Adds a spectral start to the Step-1 multistart when it succeeds.
  bool spectral_start = false;
  Step2Init step2_init = Step2Init::nearest;
  /// Mass moved from Step-1 components onto the remaining dictionary columns
  /// in the Step-2 warm start.
  double step2_spread = 0.0;
  /// Random restarts added to the warm start in the final masked fit.
  int final_starts = 2;
  BestSubsetOptions mio;

  /// Throws DomainError unless eps lies in (0, 1/Y) and starts >= 1.
  void validate(int num_alternatives) const;
  double effective_eps() const;
};

/// Factor matrices over the three tensor modes (rows = grouped outcomes) and
/// component weights.
struct CpFactors {
  std::array<Eigen::MatrixXd, 3> F;
  Eigen::VectorXd M;
};

struct FitTrace {
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  /// Objective after each sweep of the best start.
  std::vector<double> history;
};

struct Step1Result {
  CpFactors factors;
  FitTrace trace;
  int best_start = 0;
  /// True when the iteration cap stopped the best start.
  bool warning = false;
};

/// Unmasked simplex-constrained trilinear least squares with multistarts.
Step1Result step1_fit(const JointChoiceTensor& tensor, int d_hat, const FitConfig& cfg);

/// Per-period F of a factor set: grouped modes are marginalized to periods.
/// Returned in period order together with the period labels.
std::vector<Eigen::MatrixXd> factors_by_period(const JointChoiceTensor& tensor, const CpFactors& f,
                                               std::vector<int>* periods = nullptr);

struct TrimResult {
  /// Trimmed, renormalized per-period F for the kept components.
  std::vector<Eigen::MatrixXd> F;
  std::vector<ChoiceSetMask> menus;
  /// Input column behind each kept component.
  std::vector<int> kept;
  /// For every input column, the kept component carrying its menu.
  std::vector<int> assignment;
  std::vector<int> dropped;
};

/// Entries below eps become 0 and each column is renormalized per period. The
/// menu is the union of surviving alternatives across periods plus
/// `required_bits`. Columns with repeated menus are dropped. Throws
/// DomainError("degenerate component") if a column has no entry >= eps.
TrimResult trim_normalize(const std::vector<Eigen::MatrixXd>& F, double eps,
                          std::uint32_t required_bits = 0);

struct Step2Fit {
  std::vector<ChoiceSetMask> dictionary;
  CpFactors factors;
  FitTrace trace;
};

/// Masked refit over every menu of the dictionary (all nonempty subsets that
/// contain `cfg.required_bits`), warm-started from the given components.
Step2Fit step2_masked_fit(const JointChoiceTensor& tensor, const std::vector<ChoiceSetMask>& start_menus,
                          const CpFactors& start, const FitConfig& cfg);

struct BestSubsetSolution {
  std::vector<ChoiceSetMask> dictionary;
  std::vector<int> B;
  Eigen::VectorXd M;
  double objective = 0.0;
  bool optimal = false;
  MioMethod method = MioMethod::exhaustive;
  long long nodes = 0;
  std::vector<ChoiceSetMask> selected() const;
};

/// Cardinality-constrained weights over the fixed Step-2 columns.
BestSubsetSolution best_subset_select(const JointChoiceTensor& tensor, const Step2Fit& step2, int d_hat,
                                      const FitConfig& cfg);

/// Gram matrix and linear term of the weight problem for fixed columns:
/// residual(M) = M^T H M - 2 b^T M + c.
void weight_problem(const JointChoiceTensor& tensor, const std::array<Eigen::MatrixXd, 3>& F,
                    Eigen::MatrixXd& H, Eigen::VectorXd& b, double& c);

/// Masked fit for a fixed list of menus. `warm` (same column order) is used as
/// one start when given.
MixtureEstimate final_fit(const JointChoiceTensor& tensor, const std::vector<ChoiceSetMask>& menus,
                          const FitConfig& cfg, const CpFactors* warm = nullptr);

/// Objective of `f` against `tensor` (Euclidean).
double cp_residual(const JointChoiceTensor& tensor, const CpFactors& f);

struct BruteForceResult {
  MixtureEstimate estimate;
  unsigned long long combinations = 0;
  unsigned long long fitted = 0;
  unsigned long long pruned = 0;
};

inline constexpr unsigned long long kDefaultBruteForceBudget = 100000;

/// Straightforward estimator: the best masked fit over every d_hat-subset of
/// candidate menus (all 2^Y - 1 when empty). Throws BudgetExceededError with
/// the combination count when it exceeds `budget`.
BruteForceResult brute_force_estimate(const JointChoiceTensor& tensor, int d_hat,
                                      const std::vector<ChoiceSetMask>& candidates,
                                      const FitConfig& cfg,
                                      unsigned long long budget = kDefaultBruteForceBudget);

struct PoolReport {
  std::vector<ChoiceSetMask> menus;
  bool full_variation = false;
};

/// Union of the menus estimated across cells.
PoolReport pool_supports(const std::vector<MixtureEstimate>& estimates);

struct PipelineResult {
  RankReport rank;
  int d_hat = 0;
  Step1Result step1;
  TrimResult trim;
  MixtureEstimate step1_estimate;
  Step2Fit step2;
  BestSubsetSolution subset;
  MixtureEstimate final_estimate;
};

/// Rank estimate (unless d_hat is given), Step-1, trimming, Step-2 masked fit,
/// best-subset selection and final fit.
PipelineResult estimate_pipeline(const JointChoiceTensor& tensor, const FitConfig& cfg,
                                 std::optional<int> d_hat = std::nullopt);

}  // namespace choiceset
