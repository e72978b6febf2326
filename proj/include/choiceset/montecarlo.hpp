#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "choiceset/estimator.hpp"
#include "choiceset/model.hpp"

namespace choiceset {

struct RecoveryMetrics {
  bool all_correct = false;
  int n_correct = 0;
};

/// n_correct counts estimated menus equal to some true menu; all_correct iff
/// the two collections are equal as sets.
RecoveryMetrics set_recovery_metrics(const std::vector<ChoiceSetMask>& estimated,
                                     const std::vector<ChoiceSetMask>& truth);

struct ParameterStats {
  std::string label;
  double truth = 0.0;
  double bias = 0.0;
  double rmse = 0.0;
  /// Replications that contributed.
  int count = 0;
  /// Replications skipped because the parameter's menu was not estimated.
  int excluded = 0;
};

struct ParameterTables {
  /// m(D_j) in the truth's column order, labels "D1".."Dd".
  std::vector<ParameterStats> m;
  /// F_1(i | D_j) for every member i of D_j except the largest, labels "(i,j)".
  std::vector<ParameterStats> F1;
};

/// Bias and RMSE across replications after aligning estimated components to
/// the truth by menu mask. Null entries (failed replications) are skipped.
ParameterTables bias_rmse(const std::vector<const MixtureEstimate*>& estimates, const MixtureModel& truth);

struct EstimatorSummary {
  double percent_all_correct = 0.0;
  /// Binomial standard error of the percentage.
  double percent_se = 0.0;
  double average_correct = 0.0;
  ParameterTables parameters;
};

struct MCCell {
  long long n = 0;
  int replications = 0;
  int failures = 0;
  std::vector<std::string> failure_messages;
  /// Replications whose estimated rank differed from the true menu count.
  int rank_mismatches = 0;
  EstimatorSummary step1;
  EstimatorSummary step2;
  double mean_seconds = 0.0;
  double max_seconds = 0.0;
};

struct MCReport {
  std::string dgp_name;
  std::vector<long long> n_list;
  int replications = 0;
  std::uint64_t seed = 0;
  int num_menus = 0;
  std::vector<MCCell> cells;
  double total_seconds = 0.0;
  int jobs = 1;
};

/// Equality of everything except wall-clock fields.
bool same_results(const MCReport& a, const MCReport& b);

struct MCOptions {
  int jobs = 1;
  /// Estimate with F tied across periods when the design ties it.
  bool tie_from_dgp = true;
  /// Skip rank estimation and use this many components.
  std::optional<int> fixed_d_hat;
  /// Relative singular-value cutoff for d_hat. The default is the plain
  /// numerical rank of the sample pair matrix, an upper bound on the menu
  /// count; the cardinality constraint then trims the surplus.
  double rank_tau = 1e-10;
};

/// Seed of replication `rep` at sample size `n`; independent of the n grid.
std::uint64_t replication_seed(std::uint64_t master, long long n, int rep);

/// Samples `reps` panels of T = 3 periods per sample size, runs the pipeline
/// and scores Step-1 and Step-2 against the design. Estimator failures are
/// counted per cell.
MCReport run_mc(const DGPSpec& dgp, const std::string& name, const std::vector<long long>& n_list, int reps,
                const FitConfig& cfg, std::uint64_t seed, const MCOptions& opts = {});

enum class MCTable { percent_correct, average_correct, bias_m, rmse_m, bias_F, rmse_F };

/// Parses "1", "2", "bias_m", "rmse_m", "bias_F", "rmse_F".
MCTable parse_mc_table(const std::string& name);
std::string mc_table_name(MCTable table);

/// Rounded presentation copy: one row per estimator, one column per sample size.
std::string mc_table_csv(const MCReport& report, MCTable table);

}  // namespace choiceset
