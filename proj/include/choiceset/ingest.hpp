#pragma once

#include <istream>
#include <map>
#include <string>
#include <vector>

#include "choiceset/panel.hpp"
#include "choiceset/tensor.hpp"

namespace choiceset {

/// Parses long-format panel CSV with header `unit_id,cell_id,t,choice`.
/// Lines starting with '#' and blank lines are skipped. Pass
/// `num_alternatives` = 0 to take Y from the largest observed choice.
/// Throws ParseError naming the offending line.
PanelDataset parse_panel_csv(std::istream& in, int num_alternatives = 0);

/// Writes `data` in the format read by parse_panel_csv.
void write_panel_csv(std::ostream& out, const PanelDataset& data);

/// Frequency estimator of the grouped joint pmf within one covariate cell.
/// Counts are integers until the final division. Throws DomainError for an
/// empty or unknown cell.
JointChoiceTensor empirical_tensor(const PanelDataset& data, const std::string& cell,
                                   const PeriodGrouping& grouping);

struct CellTensorSet {
  std::string cell_id;
  int num_units = 0;
  std::map<PeriodGrouping, JointChoiceTensor> tensors;
};

/// One CellTensorSet per cell, each holding a tensor per requested grouping.
std::vector<CellTensorSet> cell_tensors(const PanelDataset& data,
                                        const std::vector<PeriodGrouping>& groupings);

struct CellSummary {
  std::string cell_id;
  int num_units = 0;
  /// Share of all choices (pooled over periods) falling on each alternative.
  std::vector<double> alternative_frequencies;
  std::vector<int> never_observed;
  bool below_min_units = false;
};

struct PanelReport {
  int min_units = 200;
  std::vector<CellSummary> cells;
  std::vector<std::string> flagged_cells() const;
};

PanelReport validate_panel(const PanelDataset& data, int min_units = 200);

}  // namespace choiceset
