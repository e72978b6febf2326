#pragma once

#include <string>
#include <vector>

namespace choiceset {

struct PanelRecord {
  std::string unit_id;
  std::string cell_id;
  /// Length-T sequence of 1-based choices.
  std::vector<int> choices;
};

/// Balanced panel of discrete choices. Every choice lies in 1..Y, every record
/// has T choices, and (cell_id, unit_id) pairs are unique.
class PanelDataset {
 public:
  PanelDataset(int num_alternatives, int num_periods, std::vector<PanelRecord> records);

  int num_alternatives() const noexcept { return num_alternatives_; }
  int num_periods() const noexcept { return num_periods_; }
  const std::vector<PanelRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }

  /// Distinct cell ids in order of first appearance.
  std::vector<std::string> cells() const;

 private:
  int num_alternatives_;
  int num_periods_;
  std::vector<PanelRecord> records_;
};

}  // namespace choiceset
