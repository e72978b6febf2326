#include "choiceset/panel.hpp"

#include <set>
#include <utility>

#include "choiceset/errors.hpp"

namespace choiceset {

PanelDataset::PanelDataset(int num_alternatives, int num_periods, std::vector<PanelRecord> records)
    : num_alternatives_(num_alternatives), num_periods_(num_periods), records_(std::move(records)) {
  if (num_alternatives_ < 1 || num_alternatives_ > 16) {
    throw DomainError("number of alternatives must be in 1..16");
  }
  if (num_periods_ < 1) throw DomainError("number of periods must be positive");
  std::set<std::pair<std::string, std::string>> keys;
  for (const auto& r : records_) {
    if (static_cast<int>(r.choices.size()) != num_periods_) {
      throw DomainError("unit " + r.unit_id + " has " + std::to_string(r.choices.size()) +
                        " choices, expected " + std::to_string(num_periods_));
    }
    for (int y : r.choices) {
      if (y < 1 || y > num_alternatives_) {
        throw DomainError("unit " + r.unit_id + ": choice out of range (" + std::to_string(y) + ")");
      }
    }
    if (!keys.emplace(r.cell_id, r.unit_id).second) {
      throw DomainError("duplicate unit " + r.unit_id + " in cell " + r.cell_id);
    }
  }
}

std::vector<std::string> PanelDataset::cells() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& r : records_) {
    if (seen.insert(r.cell_id).second) out.push_back(r.cell_id);
  }
  return out;
}

}  // namespace choiceset
