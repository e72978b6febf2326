#include "choiceset/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "choiceset/errors.hpp"

namespace choiceset {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool parse_int(const std::string& s, int& value) {
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, value);
  return ec == std::errc() && ptr == end;
}

struct PendingUnit {
  std::string unit_id;
  std::string cell_id;
  int first_line = 0;
  std::map<int, std::pair<int, int>> by_period;  // t -> (choice, line)
};

}  // namespace

PanelDataset parse_panel_csv(std::istream& in, int num_alternatives) {
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  std::vector<PendingUnit> units;
  std::unordered_map<std::string, std::size_t> index;  // cell \x1f unit -> position
  int max_choice = 0;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.find_first_not_of(" \t") == std::string::npos) continue;
    if (line[line.find_first_not_of(" \t")] == '#') continue;
    const auto fields = split_csv(line);
    if (!header_seen) {
      if (fields != std::vector<std::string>{"unit_id", "cell_id", "t", "choice"}) {
        throw ParseError("line " + std::to_string(line_no) +
                         ": expected header unit_id,cell_id,t,choice");
      }
      header_seen = true;
      continue;
    }
    if (fields.size() != 4) {
      throw ParseError("line " + std::to_string(line_no) + ": expected 4 fields, got " +
                       std::to_string(fields.size()));
    }
    int t = 0;
    int choice = 0;
    if (fields[0].empty()) throw ParseError("line " + std::to_string(line_no) + ": empty unit_id");
    if (!parse_int(fields[2], t) || t < 1) {
      throw ParseError("line " + std::to_string(line_no) + ": malformed period '" + fields[2] + "'");
    }
    if (!parse_int(fields[3], choice)) {
      throw ParseError("line " + std::to_string(line_no) + ": malformed choice '" + fields[3] + "'");
    }
    if (choice < 1 || (num_alternatives > 0 && choice > num_alternatives)) {
      throw ParseError("line " + std::to_string(line_no) + ": choice out of range (" +
                       fields[3] + ")");
    }
    max_choice = std::max(max_choice, choice);
    const std::string key = fields[1] + '\x1f' + fields[0];
    auto [it, inserted] = index.emplace(key, units.size());
    if (inserted) units.push_back({fields[0], fields[1], line_no, {}});
    auto& unit = units[it->second];
    if (!unit.by_period.emplace(t, std::make_pair(choice, line_no)).second) {
      throw ParseError("line " + std::to_string(line_no) + ": duplicate period " +
                       std::to_string(t) + " for unit " + unit.unit_id);
    }
  }
  if (!header_seen) throw ParseError("line 1: missing header unit_id,cell_id,t,choice");

  int num_periods = 0;
  for (const auto& u : units) num_periods = std::max(num_periods, u.by_period.rbegin()->first);
  std::vector<PanelRecord> records;
  records.reserve(units.size());
  for (const auto& u : units) {
    PanelRecord r{u.unit_id, u.cell_id, {}};
    for (int t = 1; t <= num_periods; ++t) {
      auto it = u.by_period.find(t);
      if (it == u.by_period.end()) {
        throw ParseError("line " + std::to_string(u.first_line) + ": missing period " +
                         std::to_string(t) + " for unit " + u.unit_id);
      }
      r.choices.push_back(it->second.first);
    }
    records.push_back(std::move(r));
  }
  const int y_count = num_alternatives > 0 ? num_alternatives : std::max(max_choice, 1);
  return PanelDataset(y_count, std::max(num_periods, 1), std::move(records));
}

void write_panel_csv(std::ostream& out, const PanelDataset& data) {
  out << "unit_id,cell_id,t,choice\n";
  for (const auto& r : data.records()) {
    for (std::size_t t = 0; t < r.choices.size(); ++t) {
      out << r.unit_id << ',' << r.cell_id << ',' << (t + 1) << ',' << r.choices[t] << '\n';
    }
  }
}

JointChoiceTensor empirical_tensor(const PanelDataset& data, const std::string& cell,
                                   const PeriodGrouping& grouping) {
  grouping.validate(data.num_periods());
  const int y_count = data.num_alternatives();
  std::array<int, 3> dims{};
  for (int m = 0; m < 3; ++m) dims[m] = outcome_count(y_count, grouping.group_size(m));
  std::vector<long long> counts(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2], 0);
  long long n = 0;
  for (const auto& r : data.records()) {
    if (r.cell_id != cell) continue;
    std::array<int, 3> z{};
    for (int m = 0; m < 3; ++m) {
      int idx = 0;
      for (int t : grouping.groups[m]) idx = idx * y_count + (r.choices[t - 1] - 1);
      z[m] = idx;
    }
    ++counts[(static_cast<std::size_t>(z[0]) * dims[1] + z[1]) * dims[2] + z[2]];
    ++n;
  }
  if (n == 0) throw DomainError("cell '" + cell + "' has no units");
  std::vector<double> probs(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    probs[i] = static_cast<double>(counts[i]) / static_cast<double>(n);
  }
  return JointChoiceTensor(y_count, grouping, std::move(probs));
}

std::vector<CellTensorSet> cell_tensors(const PanelDataset& data,
                                        const std::vector<PeriodGrouping>& groupings) {
  std::vector<CellTensorSet> out;
  for (const auto& cell : data.cells()) {
    CellTensorSet set;
    set.cell_id = cell;
    set.num_units = static_cast<int>(std::count_if(
        data.records().begin(), data.records().end(),
        [&](const PanelRecord& r) { return r.cell_id == cell; }));
    for (const auto& g : groupings) set.tensors.emplace(g, empirical_tensor(data, cell, g));
    out.push_back(std::move(set));
  }
  return out;
}

std::vector<std::string> PanelReport::flagged_cells() const {
  std::vector<std::string> out;
  for (const auto& c : cells) {
    if (c.below_min_units) out.push_back(c.cell_id);
  }
  return out;
}

PanelReport validate_panel(const PanelDataset& data, int min_units) {
  PanelReport report;
  report.min_units = min_units;
  const int y_count = data.num_alternatives();
  std::map<std::string, std::size_t> pos;
  for (const auto& cell : data.cells()) {
    pos[cell] = report.cells.size();
    CellSummary s;
    s.cell_id = cell;
    s.alternative_frequencies.assign(y_count, 0.0);
    report.cells.push_back(std::move(s));
  }
  for (const auto& r : data.records()) {
    auto& s = report.cells[pos[r.cell_id]];
    ++s.num_units;
    for (int y : r.choices) s.alternative_frequencies[y - 1] += 1.0;
  }
  for (auto& s : report.cells) {
    const double total = static_cast<double>(s.num_units) * data.num_periods();
    for (int y = 0; y < y_count; ++y) {
      if (s.alternative_frequencies[y] == 0.0) s.never_observed.push_back(y + 1);
      s.alternative_frequencies[y] /= total;
    }
    s.below_min_units = s.num_units < min_units;
  }
  return report;
}

}  // namespace choiceset
