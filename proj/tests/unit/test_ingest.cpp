#include <algorithm>
#include <sstream>

#include "doctest.h"

#include "choiceset/errors.hpp"
#include "choiceset/ingest.hpp"
#include "choiceset/model.hpp"

using namespace choiceset;

namespace {

PanelDataset parse(const std::string& text, int y = 0) {
  std::istringstream in(text);
  return parse_panel_csv(in, y);
}

std::string parse_error(const std::string& text, int y = 0) {
  try {
    parse(text, y);
  } catch (const ParseError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("parse well-formed panel") {
  const auto d = parse(
      "# comment\n"
      "unit_id,cell_id,t,choice\n"
      "a,c1,1,1\na,c1,2,2\na,c1,3,3\n"
      "b,c1,3,1\nb,c1,1,2\nb,c1,2,2\n"
      "\n"
      "c,c2,1,5\nc,c2,2,5\nc,c2,3,4\n",
      5);
  CHECK(d.size() == 3);
  CHECK(d.num_periods() == 3);
  CHECK(d.records()[1].choices == std::vector<int>{2, 2, 1});
  CHECK(d.cells() == std::vector<std::string>{"c1", "c2"});
}

TEST_CASE("parse errors name the problem and the line") {
  const auto missing = parse_error("unit_id,cell_id,t,choice\nu,c,1,1\nu,c,3,1\nv,c,1,1\nv,c,2,1\nv,c,3,1\n");
  CHECK(missing.find("missing period 2 for unit u") != std::string::npos);
  CHECK(missing.find("line 2") != std::string::npos);

  const auto range = parse_error("unit_id,cell_id,t,choice\nu,c,1,6\n", 5);
  CHECK(range.find("choice out of range") != std::string::npos);
  CHECK(range.find("line 2") != std::string::npos);

  const auto dup = parse_error("unit_id,cell_id,t,choice\nu,c,1,1\nu,c,1,2\n");
  CHECK(dup.find("line 3") != std::string::npos);
  CHECK(dup.find("duplicate period 1") != std::string::npos);

  CHECK(parse_error("unit_id,cell_id,t,choice\nu,c,1\n").find("line 2") != std::string::npos);
  CHECK(parse_error("unit_id,cell_id,t,choice\nu,c,x,1\n").find("malformed period") != std::string::npos);
  CHECK(parse_error("id,t,choice\n").find("header") != std::string::npos);
}

TEST_CASE("csv round trip") {
  const auto model = MixtureModel::from_dgp(dgp1());
  const auto d = sample_panel(model, 50, 3, "m1");
  std::stringstream ss;
  write_panel_csv(ss, d);
  const auto back = parse_panel_csv(ss, 5);
  REQUIRE(back.size() == d.size());
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(back.records()[i].choices == d.records()[i].choices);
}

TEST_CASE("empirical tensor by counting") {
  std::vector<PanelRecord> recs{{"1", "x", {1, 1, 1}}, {"2", "x", {1, 1, 1}},
                                {"3", "x", {2, 1, 1}}, {"4", "x", {1, 2, 2}}};
  const PanelDataset d(2, 3, recs);
  const auto t = empirical_tensor(d, "x", PeriodGrouping::triple());
  CHECK(t(0, 0, 0) == 0.5);
  CHECK(t(1, 0, 0) == 0.25);
  CHECK(t(0, 1, 1) == 0.25);
  double rest = 0.0;
  for (double v : t.data()) rest += v;
  CHECK(rest == 1.0);
  CHECK_THROWS_AS(empirical_tensor(d, "nope", PeriodGrouping::triple()), DomainError);

  const PanelDataset same(3, 3, {{"1", "x", {3, 2, 1}}, {"2", "x", {3, 2, 1}}});
  CHECK(empirical_tensor(same, "x", PeriodGrouping::triple())(2, 1, 0) == 1.0);
}

TEST_CASE("empirical tensor properties") {
  const auto model = MixtureModel::from_dgp(dgp2());
  const auto d = sample_panel(model, 500, 5);
  auto recs = d.records();
  std::reverse(recs.begin(), recs.end());
  const PanelDataset permuted(5, 3, recs);
  const auto g = PeriodGrouping::triple();
  const auto a = empirical_tensor(d, "0", g);
  const auto b = empirical_tensor(permuted, "0", g);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));

  for (int mode = 0; mode < 3; ++mode) {
    std::vector<double> freq(5, 0.0);
    for (const auto& r : d.records()) freq[r.choices[mode] - 1] += 1.0 / 500;
    const auto marg = a.marginal(mode);
    for (int y = 0; y < 5; ++y) CHECK(marg(y) == doctest::Approx(freq[y]).epsilon(1e-12));
  }
}

TEST_CASE("cell tensor sets") {
  std::vector<PanelRecord> recs{{"1", "x", {1, 1, 1}}, {"1", "y", {2, 2, 2}}, {"2", "y", {2, 1, 2}}};
  const auto sets = cell_tensors(PanelDataset(2, 3, recs), {PeriodGrouping::triple()});
  REQUIRE(sets.size() == 2);
  CHECK(sets[1].cell_id == "y");
  CHECK(sets[1].num_units == 2);
  CHECK(sets[1].tensors.at(PeriodGrouping::triple())(1, 0, 1) == 0.5);
}

TEST_CASE("panel validation") {
  std::vector<PanelRecord> recs;
  for (int i = 0; i < 150; ++i) recs.push_back({std::to_string(i), "small", {1, 2, 1}});
  const auto report = validate_panel(PanelDataset(3, 3, recs));
  REQUIRE(report.cells.size() == 1);
  CHECK(report.cells[0].below_min_units);
  CHECK(report.flagged_cells() == std::vector<std::string>{"small"});
  CHECK(report.cells[0].never_observed == std::vector<int>{3});
  CHECK(report.cells[0].alternative_frequencies[0] == doctest::Approx(2.0 / 3.0));

  CHECK(validate_panel(PanelDataset(3, 3, {})).cells.empty());
  CHECK_THROWS_AS(PanelDataset(3, 3, {{"a", "x", {1, 2}}}), DomainError);
  CHECK_THROWS_AS(PanelDataset(3, 3, {{"a", "x", {1, 2, 1}}, {"a", "x", {1, 1, 1}}}), DomainError);
}
