#include <cmath>
#include <vector>

#include "doctest.h"

#include "choiceset/errors.hpp"
#include "choiceset/ingest.hpp"
#include "choiceset/model.hpp"

using namespace choiceset;

namespace {

// Independent evaluator: long-double sum over menus straight from the DGP matrices.
long double oracle_pmf(const DGPSpec& dgp, const std::vector<int>& ys) {
  long double total = 0.0L;
  for (Eigen::Index j = 0; j < dgp.menu_probs.size(); ++j) {
    long double term = dgp.menu_probs(j);
    for (int y : ys) term *= dgp.choice_given_menu(y - 1, j);
    total += term;
  }
  return total;
}

MixtureModel two_alternative_model() {
  const int ones[] = {1};
  const int both[] = {1, 2};
  Eigen::MatrixXd f(2, 2);
  f << 1.0, 0.4,
       0.0, 0.6;
  Eigen::VectorXd m(2);
  m << 0.3, 0.7;
  return MixtureModel(2, {ChoiceSetMask::from_alternatives(ones, 2),
                          ChoiceSetMask::from_alternatives(both, 2)},
                      m, std::vector<Eigen::MatrixXd>(3, f));
}

MixtureModel single_menu_model(int y_count, int member, int periods = 3) {
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(y_count, 1);
  f(member - 1, 0) = 1.0;
  const int alts[] = {member};
  return MixtureModel(y_count, {ChoiceSetMask::from_alternatives(alts, y_count)},
                      Eigen::VectorXd::Ones(1), std::vector<Eigen::MatrixXd>(periods, f));
}

}  // namespace

TEST_CASE("mixture pmf at the all-ones tuple of the first design") {
  const auto model = MixtureModel::from_dgp(dgp1());
  const std::vector<int> ones{1, 1, 1};
  const double expected = static_cast<double>(oracle_pmf(dgp1(), ones));
  CHECK(expected == doctest::Approx(0.2811).epsilon(1e-15));
  CHECK(eval_mixture_pmf(model, ones) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("mixture pmf trivial cases") {
  const auto model = MixtureModel::from_dgp(dgp1());
  const std::vector<int> spread{2, 3, 4};
  CHECK(eval_mixture_pmf(model, spread) == 0.0);
  CHECK(eval_mixture_pmf(single_menu_model(3, 1), std::vector<int>{1, 1, 1}) == 1.0);
  CHECK_THROWS_AS(eval_mixture_pmf(model, std::vector<int>{1, 6, 1}), DomainError);
  CHECK_THROWS_AS(eval_mixture_pmf(model, std::vector<int>{1, 1}), DomainError);
}

TEST_CASE("pmf sums to one over every tuple") {
  for (const auto& dgp : {dgp1(), dgp2()}) {
    const auto model = MixtureModel::from_dgp(dgp, 4);
    long double total = 0.0L;
    for (int z = 0; z < 625; ++z) total += eval_mixture_pmf(model, decode_outcome(z, 5, 4));
    CHECK(static_cast<double>(total) == doctest::Approx(1.0).epsilon(1e-13));
  }
}

TEST_CASE("population tensor entries") {
  const auto t1 = build_population_tensor(MixtureModel::from_dgp(dgp1()), PeriodGrouping::triple());
  CHECK(t1(0, 0, 0) == doctest::Approx(0.2811).epsilon(1e-14));
  CHECK(t1.total_mass() == doctest::Approx(1.0).epsilon(1e-14));

  const auto t2 = build_population_tensor(two_alternative_model(), PeriodGrouping::triple());
  CHECK(t2(0, 0, 0) == doctest::Approx(0.3 + 0.7 * 0.4 * 0.4 * 0.4).epsilon(1e-15));
  CHECK(t2(0, 0, 0) == doctest::Approx(0.3448).epsilon(1e-14));

  PeriodGrouping overlap{{std::vector<int>{1}, std::vector<int>{1}, std::vector<int>{3}}};
  CHECK_THROWS_AS(build_population_tensor(two_alternative_model(), overlap), DomainError);
}

TEST_CASE("single-menu tensor is the outer product of its marginals") {
  Eigen::MatrixXd f(3, 1);
  f << 0.2, 0.3, 0.5;
  const int all[] = {1, 2, 3};
  MixtureModel model(3, {ChoiceSetMask::from_alternatives(all, 3)}, Eigen::VectorXd::Ones(1),
                     std::vector<Eigen::MatrixXd>(3, f));
  const auto t = build_population_tensor(model, PeriodGrouping::triple());
  const auto a = t.marginal(0), b = t.marginal(1), c = t.marginal(2);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) CHECK(t(i, j, k) == doctest::Approx(a(i) * b(j) * c(k)));
}

TEST_CASE("tensor marginals equal per-period mixture marginals") {
  const auto model = MixtureModel::from_dgp(dgp2(), 5);
  PeriodGrouping g{{std::vector<int>{1, 2}, std::vector<int>{3, 4}, std::vector<int>{5}}};
  const auto t = build_population_tensor(model, g);
  const Eigen::VectorXd single = dgp2().choice_given_menu * dgp2().menu_probs;
  CHECK((t.marginal(2) - single).cwiseAbs().maxCoeff() < 1e-14);
  // Mode 0 encodes (y1, y2); summing out y2 gives the period-1 marginal.
  const auto m0 = t.marginal(0);
  for (int y = 0; y < 5; ++y) {
    double s = 0.0;
    for (int y2 = 0; y2 < 5; ++y2) s += m0(y * 5 + y2);
    CHECK(s == doctest::Approx(single(y)).epsilon(1e-13));
  }
}

TEST_CASE("model construction enforces invariants") {
  const int a12[] = {1, 2};
  Eigen::MatrixXd f(2, 1);
  f << 0.5, 0.5;
  const auto menu = ChoiceSetMask::from_alternatives(a12, 2);
  CHECK_THROWS_AS(MixtureModel(2, {menu, menu}, Eigen::Vector2d(0.5, 0.5),
                               {Eigen::MatrixXd::Constant(2, 2, 0.5)}),
                  DomainError);
  Eigen::MatrixXd zero_inside(2, 1);
  zero_inside << 1.0, 0.0;
  CHECK_THROWS_AS(MixtureModel(2, {menu}, Eigen::VectorXd::Ones(1), {zero_inside}), DomainError);
  CHECK_THROWS_AS(MixtureModel(2, {menu}, Eigen::VectorXd::Constant(1, 0.9), {f}), DomainError);
  CHECK_THROWS_AS(ChoiceSetMask::from_bits(0, 3), DomainError);
  CHECK_THROWS_AS(ChoiceSetMask::from_bits(1, 17), DomainError);
}

TEST_CASE("sampling: degenerate menu, determinism, marginal") {
  const auto single = sample_panel(single_menu_model(4, 2), 5, 11);
  CHECK(single.size() == 5);
  for (const auto& r : single.records())
    for (int y : r.choices) CHECK(y == 2);

  const auto model = MixtureModel::from_dgp(dgp1());
  const auto a = sample_panel(model, 300, 42);
  const auto b = sample_panel(model, 300, 42);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.records()[i].choices == b.records()[i].choices);

  // Growing n keeps earlier units.
  const auto c = sample_panel(model, 400, 42);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.records()[i].choices == c.records()[i].choices);

  const int n = 50000;
  const auto big = sample_panel(model, n, 2024);
  double hits = 0.0;
  for (const auto& r : big.records()) hits += r.choices[0] == 1;
  const double p = (dgp1().choice_given_menu * dgp1().menu_probs)(0);
  CHECK(p == doctest::Approx(0.54).epsilon(1e-15));
  CHECK(std::abs(hits / n - p) < 3.0 * std::sqrt(p * (1 - p) / n));
}

TEST_CASE("sample_tensor matches the empirical tensor of sample_panel") {
  const auto model = MixtureModel::from_dgp(dgp2());
  const auto g = PeriodGrouping::triple();
  const auto panel = sample_panel(model, 2000, 9);
  const auto direct = sample_tensor(model, 2000, 9, g);
  const auto via = empirical_tensor(panel, "0", g);
  for (std::size_t i = 0; i < direct.size(); ++i) CHECK(direct.data()[i] == via.data()[i]);
}

TEST_CASE("empirical tensor converges to the population tensor") {
  const auto model = MixtureModel::from_dgp(dgp1());
  const auto g = PeriodGrouping::triple();
  const auto pop = build_population_tensor(model, g);
  const int n = 100000;
  const double bound = 5.0 * std::sqrt(std::log(125.0) / n);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto emp = sample_tensor(model, n, seed, g);
    double linf = 0.0;
    for (std::size_t i = 0; i < emp.size(); ++i)
      linf = std::max(linf, std::abs(emp.data()[i] - pop.data()[i]));
    CHECK(linf <= bound);
    CHECK(linf <= 0.02);
  }
}

TEST_CASE("assumption diagnostics") {
  const auto r1 = check_assumptions(MixtureModel::from_dgp(dgp1()), 0.01);
  CHECK(r1.ok());
  CHECK(r1.min_supported == doctest::Approx(0.2));

  const auto r2 = check_assumptions(MixtureModel::from_dgp(dgp2()), 0.1);
  CHECK(r2.ok());
  CHECK(r2.min_supported == 0.1);

  const int a12[] = {1, 2};
  Eigen::MatrixXd f(2, 1);
  f << 0.005, 0.995;
  MixtureModel thin(2, {ChoiceSetMask::from_alternatives(a12, 2)}, Eigen::VectorXd::Ones(1), {f});
  const auto r3 = check_assumptions(thin, 0.01);
  CHECK_FALSE(r3.ok());
  REQUIRE(r3.below_eps.size() == 1);
  CHECK(r3.below_eps[0].alternative == 1);
  CHECK(r3.below_eps[0].period == 1);
}
