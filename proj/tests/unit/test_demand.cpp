#include <cmath>
#include <filesystem>
#include <vector>

#include "doctest.h"

#include "choiceset/demand.hpp"
#include "choiceset/errors.hpp"
#include "choiceset/model.hpp"
#include "demand_sim.hpp"

using namespace choiceset;
using choiceset::testing::simulate_logit_panel;
using choiceset::testing::single_menu_design;

namespace {

DemandPanel flat_panel() {
  DemandPanel p;
  p.num_alternatives = 3;
  p.num_periods = 1;
  p.markets = {"a"};
  p.menus = {ChoiceSetMask::full(3)};
  p.shares = {Eigen::RowVector3d(0.25, 0.25, 0.5)};
  p.prices = Eigen::RowVector3d(1.0, 1.0, 1.0);
  p.demographics = Eigen::MatrixXd::Zero(1, 1);
  p.demographic_names = {"income"};
  return p;
}

}  // namespace

TEST_CASE("naive elasticity") {
  CHECK(elasticity_naive(-3.0, 2.0, 1.0) == 0.0);
  CHECK(elasticity_naive(-2.0, 1.0, 0.5) == -1.0);
  CHECK(elasticity_naive(0.0, 7.0, 0.3) == 0.0);
  CHECK_THROWS_AS(elasticity_naive(-1.0, 1.0, 1.5), DomainError);
}

TEST_CASE("mixture elasticity") {
  const std::vector<double> one_beta{-4.0}, one_share{0.3}, one_weight{1.0};
  CHECK(elasticity_mixture(one_beta, one_share, one_weight, 0.7) == doctest::Approx(elasticity_naive(-4.0, 0.7, 0.3)));

  const std::vector<double> betas{-5.84, -56.46};
  const std::vector<double> absent{0.0, 0.0};
  const std::vector<double> w{0.17, 0.83};
  CHECK_THROWS_AS(elasticity_mixture(betas, absent, w, 0.2), DomainError);

  // Direct summation written out term by term.
  const std::vector<double> s{0.1, 0.081};
  const std::vector<double> m{0.6, 0.4};
  const double p = 0.15;
  const double agg = 0.1 * 0.6 + 0.081 * 0.4;
  const double expected = (0.1 * 0.6 / agg) * (-5.84 * 0.15 * 0.9) + (0.081 * 0.4 / agg) * (-56.46 * 0.15 * 0.919);
  CHECK(elasticity_mixture(betas, s, m, p) == doctest::Approx(expected).epsilon(1e-14));

  // Alternative missing from the second menu only counts the first.
  const std::vector<double> q{0.088, 0.0};
  CHECK(elasticity_mixture(betas, q, w, 0.2) == doctest::Approx(elasticity_naive(-5.84, 0.2, 0.088)).epsilon(1e-14));

  SUBCASE("linear in each beta") {
    const auto f = [&](double b0) {
      const std::vector<double> b{b0, -56.46};
      return elasticity_mixture(b, s, m, p);
    };
    CHECK(f(-3.0) - f(-1.0) == doctest::Approx(2.0 * (f(-2.0) - f(-1.0))).epsilon(1e-12));
  }
  SUBCASE("nonpositive with negative betas") {
    for (double a = 0.0; a <= 1.0; a += 0.125) {
      const std::vector<double> ss{a, 1.0 - a};
      if (a * 0.6 + (1.0 - a) * 0.4 > 0.0) CHECK(elasticity_mixture(betas, ss, m, p) <= 0.0);
    }
  }
  CHECK_THROWS_AS(elasticity_mixture(betas, s, std::vector<double>{0.5, 0.6}, p), DomainError);
}

TEST_CASE("log-ratio panel") {
  SUBCASE("equal shares and prices give a zero outcome") {
    auto p = flat_panel();
    p.shares = {Eigen::RowVector3d(0.4, 0.2, 0.4)};
    const auto data = build_log_ratio_panel(p, ChoiceSetMask::full(3), 3);
    REQUIRE(data.rows.size() == 2);
    CHECK(data.rows[0].alternative == 1);
    CHECK(data.outcome(0) == 0.0);
    CHECK(data.X(0, data.price_column) == 0.0);
  }
  SUBCASE("excluded alternative has no rows") {
    DemandPanel p;
    p.num_alternatives = 5;
    p.markets = {"1", "2"};
    p.menus = {ChoiceSetMask::from_bits(0b01111, 5)};
    Eigen::MatrixXd S(2, 5);
    S << 0.1, 0.2, 0.3, 0.4, 0.0, 0.25, 0.25, 0.25, 0.25, 0.0;
    p.shares = {S};
    p.prices = Eigen::MatrixXd::Constant(2, 5, 1.0);
    p.demographics.resize(2, 0);
    p.validate();
    const auto data = build_log_ratio_panel(p, p.menus[0], 4);
    CHECK(data.rows.size() == 6);
    for (const auto& r : data.rows) CHECK(r.alternative != 5);
    CHECK(data.dropped.empty());
    CHECK_THROWS_AS(build_log_ratio_panel(p, p.menus[0], 5), DomainError);
  }
  SUBCASE("zero share is dropped and reported") {
    auto p = flat_panel();
    p.shares = {Eigen::RowVector3d(0.0, 0.5, 0.5)};
    const auto data = build_log_ratio_panel(p, ChoiceSetMask::full(3), 3);
    CHECK(data.rows.size() == 1);
    REQUIRE(data.dropped.size() == 1);
    CHECK(data.dropped[0].find("alternative 1") != std::string::npos);
  }
  SUBCASE("re-exponentiation reproduces share ratios") {
    const auto panel = simulate_logit_panel(single_menu_design(-16.0, 0.3, 0.0), 5);
    const auto data = build_log_ratio_panel(panel, panel.menus[0], 3);
    for (std::size_t i = 0; i < data.rows.size(); ++i) {
      const auto& r = data.rows[i];
      const double ratio = panel.share(0, r.market, r.period, r.alternative) / panel.share(0, r.market, r.period, 3);
      CHECK(std::exp(data.outcome(static_cast<Eigen::Index>(i))) == doctest::Approx(ratio).epsilon(1e-14));
    }
  }
}

TEST_CASE("GMM on noiseless exogenous data recovers beta exactly") {
  const auto panel = simulate_logit_panel(single_menu_design(-16.0, 0.0, 0.0), 17);
  const auto data = build_log_ratio_panel(panel, panel.menus[0], 3);
  const auto res = gmm_beta(data);
  CHECK(std::abs(res.beta + 16.0) < 1e-10);
  CHECK(std::abs(res.coef(0) - 0.4) < 1e-10);   // alpha_1 - alpha_3
  CHECK(std::abs(res.coef(1) + 0.2) < 1e-10);   // alpha_2 - alpha_3
  CHECK(res.shares_treated_as_exact);
}

TEST_CASE("just-identified GMM equals 2SLS equals OLS") {
  const auto panel = simulate_logit_panel(single_menu_design(-10.0, 0.2, 0.0), 23);
  const auto data = build_log_ratio_panel(panel, panel.menus[0], 3);
  const Eigen::VectorXd ols = data.X.colPivHouseholderQr().solve(data.outcome);
  const auto res = gmm_beta(data, data.X);
  CHECK((res.coef - ols).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((res.coef_step1 - ols).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(res.J_df == 0);
  CHECK(res.J < 1e-12);
}

TEST_CASE("GMM is invariant to positive instrument rescaling") {
  const auto panel = simulate_logit_panel(single_menu_design(-16.0, 0.3, 0.02), 29);
  const auto data = build_log_ratio_panel(panel, panel.menus[0], 3);
  const auto base = gmm_beta(data);
  CHECK_FALSE(base.ridge_applied);
  Eigen::MatrixXd Z = data.Z;
  for (Eigen::Index c = 0; c < Z.cols(); ++c) Z.col(c) *= 0.5 + 3.0 * static_cast<double>(c);
  const auto scaled = gmm_beta(data, Z);
  CHECK((base.coef - scaled.coef).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((base.se - scaled.se).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(std::abs(base.J - scaled.J) < 1e-8);
}

TEST_CASE("GMM errors") {
  const auto panel = simulate_logit_panel(single_menu_design(-16.0, 0.3, 0.02), 31);
  const auto data = build_log_ratio_panel(panel, panel.menus[0], 3);
  Eigen::MatrixXd Z = data.Z;
  Z.col(Z.cols() - 1) = 2.0 * Z.col(Z.cols() - 2);
  try {
    gmm_beta(data, Z);
    FAIL("expected a rank error");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("collinear") != std::string::npos);
  }
  // Named columns in the message.
  auto named = data;
  named.Z.col(named.Z.cols() - 1) = named.Z.col(0);
  try {
    gmm_beta(named);
    FAIL("expected a rank error");
  } catch (const DomainError& e) {
    const std::string msg = e.what();
    CHECK((msg.find("neighbor_price_diff") != std::string::npos || msg.find("alpha_1") != std::string::npos));
  }
  CHECK_THROWS_AS(gmm_beta(data, data.Z.leftCols(2)), DomainError);
}

TEST_CASE("GMM with endogenous prices stays near the truth while OLS does not") {
  int covered = 0;
  double ols_bias = 0.0;
  const int runs = 20;
  for (int s = 0; s < runs; ++s) {
    const auto panel = simulate_logit_panel(single_menu_design(-16.0, 0.5, 0.03), 1000 + s);
    const auto data = build_log_ratio_panel(panel, panel.menus[0], 3);
    const auto res = gmm_beta(data);
    if (std::abs(res.beta + 16.0) <= 3.0 * res.beta_se) ++covered;
    const Eigen::VectorXd ols = data.X.colPivHouseholderQr().solve(data.outcome);
    ols_bias += (ols(data.price_column) + 16.0) / runs;
  }
  CHECK(covered >= 18);
  CHECK(ols_bias > 2.0);
}

TEST_CASE("aggregate panel mixes menu shares") {
  auto des = single_menu_design(-8.0, 0.0, 0.0);
  des.menus = {ChoiceSetMask::full(3), ChoiceSetMask::from_bits(0b110, 3)};
  des.betas = {-8.0, -20.0};
  des.alpha = {{0.4, -0.2, 0.0}, {0.0, 0.1, 0.0}};
  des.gamma = {{0.3, -0.5, 0.0}, {0.0, 0.2, 0.0}};
  des.num_markets = 4;
  const auto panel = simulate_logit_panel(des, 3);
  Eigen::MatrixXd W(4, 2);
  W << 0.5, 0.5, 1.0, 0.0, 0.0, 1.0, 0.3, 0.7;
  const auto agg = aggregate_panel(panel, W);
  agg.validate();
  for (int j = 0; j < 4; ++j)
    for (int y = 1; y <= 3; ++y)
      CHECK(agg.share(0, j, 0, y) ==
            doctest::Approx(W(j, 0) * panel.share(0, j, 0, y) + W(j, 1) * panel.share(1, j, 0, y)).epsilon(1e-15));

  const std::vector<double> betas{-8.0, -20.0};
  const auto table = elasticity_table(panel, W, betas, -10.0, 1, 0);
  // Market 2 puts all weight on the full menu, so the mixture equals that menu.
  for (const auto& row : table) CHECK(row.mixture == doctest::Approx(row.by_menu[0]).epsilon(1e-14));
  CHECK(table[0].by_menu[1] == 0.0);
}

TEST_CASE("menu share summaries") {
  SUBCASE("single full menu everywhere") {
    MixtureEstimate e;
    e.num_alternatives = 4;
    e.menus = {ChoiceSetMask::full(4)};
    e.m = Eigen::VectorXd::Ones(1);
    const std::vector<MixtureEstimate> est(3, e);
    const std::vector<double> w{0.2, 0.3, 0.5};
    const auto s = menu_share_summaries(est, w);
    CHECK(s.cardinality[3] == doctest::Approx(1.0));
    for (double c : s.consideration) CHECK(c == doctest::Approx(1.0));
    CHECK(s.markets_meeting_threshold == 0);
  }
  SUBCASE("one market with the first design") {
    const auto dgp = dgp1();
    MixtureEstimate e;
    e.num_alternatives = 5;
    e.menus = dgp.menus();
    e.m = dgp.menu_probs;
    const std::vector<double> w{1.0};
    const auto s = menu_share_summaries({e}, w);
    // Direct summation over the design's masks.
    for (int y = 1; y <= 5; ++y) {
      double expected = 0.0;
      for (int d = 0; d < 5; ++d)
        if (e.menus[d].contains(y)) expected += dgp.menu_probs(d);
      CHECK(s.consideration[y - 1] == doctest::Approx(expected).epsilon(1e-15));
    }
    CHECK(s.consideration[0] == doctest::Approx(1.0));
    CHECK(s.menus_above_threshold[0] == 5);
    CHECK(s.markets_meeting_threshold == 1);
    CHECK(s.top_menus.front().mass == doctest::Approx(0.3));
  }
  const std::vector<double> bad{0.5};
  MixtureEstimate e;
  e.num_alternatives = 2;
  e.menus = {ChoiceSetMask::full(2)};
  e.m = Eigen::VectorXd::Ones(1);
  CHECK_THROWS_AS(menu_share_summaries({e}, bad), DomainError);
}

TEST_CASE("demand CSV bundle round trip") {
  auto des = single_menu_design(-16.0, 0.3, 0.02);
  des.num_markets = 5;
  des.num_periods = 2;
  const auto panel = simulate_logit_panel(des, 41);
  const auto dir = std::filesystem::temp_directory_path() / "choiceset_demand_rt";
  std::filesystem::create_directories(dir);
  const DemandFiles files{(dir / "shares.csv").string(), (dir / "prices.csv").string(),
                          (dir / "demographics.csv").string(), (dir / "instruments.csv").string()};
  write_demand_panel(panel, files);
  const auto back = read_demand_panel(files);
  CHECK(back.markets == panel.markets);
  CHECK(back.num_periods == 2);
  CHECK(back.menus == panel.menus);
  CHECK(back.shares[0] == panel.shares[0]);
  CHECK(back.prices == panel.prices);
  CHECK(back.demographics == panel.demographics);
  CHECK(back.instrument_names == panel.instrument_names);
  CHECK(back.instruments[1] == panel.instruments[1]);
  std::filesystem::remove_all(dir);
}
