#include <filesystem>

#include "doctest.h"

#include "choiceset/errors.hpp"
#include "choiceset/io.hpp"

using namespace choiceset;

TEST_CASE("design JSON round trip") {
  const auto dgp = dgp1();
  const Json j = to_json(dgp);
  CHECK(j["Pyd"].size() == 5);
  CHECK(j["Pyd"][0].size() == 5);
  const auto back = dgp_from_json(Json::parse(j.dump()));
  CHECK(back.choice_given_menu == dgp.choice_given_menu);
  CHECK(back.menu_probs == dgp.menu_probs);
  CHECK(back.tie_F_across_t == dgp.tie_F_across_t);

  Json extra = j;
  extra["Pdd"] = 1;
  CHECK_THROWS_WITH_AS(dgp_from_json(extra), doctest::Contains("Pdd"), DomainError);
  Json bad = j;
  bad["Pd"][0] = 0.9;
  CHECK_THROWS_AS(dgp_from_json(bad), DomainError);
}

TEST_CASE("doubles survive serialization bit for bit") {
  Json j = {{"x", 0.1 + 0.2}, {"y", 1.0 / 3.0}, {"z", 5e-324}};
  const auto back = Json::parse(j.dump());
  CHECK(back["x"].get<double>() == 0.1 + 0.2);
  CHECK(back["y"].get<double>() == 1.0 / 3.0);
  CHECK(back["z"].get<double>() == 5e-324);
}

TEST_CASE("tensor JSON carries the index map") {
  const auto model = MixtureModel::from_dgp(dgp2(), 5);
  const auto grouping = PeriodGrouping::standard(5);
  const auto P = build_population_tensor(model, grouping);
  const Json j = to_json(P);
  CHECK(j["dims"][0] == 25);
  CHECK(j["outcomes"][0][7] == Json::array({2, 3}));
  CHECK(j["outcomes"][2][4] == Json::array({5}));
  const auto back = tensor_from_json(Json::parse(j.dump()));
  CHECK(back.grouping() == grouping);
  CHECK(std::equal(back.data().begin(), back.data().end(), P.data().begin()));
}

TEST_CASE("estimate JSON round trip and model loading") {
  const auto model = MixtureModel::from_dgp(dgp1(), 3);
  MixtureEstimate est;
  est.num_alternatives = 5;
  est.menus = model.menus();
  est.m = model.weights();
  est.periods = {1, 2, 3};
  for (int t = 1; t <= 3; ++t) est.F.push_back(model.conditional(t));
  est.diagnostics.residual = 1.25e-17;
  est.diagnostics.warnings = {"w"};
  const Json j = to_json(est);
  CHECK(j["menus"][0] == Json(est.menus[0].alternatives()));
  const auto back = estimate_from_json(Json::parse(j.dump()));
  CHECK(back.menus == est.menus);
  CHECK(back.m == est.m);
  CHECK(back.F[2] == est.F[2]);
  CHECK(back.diagnostics.residual == est.diagnostics.residual);
  CHECK(back.diagnostics.warnings == est.diagnostics.warnings);

  const auto m2 = model_from_json(j);
  CHECK(m2.menus() == model.menus());
  CHECK(m2.conditional(1) == model.conditional(1));
  const auto m3 = model_from_json(to_json(dgp2()), 4);
  CHECK(m3.num_periods() == 4);
}

TEST_CASE("fit config JSON") {
  FitConfig cfg;
  cfg.eps = 0.02;
  cfg.objective = Objective::kullback_leibler;
  cfg.required_bits = 0b101;
  cfg.mio.method = MioMethod::branch_and_bound;
  cfg.seed = 18446744073709551615ull;
  const auto back = fit_config_from_json(Json::parse(to_json(cfg).dump()));
  CHECK(back.eps == 0.02);
  CHECK(back.objective == Objective::kullback_leibler);
  CHECK(back.required_bits == 0b101u);
  CHECK(back.mio.method == MioMethod::branch_and_bound);
  CHECK(back.seed == cfg.seed);

  const auto partial = fit_config_from_json(Json{{"eps", 0.05}});
  CHECK(partial.eps == 0.05);
  CHECK(partial.starts == FitConfig{}.starts);
  CHECK_THROWS_WITH_AS(fit_config_from_json(Json{{"epsilon", 0.05}}), doctest::Contains("epsilon"), DomainError);
  CHECK_THROWS_WITH_AS(fit_config_from_json(Json{{"mio", {{"nodes", 1}}}}), doctest::Contains("nodes"), DomainError);
  CHECK_THROWS_WITH_AS(fit_config_from_json(Json{{"starts", "many"}}), doctest::Contains("fit.starts"), DomainError);
}

TEST_CASE("JSON files") {
  const auto path = (std::filesystem::temp_directory_path() / "choiceset_io_test.json").string();
  write_json_file(path, to_json(dgp1()));
  CHECK(dgp_from_json(read_json_file(path)).menu_probs == dgp1().menu_probs);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_json_file(path), ParseError);
}
