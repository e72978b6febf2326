// Runs the ten acceptance criteria and prints one PASS/FAIL line each.
// Exit status is nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "choiceset/demand.hpp"
#include "choiceset/estimator.hpp"
#include "choiceset/model.hpp"
#include "choiceset/montecarlo.hpp"
#include "choiceset/spectral.hpp"
#include "demand_sim.hpp"
#include "random_models.hpp"

using namespace choiceset;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("%s %2d %s (%.2fs): %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), seconds_since(t0),
              o.detail.c_str());
  std::fflush(stdout);
}

void info(const std::string& line) {
  std::printf("     info: %s\n", line.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

JointChoiceTensor pop(const MixtureModel& model) {
  return build_population_tensor(model, PeriodGrouping::triple());
}

// Y cycles through 2..5 and d through 1..Y.
std::vector<MixtureModel> model_suite(int count) {
  std::vector<MixtureModel> suite;
  for (int i = 0; i < count; ++i) {
    const int y_count = 2 + i % 4;
    const int d = 1 + (i / 4) % y_count;
    suite.push_back(testsupport::random_model(1000 + i, y_count, d));
  }
  return suite;
}

std::vector<ChoiceSetMask> sorted(std::vector<ChoiceSetMask> v) {
  std::sort(v.begin(), v.end());
  return v;
}

MixtureModel single_menu(int y_count) {
  Eigen::MatrixXd f(y_count, 1);
  for (int y = 0; y < y_count; ++y) f(y, 0) = (y + 1.0) / (y_count * (y_count + 1) / 2.0);
  return MixtureModel(y_count, {ChoiceSetMask::full(y_count)}, Eigen::VectorXd::Ones(1),
                      std::vector<Eigen::MatrixXd>(3, f));
}

// {1}, {2}, {1,2}: the singletons span the pair, so three menus give rank 2.
MixtureModel three_menu_y2() {
  Eigen::MatrixXd f(2, 3);
  f << 1.0, 0.0, 0.45,
       0.0, 1.0, 0.55;
  return MixtureModel(2, {ChoiceSetMask::from_bits(1, 2), ChoiceSetMask::from_bits(2, 2), ChoiceSetMask::from_bits(3, 2)},
                      Eigen::Vector3d(0.2, 0.3, 0.5), std::vector<Eigen::MatrixXd>(3, f));
}

Outcome population_exactness() {
  const auto t0 = Clock::now();
  const auto suite = model_suite(60);
  double worst = 0.0;
  int bad = 0;
  for (const auto& model : suite) {
    const auto t = pop(model);
    // Exact tensors: plain numerical rank, the sample cutoff would drop small true components.
    const auto rank = estimate_rank(t, 1e-10);
    const double err = rank.d_hat == model.num_menus() ? testsupport::recovery_error(model, spectral_identify(t, rank.d_hat))
                                                        : -1.0;
    if (err < 0.0 || err > 1e-8) ++bad;
    worst = std::max(worst, err);
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < 10.0, std::to_string(suite.size()) + " models, " + std::to_string(bad) +
                                       " misses, max error " + fmt("%.2e", worst) + " (tol 1e-8), " +
                                       fmt("%.2f", secs) + "s (limit 10s)"};
}

Outcome oracle_equivalence() {
  const auto t0 = Clock::now();
  int compared = 0, bad = 0;
  for (const auto& model : model_suite(60)) {
    if (model.num_alternatives() > 4) continue;
    const auto t = pop(model);
    FitConfig cfg;
    cfg.tie_F_across_t = true;
    const auto pipe = estimate_pipeline(t, cfg);
    const auto brute = brute_force_estimate(t, pipe.d_hat, {}, cfg);
    ++compared;
    if (sorted(pipe.final_estimate.menus) != sorted(brute.estimate.menus)) ++bad;
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < 120.0, std::to_string(compared) + " models with Y <= 4, " + std::to_string(bad) +
                                        " support mismatches, " + fmt("%.1f", secs) + "s (limit 120s)"};
}

struct McRuns {
  MCReport dgp1;
  MCReport dgp2;
  double seconds = 0.0;
};

McRuns run_table_experiments() {
  const auto t0 = Clock::now();
  FitConfig cfg;
  cfg.eps = 0.01;
  MCOptions opts;
  opts.jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  McRuns r;
  r.dgp1 = run_mc(dgp1(), "DGP1", {2000, 10000, 50000}, 200, cfg, 7, opts);
  r.dgp2 = run_mc(dgp2(), "DGP2", {50000}, 200, cfg, 7, opts);
  r.seconds = seconds_since(t0);
  return r;
}

Outcome table1(const McRuns& r) {
  const double target1[] = {64.1, 93.9, 99.9};
  bool ok = true;
  std::string detail = "DGP1 Step-2 %";
  for (int i = 0; i < 3; ++i) {
    const auto& c = r.dgp1.cells[i];
    ok = ok && std::abs(c.step2.percent_all_correct - target1[i]) <= 6.0;
    detail += " " + fmt("%.1f", c.step2.percent_all_correct) + "/" + fmt("%.1f", target1[i]);
  }
  const double p2 = r.dgp2.cells[0].step2.percent_all_correct;
  ok = ok && std::abs(p2 - 93.5) <= 6.0;
  detail += "; DGP2 " + fmt("%.1f", p2) + "/93.5 (tol +-6 points); both designs " + fmt("%.0f", r.seconds) + "s";
  return {ok, detail};
}

Outcome table2(const McRuns& r) {
  const double target[] = {4.60, 4.94, 5.00};
  bool ok = true;
  std::string detail = "DGP1 Step-2 average correct";
  for (int i = 0; i < 3; ++i) {
    const double a = r.dgp1.cells[i].step2.average_correct;
    ok = ok && std::abs(a - target[i]) <= 0.15;
    detail += " " + fmt("%.3f", a) + "/" + fmt("%.2f", target[i]);
  }
  return {ok, detail + " (tol +-0.15)"};
}

Outcome parameter_magnitudes(const McRuns& r) {
  const auto& params = r.dgp1.cells[2].step2.parameters.m;
  double max_rmse = 0.0, max_bias = 0.0;
  int excluded = 0;
  for (const auto& p : params) {
    max_rmse = std::max(max_rmse, p.rmse);
    max_bias = std::max(max_bias, std::abs(p.bias));
    excluded += p.excluded;
  }
  return {!params.empty() && max_rmse <= 6e-3 && max_bias <= 1e-3,
          "DGP1 n=50000 max RMSE(m) " + fmt("%.2e", max_rmse) + " (limit 6e-3), max |bias(m)| " +
              fmt("%.2e", max_bias) + " (limit 1e-3), " + std::to_string(excluded) + " exclusions"};
}

void supplementary(const McRuns& r) {
  for (const auto* rep : {&r.dgp1, &r.dgp2}) {
    for (const auto& c : rep->cells) {
      info(rep->dgp_name + " n=" + std::to_string(c.n) + ": Step-1 " + fmt("%.1f", c.step1.percent_all_correct) +
           "% Step-2 " + fmt("%.1f", c.step2.percent_all_correct) + "%, failures " + std::to_string(c.failures) +
           ", rank mismatches " + std::to_string(c.rank_mismatches));
    }
  }
  for (const auto& p : r.dgp2.cells[0].step2.parameters.m)
    info("DGP2 n=50000 bias m(" + p.label + ") " + fmt("%.2e", p.bias) + " rmse " + fmt("%.2e", p.rmse));
}

Outcome rank_estimation() {
  const int d1 = estimate_rank(pop(MixtureModel::from_dgp(dgp1()))).d_hat;
  const int d2 = estimate_rank(pop(MixtureModel::from_dgp(dgp2()))).d_hat;
  bool singles = true;
  for (int y = 2; y <= 5; ++y) singles = singles && estimate_rank(pop(single_menu(y))).d_hat == 1;
  for (std::uint64_t s = 0; s < 10; ++s)
    singles = singles && estimate_rank(pop(testsupport::random_model(500 + s, 2 + s % 4, 1))).d_hat == 1;
  const auto three = estimate_rank(pop(three_menu_y2()));
  const bool ok = d1 == 5 && d2 == 5 && singles && three.d_hat <= 2 && three.possibly_under_detected;
  return {ok, "DGP1 " + std::to_string(d1) + ", DGP2 " + std::to_string(d2) + ", single-menu models " +
                  (singles ? "all 1" : "not all 1") + ", three-menu Y=2 example " + std::to_string(three.d_hat) +
                  (three.possibly_under_detected ? " flagged" : " unflagged")};
}

Outcome proposition_diagnostics() {
  const auto t0 = Clock::now();
  const auto a = lin_indep_check(MixtureModel::from_dgp(dgp1()), 1);
  const auto b = lin_indep_check(MixtureModel::from_dgp(dgp2()), 1);
  const auto k1 = lin_indep_check(three_menu_y2(), 1);
  const auto k2 = lin_indep_check(three_menu_y2(), 2);
  const double secs = seconds_since(t0);
  const bool ok = a.full_rank && b.full_rank && !k1.full_rank && k2.full_rank && secs < 1.0;
  return {ok, std::string("DGP1 K=1 ") + (a.full_rank ? "full" : "deficient") + ", DGP2 K=1 " +
                  (b.full_rank ? "full" : "deficient") + ", counterexample K=1 rank " + std::to_string(k1.rank) +
                  " of 3, K=2 " + (k2.full_rank ? "full" : "deficient") + ", " + fmt("%.3f", secs) + "s (limit 1s)"};
}

Outcome markov_extension() {
  MarkovModel mm;
  mm.num_alternatives = 2;
  mm.num_periods = 5;
  mm.menus = {ChoiceSetMask::from_bits(1, 2), ChoiceSetMask::from_bits(3, 2)};
  mm.m = Eigen::Vector2d(0.35, 0.65);
  mm.initial = {Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d(0.45, 0.55)};
  Eigen::Matrix2d q0, q1;
  q0 << 1.0, 0.0,
        0.0, 0.0;
  q1 << 0.7, 0.25,
        0.3, 0.75;
  mm.transition = {q0, q1};
  const auto est = markov_identify(2, 5, markov_population_pmf(mm), 1);
  if (est.menus.size() != 2) return {false, std::to_string(est.menus.size()) + " menus recovered"};
  double err = 0.0;
  bool menus_ok = true;
  for (int j = 0; j < 2; ++j) {
    menus_ok = menus_ok && est.menus[j] == mm.menus[j];
    err = std::max(err, std::abs(est.m(j) - mm.m(j)));
  }
  err = std::max(err, (est.transition[1] - q1).cwiseAbs().maxCoeff());
  // Only y' = 1 is ever a conditioning value under the singleton menu.
  err = std::max(err, (est.transition[0].col(0) - q0.col(0)).cwiseAbs().maxCoeff());
  return {menus_ok && err <= 1e-6, std::string("menus ") + (menus_ok ? "exact" : "wrong") + ", max error in m and transitions " +
                                       fmt("%.2e", err) + " (tol 1e-6)"};
}

Outcome demand_layer() {
  using testing::simulate_logit_panel;
  using testing::single_menu_design;
  const auto clean = simulate_logit_panel(single_menu_design(-16.0, 0.0, 0.0), 17);
  const auto exact = gmm_beta(build_log_ratio_panel(clean, clean.menus[0], 3));
  const double exact_err = std::abs(exact.beta + 16.0);

  int covered = 0;
  for (int s = 0; s < 100; ++s) {
    const auto panel = simulate_logit_panel(single_menu_design(-16.0, 0.5, 0.03), 5000 + s);
    const auto res = gmm_beta(build_log_ratio_panel(panel, panel.menus[0], 3));
    if (std::abs(res.beta + 16.0) <= 3.0 * res.beta_se) ++covered;
  }

  // Point mass on one menu: the mixture must return the naive value bit for bit.
  bool reduces = true;
  const std::vector<double> betas{-5.84, -56.46, -12.0};
  const std::vector<double> shares{0.31, 0.07, 0.55};
  for (int k = 0; k < 3; ++k) {
    std::vector<double> w(3, 0.0);
    w[k] = 1.0;
    for (double p : {0.1, 0.35, 2.0})
      reduces = reduces && elasticity_mixture(betas, shares, w, p) == elasticity_naive(betas[k], p, shares[k]);
  }
  const bool ok = exact_err <= 1e-10 && covered >= 95 && reduces;
  return {ok, "noiseless |beta error| " + fmt("%.1e", exact_err) + " (tol 1e-10), endogenous coverage " +
                  std::to_string(covered) + "/100 within 3 SE (need 95), degenerate mixture " +
                  (reduces ? "exact" : "differs")};
}

Outcome mio_exactness() {
  const auto dictionary = all_menus(5);
  int bad = 0, solved = 0;
  double worst_gap = 0.0, worst_secs = 0.0;
  SplitMix64 rng(4242);
  for (int trial = 0; trial < 100; ++trial) {
    const auto model = testsupport::random_model(9000 + trial, 5, 5);
    const auto t = sample_tensor(model, 5000, 77 + trial, PeriodGrouping::triple());
    Step2Fit s2;
    s2.dictionary = dictionary;
    for (int m = 0; m < 3; ++m) s2.factors.F[m] = Eigen::MatrixXd::Zero(5, 31);
    for (int j = 0; j < 31; ++j) {
      const auto alts = dictionary[j].alternatives();
      const auto it = std::find(model.menus().begin(), model.menus().end(), dictionary[j]);
      // Odd trials replace the true columns by random ones as well.
      const bool truth = it != model.menus().end() && trial % 2 == 0;
      for (int m = 0; m < 3; ++m) {
        if (truth) {
          s2.factors.F[m].col(j) = model.conditional(m + 1).col(it - model.menus().begin());
        } else {
          const auto w = testsupport::random_simplex(rng, static_cast<int>(alts.size()), 0.02);
          for (std::size_t i = 0; i < alts.size(); ++i) s2.factors.F[m](alts[i] - 1, j) = w(i);
        }
      }
    }
    s2.factors.M = Eigen::VectorXd::Constant(31, 1.0 / 31.0);
    FitConfig ex, bb;
    ex.mio.method = MioMethod::exhaustive;
    bb.mio.method = MioMethod::branch_and_bound;
    auto t0 = Clock::now();
    const auto a = best_subset_select(t, s2, 5, ex);
    worst_secs = std::max(worst_secs, seconds_since(t0));
    t0 = Clock::now();
    const auto b = best_subset_select(t, s2, 5, bb);
    worst_secs = std::max(worst_secs, seconds_since(t0));
    ++solved;
    const double gap = std::abs(a.objective - b.objective);
    worst_gap = std::max(worst_gap, gap);
    if (gap > 1e-10 || !a.optimal || !b.optimal) ++bad;
  }
  return {bad == 0 && worst_secs < 5.0, std::to_string(solved) + " dictionaries, " + std::to_string(bad) +
                                            " mismatches, max objective gap " + fmt("%.1e", worst_gap) +
                                            " (tol 1e-10), slowest solve " + fmt("%.2f", worst_secs) +
                                            "s (limit 5s)"};
}

}  // namespace

int main() {
  report(1, "population exactness", population_exactness);
  report(2, "oracle equivalence", oracle_equivalence);
  McRuns mc;
  bool mc_ok = true;
  try {
    mc = run_table_experiments();
  } catch (const std::exception& e) {
    mc_ok = false;
    info(std::string("Monte Carlo failed: ") + e.what());
  }
  const auto need_mc = [&](auto fn) {
    return [&, fn]() { return mc_ok ? fn(mc) : Outcome{false, "Monte Carlo did not run"}; };
  };
  report(3, "percent all-correct", need_mc(table1));
  report(4, "average correct sets", need_mc(table2));
  report(5, "weight bias and RMSE", need_mc(parameter_magnitudes));
  if (mc_ok) supplementary(mc);
  report(6, "rank estimation", rank_estimation);
  report(7, "rank condition diagnostics", proposition_diagnostics);
  report(8, "Markov extension", markov_extension);
  report(9, "demand layer", demand_layer);
  report(10, "best-subset exactness", mio_exactness);
  std::printf("%s: %d of 10 criteria failed\n", failures == 0 ? "ALL PASS" : "FAILURES", failures);
  return failures == 0 ? 0 : 1;
}
