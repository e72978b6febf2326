#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <vector>

#include <Eigen/Dense>

#include "choiceset/choice_set.hpp"
#include "choiceset/model.hpp"
#include "choiceset/rng.hpp"
#include "choiceset/spectral.hpp"

namespace testsupport {

// Dirichlet(1) draw on `size` cells, floored at `floor` then renormalized.
inline Eigen::VectorXd random_simplex(choiceset::SplitMix64& rng, int size, double floor) {
  Eigen::VectorXd v(size);
  for (int i = 0; i < size; ++i) v(i) = -std::log(1.0 - rng.uniform()) + floor * size;
  return v / v.sum();
}

// Random i.i.d. model with Y alternatives, d distinct menus and T periods
// sharing one F. Redraws until the K = 1 rank condition holds.
inline choiceset::MixtureModel random_model(std::uint64_t seed, int y_count, int d, int periods = 3,
                                            double floor = 0.05) {
  choiceset::SplitMix64 rng(seed);
  const std::uint32_t universe = (1u << y_count) - 1u;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::set<std::uint32_t> chosen;
    while (static_cast<int>(chosen.size()) < d) {
      chosen.insert(1u + static_cast<std::uint32_t>(rng() % universe));
    }
    std::vector<choiceset::ChoiceSetMask> menus;
    for (auto b : chosen) menus.push_back(choiceset::ChoiceSetMask::from_bits(b, y_count));
    Eigen::MatrixXd f = Eigen::MatrixXd::Zero(y_count, d);
    for (int j = 0; j < d; ++j) {
      const auto alts = menus[j].alternatives();
      const auto w = random_simplex(rng, static_cast<int>(alts.size()), floor);
      for (std::size_t i = 0; i < alts.size(); ++i) f(alts[i] - 1, j) = w(i);
    }
    const Eigen::VectorXd m = random_simplex(rng, d, floor);
    choiceset::MixtureModel model(y_count, menus, m, std::vector<Eigen::MatrixXd>(periods, f));
    const auto rep = choiceset::lin_indep_check(model, 1);
    if (rep.full_rank && rep.smallest_singular_value > 1e-3) return model;
  }
  throw std::runtime_error("could not draw a model satisfying the rank condition");
}

// Largest absolute discrepancy after aligning estimated menus to the truth by
// mask; returns a negative value when the menu collections differ.
inline double recovery_error(const choiceset::MixtureModel& truth,
                             const choiceset::MixtureEstimate& est) {
  if (static_cast<int>(est.menus.size()) != truth.num_menus()) return -1.0;
  double err = 0.0;
  for (int j = 0; j < truth.num_menus(); ++j) {
    const auto it = std::find(est.menus.begin(), est.menus.end(), truth.menus()[j]);
    if (it == est.menus.end()) return -1.0;
    const int k = static_cast<int>(it - est.menus.begin());
    err = std::max(err, std::abs(est.m(k) - truth.weights()(j)));
    for (std::size_t p = 0; p < est.periods.size(); ++p) {
      const auto& ft = truth.conditional(est.periods[p]);
      err = std::max(err, (est.F[p].col(k) - ft.col(j)).cwiseAbs().maxCoeff());
    }
  }
  return err;
}

}  // namespace testsupport
