#include "choiceset/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "choiceset/errors.hpp"

namespace choiceset {

PeriodGrouping PeriodGrouping::triple() { return PeriodGrouping{{{{1}, {2}, {3}}}}; }

PeriodGrouping PeriodGrouping::standard(int num_periods) {
  if (num_periods < 3) throw DomainError("at least three periods are required");
  const int k = (num_periods - 1) / 2;
  PeriodGrouping g;
  for (int t = 1; t <= k; ++t) g.groups[0].push_back(t);
  for (int t = k + 1; t <= 2 * k; ++t) g.groups[1].push_back(t);
  g.groups[2].push_back(2 * k + 1);
  return g;
}

void PeriodGrouping::validate(int num_periods) const {
  std::set<int> seen;
  for (int g = 0; g < 3; ++g) {
    if (groups[g].empty()) throw DomainError("period group " + std::to_string(g + 1) + " is empty");
    for (int t : groups[g]) {
      if (t < 1 || t > num_periods) {
        throw DomainError("period " + std::to_string(t) + " outside 1.." +
                          std::to_string(num_periods));
      }
      if (!seen.insert(t).second) {
        throw DomainError("period groups overlap at period " + std::to_string(t));
      }
    }
  }
}

int outcome_count(int num_alternatives, int group_size) {
  long long n = 1;
  for (int i = 0; i < group_size; ++i) {
    n *= num_alternatives;
    if (n > (1LL << 24)) throw DomainError("grouped outcome space too large");
  }
  return static_cast<int>(n);
}

std::vector<int> decode_outcome(int index, int num_alternatives, int group_size) {
  std::vector<int> out(group_size);
  for (int i = group_size - 1; i >= 0; --i) {
    out[i] = index % num_alternatives + 1;
    index /= num_alternatives;
  }
  return out;
}

int encode_outcome(std::span<const int> choices, int num_alternatives) {
  int index = 0;
  for (int y : choices) {
    if (y < 1 || y > num_alternatives) {
      throw DomainError("choice " + std::to_string(y) + " outside 1.." +
                        std::to_string(num_alternatives));
    }
    index = index * num_alternatives + (y - 1);
  }
  return index;
}

JointChoiceTensor::JointChoiceTensor(int num_alternatives, PeriodGrouping grouping,
                                     std::vector<double> probs, double mass_tolerance)
    : num_alternatives_(num_alternatives), grouping_(std::move(grouping)), probs_(std::move(probs)) {
  if (num_alternatives < 1) throw DomainError("tensor needs at least one alternative");
  for (int g = 0; g < 3; ++g) {
    if (grouping_.groups[g].empty()) throw DomainError("tensor period group is empty");
    dims_[g] = outcome_count(num_alternatives, grouping_.group_size(g));
  }
  const std::size_t expected = static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
  if (probs_.size() != expected) {
    throw DomainError("tensor has " + std::to_string(probs_.size()) + " entries, expected " +
                      std::to_string(expected));
  }
  double total = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0)) throw DomainError("tensor entries must be nonnegative");
    total += p;
  }
  if (std::abs(total - 1.0) > mass_tolerance) {
    throw DomainError("tensor mass is " + std::to_string(total) + ", expected 1");
  }
}

Eigen::MatrixXd JointChoiceTensor::pair_matrix() const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dims_[0], dims_[1]);
  for (int i = 0; i < dims_[0]; ++i)
    for (int j = 0; j < dims_[1]; ++j)
      for (int k = 0; k < dims_[2]; ++k) out(i, j) += (*this)(i, j, k);
  return out;
}

Eigen::MatrixXd JointChoiceTensor::slice(int k) const {
  Eigen::MatrixXd out(dims_[0], dims_[1]);
  for (int i = 0; i < dims_[0]; ++i)
    for (int j = 0; j < dims_[1]; ++j) out(i, j) = (*this)(i, j, k);
  return out;
}

Eigen::VectorXd JointChoiceTensor::marginal(int mode) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(dims_[mode]);
  for (int i = 0; i < dims_[0]; ++i)
    for (int j = 0; j < dims_[1]; ++j)
      for (int k = 0; k < dims_[2]; ++k) {
        const int idx = mode == 0 ? i : (mode == 1 ? j : k);
        out(idx) += (*this)(i, j, k);
      }
  return out;
}

double JointChoiceTensor::total_mass() const {
  double s = 0.0;
  for (double p : probs_) s += p;
  return s;
}

}  // namespace choiceset
