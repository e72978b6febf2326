#pragma once

#include <array>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace choiceset {

/// Three disjoint groups of 1-based periods. Group g's choices are encoded as a
/// single outcome z_g in {0..Y^K_g - 1}, first listed period most significant.
struct PeriodGrouping {
  std::array<std::vector<int>, 3> groups;

  /// ({1},{2},{3})
  static PeriodGrouping triple();
  /// First K periods, next K periods, then period 2K+1, with K = floor((T-1)/2).
  static PeriodGrouping standard(int num_periods);

  int group_size(int g) const { return static_cast<int>(groups[g].size()); }
  /// Throws DomainError unless groups are nonempty, disjoint and within 1..T.
  void validate(int num_periods) const;

  friend bool operator==(const PeriodGrouping&, const PeriodGrouping&) = default;
  friend auto operator<=>(const PeriodGrouping&, const PeriodGrouping&) = default;
};

/// Y^K, with overflow checks.
int outcome_count(int num_alternatives, int group_size);

/// Decodes a grouped outcome index into 1-based choices (length K).
std::vector<int> decode_outcome(int index, int num_alternatives, int group_size);
/// Inverse of decode_outcome.
int encode_outcome(std::span<const int> choices, int num_alternatives);

/// Joint pmf of the three grouped outcomes (z1, z2, z3). Entries are stored
/// row-major: index (i, j, k) -> (i * n2 + j) * n3 + k.
class JointChoiceTensor {
 public:
  JointChoiceTensor() = default;
  /// Takes ownership of `probs`; validates shape, nonnegativity and unit mass
  /// within `mass_tolerance`.
  JointChoiceTensor(int num_alternatives, PeriodGrouping grouping, std::vector<double> probs,
                    double mass_tolerance = 1e-9);

  int num_alternatives() const noexcept { return num_alternatives_; }
  const PeriodGrouping& grouping() const noexcept { return grouping_; }
  int dim(int mode) const noexcept { return dims_[mode]; }
  std::array<int, 3> dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return probs_.size(); }

  double operator()(int i, int j, int k) const noexcept {
    return probs_[(static_cast<std::size_t>(i) * dims_[1] + j) * dims_[2] + k];
  }
  std::span<const double> data() const noexcept { return probs_; }

  /// L12 = [sum_k P(i, j, k)].
  Eigen::MatrixXd pair_matrix() const;
  /// [P(i, j, k)] for fixed k.
  Eigen::MatrixXd slice(int k) const;
  /// One-way marginal of mode `mode`.
  Eigen::VectorXd marginal(int mode) const;
  double total_mass() const;

 private:
  int num_alternatives_ = 0;
  PeriodGrouping grouping_;
  std::array<int, 3> dims_{0, 0, 0};
  std::vector<double> probs_;
};

}  // namespace choiceset
