#pragma once

#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace choiceset {

inline constexpr int kMaxAlternatives = 16;

/// Nonempty subset of the grand choice set {1..Y}, stored as a bit vector.
/// Alternative y (1-based) is a member iff bit y-1 is set.
class ChoiceSetMask {
 public:
  /// Builds a mask from raw bits. Throws DomainError if the bits are empty,
  /// exceed Y, or Y is outside 1..16.
  static ChoiceSetMask from_bits(std::uint32_t bits, int num_alternatives);
  /// Builds a mask from 1-based alternative labels.
  static ChoiceSetMask from_alternatives(std::span<const int> alternatives, int num_alternatives);
  /// The grand choice set {1..Y}.
  static ChoiceSetMask full(int num_alternatives);

  std::uint32_t bits() const noexcept { return bits_; }
  int num_alternatives() const noexcept { return num_alternatives_; }
  int size() const noexcept;
  /// Membership of 1-based alternative y.
  bool contains(int y) const noexcept { return y >= 1 && y <= 16 && (bits_ >> (y - 1)) & 1u; }
  bool contains_index(int index) const noexcept { return (bits_ >> index) & 1u; }
  bool is_subset_of(const ChoiceSetMask& other) const noexcept {
    return (bits_ & ~other.bits_) == 0;
  }
  /// Sorted 1-based members.
  std::vector<int> alternatives() const;
  /// "{1,2,5}"
  std::string to_string() const;

  friend bool operator==(const ChoiceSetMask&, const ChoiceSetMask&) = default;
  friend std::strong_ordering operator<=>(const ChoiceSetMask& a, const ChoiceSetMask& b) {
    if (auto c = a.num_alternatives_ <=> b.num_alternatives_; c != 0) return c;
    return a.bits_ <=> b.bits_;
  }

 private:
  ChoiceSetMask(std::uint32_t bits, int num_alternatives)
      : bits_(bits), num_alternatives_(num_alternatives) {}

  std::uint32_t bits_;
  int num_alternatives_;
};

/// All 2^Y - 1 nonempty menus in increasing bit order, optionally restricted
/// to menus that contain every alternative of `required`.
std::vector<ChoiceSetMask> all_menus(int num_alternatives, std::uint32_t required_bits = 0);

}  // namespace choiceset
