#include "choiceset/choice_set.hpp"

#include <bit>

#include "choiceset/errors.hpp"

namespace choiceset {

ChoiceSetMask ChoiceSetMask::from_bits(std::uint32_t bits, int num_alternatives) {
  if (num_alternatives < 1 || num_alternatives > kMaxAlternatives) {
    throw DomainError("number of alternatives must be in 1..16, got " +
                      std::to_string(num_alternatives));
  }
  const std::uint32_t universe = (1u << num_alternatives) - 1u;
  if (bits == 0) throw DomainError("menus must be nonempty");
  if ((bits & ~universe) != 0) {
    throw DomainError("menu contains an alternative above Y=" + std::to_string(num_alternatives));
  }
  return ChoiceSetMask(bits, num_alternatives);
}

ChoiceSetMask ChoiceSetMask::from_alternatives(std::span<const int> alternatives,
                                               int num_alternatives) {
  std::uint32_t bits = 0;
  for (int y : alternatives) {
    if (y < 1 || y > num_alternatives) {
      throw DomainError("alternative " + std::to_string(y) + " outside 1.." +
                        std::to_string(num_alternatives));
    }
    bits |= 1u << (y - 1);
  }
  return from_bits(bits, num_alternatives);
}

ChoiceSetMask ChoiceSetMask::full(int num_alternatives) {
  if (num_alternatives < 1 || num_alternatives > kMaxAlternatives) {
    throw DomainError("number of alternatives must be in 1..16");
  }
  return ChoiceSetMask((1u << num_alternatives) - 1u, num_alternatives);
}

int ChoiceSetMask::size() const noexcept { return std::popcount(bits_); }

std::vector<int> ChoiceSetMask::alternatives() const {
  std::vector<int> out;
  for (int i = 0; i < num_alternatives_; ++i) {
    if (contains_index(i)) out.push_back(i + 1);
  }
  return out;
}

std::string ChoiceSetMask::to_string() const {
  std::string s = "{";
  bool first = true;
  for (int y : alternatives()) {
    if (!first) s += ",";
    s += std::to_string(y);
    first = false;
  }
  return s + "}";
}

std::vector<ChoiceSetMask> all_menus(int num_alternatives, std::uint32_t required_bits) {
  const auto full = ChoiceSetMask::full(num_alternatives);
  if ((required_bits & ~full.bits()) != 0) {
    throw DomainError("required alternatives exceed Y");
  }
  std::vector<ChoiceSetMask> out;
  for (std::uint32_t b = 1; b <= full.bits(); ++b) {
    if ((b & required_bits) == required_bits) out.push_back(ChoiceSetMask::from_bits(b, num_alternatives));
  }
  return out;
}

}  // namespace choiceset
