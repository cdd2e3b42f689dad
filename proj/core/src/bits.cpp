#include "faultrange/bits.hpp"

#include <bit>
#include <cmath>
#include <string>

#include "faultrange/error.hpp"

namespace faultrange {

BitIndex::BitIndex(int position) : position_(position) {
  if (position < 0 || position > kLast) {
    fail(ErrorCode::config,
         "bit position " + std::to_string(position) + " outside [0, 31]");
  }
}

std::uint32_t to_bits(float value) noexcept {
  return std::bit_cast<std::uint32_t>(value);
}

float from_bits(std::uint32_t bits) noexcept {
  return std::bit_cast<float>(bits);
}

float flip_bit(float value, BitIndex bit) noexcept {
  return from_bits(to_bits(value) ^ bit.mask());
}

int bit_state(float value, BitIndex bit) noexcept {
  return (to_bits(value) & bit.mask()) != 0 ? 1 : 0;
}

int exponent_field(float value) noexcept {
  return static_cast<int>((to_bits(value) >> 23) & 0xFFu);
}

std::optional<NonFinite> scan_non_finite(std::span<const float> values) noexcept {
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float v = values[i];
    if (std::isnan(v)) return NonFinite{i, NonFiniteKind::nan};
    if (std::isinf(v)) return NonFinite{i, NonFiniteKind::inf};
  }
  return std::nullopt;
}

const char* to_string(NonFiniteKind kind) noexcept {
  return kind == NonFiniteKind::inf ? "inf" : "nan";
}

}  // namespace faultrange
