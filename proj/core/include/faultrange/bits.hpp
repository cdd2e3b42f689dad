#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>

#include "faultrange/tensor.hpp"

namespace faultrange {

/// Bit position inside an FP32 word, counted from the most significant end:
/// 0 is the sign, 1..8 the exponent (1 = exponent MSB), 9..31 the mantissa.
/// The physical LSB-0 bit is 31 - position.
class BitIndex {
 public:
  static constexpr int kSign = 0;
  static constexpr int kExponentMsb = 1;
  static constexpr int kExponentLsb = 8;
  static constexpr int kLast = 31;

  explicit BitIndex(int position);

  int position() const noexcept { return position_; }
  int physical() const noexcept { return kLast - position_; }
  std::uint32_t mask() const noexcept { return std::uint32_t{1} << physical(); }

  bool is_sign() const noexcept { return position_ == kSign; }
  bool is_exponent() const noexcept {
    return position_ >= kExponentMsb && position_ <= kExponentLsb;
  }
  bool is_mantissa() const noexcept { return position_ > kExponentLsb; }

  friend bool operator==(BitIndex, BitIndex) = default;
  friend auto operator<=>(BitIndex, BitIndex) = default;

 private:
  int position_;
};

std::uint32_t to_bits(float value) noexcept;
float from_bits(std::uint32_t bits) noexcept;

/// Toggles exactly one stored bit (NaN inputs included; works on the raw word).
float flip_bit(float value, BitIndex bit) noexcept;

/// Stored state (0 or 1) of one bit.
int bit_state(float value, BitIndex bit) noexcept;

/// Biased exponent field (0..255).
int exponent_field(float value) noexcept;

enum class NonFiniteKind { inf, nan };

struct NonFinite {
  std::size_t index;
  NonFiniteKind kind;

  friend bool operator==(const NonFinite&, const NonFinite&) = default;
};

/// Lowest flat index holding Inf or NaN, if any.
std::optional<NonFinite> scan_non_finite(std::span<const float> values) noexcept;
inline std::optional<NonFinite> scan_non_finite(const Tensor& t) noexcept {
  return scan_non_finite(t.data());
}

const char* to_string(NonFiniteKind kind) noexcept;

}  // namespace faultrange
