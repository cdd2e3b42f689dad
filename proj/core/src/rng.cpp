#include "faultrange/rng.hpp"

namespace faultrange {

namespace {
constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
__extension__ using u128 = unsigned __int128;
}

std::uint64_t mix64(std::uint64_t x) noexcept {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

CounterRng::CounterRng(const StreamKey& key) {
  std::uint64_t h = mix64(key.item + kGamma);
  h = mix64(h ^ (key.epoch + 2 * kGamma));
  h = mix64(h ^ (static_cast<std::uint64_t>(key.purpose) + 3 * kGamma));
  key_ = mix64(h ^ (key.seed + 4 * kGamma));
}

std::uint64_t CounterRng::next_u64() noexcept {
  ++counter_;
  return mix64(key_ + counter_ * kGamma);
}

std::uint64_t CounterRng::uniform_below(std::uint64_t bound) noexcept {
  // Lemire's multiply-shift with rejection.
  std::uint64_t x = next_u64();
  u128 m = static_cast<u128>(x) * bound;
  auto low = static_cast<std::uint64_t>(m);
  if (low < bound) {
    const std::uint64_t threshold = -bound % bound;
    while (low < threshold) {
      x = next_u64();
      m = static_cast<u128>(x) * bound;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

double CounterRng::uniform01() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

float CounterRng::uniform(float lo, float hi) noexcept {
  const double u = uniform01();
  float v = static_cast<float>(lo + (static_cast<double>(hi) - lo) * u);
  return v < hi ? v : lo;
}

}  // namespace faultrange
