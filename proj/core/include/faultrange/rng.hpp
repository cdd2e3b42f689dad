#pragma once

#include <cstdint>

namespace faultrange {

/// Independent random streams used by the toolkit. Every stream is keyed by
/// (master seed, purpose, epoch, item) so the values it yields do not depend
/// on which thread consumes it or in which order work items are scheduled.
enum class StreamPurpose : std::uint64_t {
  weight_faults = 1,
  neuron_faults = 2,
  dataset = 3,
  init = 4,
  shuffle = 5,
};

struct StreamKey {
  std::uint64_t seed = 0;
  StreamPurpose purpose = StreamPurpose::dataset;
  std::uint64_t epoch = 0;
  std::uint64_t item = 0;
};

/// Counter-based generator: the n-th output is a pure function of the key and n
/// (SplitMix64 finalizer over key + n * golden-gamma).
class CounterRng {
 public:
  explicit CounterRng(const StreamKey& key);

  std::uint64_t next_u64() noexcept;

  /// Unbiased integer in [0, bound); bound must be > 0.
  std::uint64_t uniform_below(std::uint64_t bound) noexcept;

  /// Double in [0, 1) with 53 random bits.
  double uniform01() noexcept;

  /// Float in [lo, hi).
  float uniform(float lo, float hi) noexcept;

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace faultrange
