#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "faultrange/dataset.hpp"
#include "faultrange/graph.hpp"
#include "faultrange/tensor.hpp"

namespace faultrange {

/// Range restriction applied at a protection point. `none` still records
/// out-of-bound events but leaves the activations untouched.
enum class Policy { none, ranger, clipper, fmap_rescale, backflip, fmap_avg };

inline constexpr std::array<Policy, 6> kAllPolicies{Policy::none,        Policy::ranger,
                                                    Policy::clipper,     Policy::fmap_rescale,
                                                    Policy::backflip,    Policy::fmap_avg};

std::string_view to_string(Policy policy) noexcept;
std::optional<Policy> parse_policy(std::string_view name) noexcept;

/// Scalar activation interval for one protection point.
struct Bound {
  std::size_t protection_point = 0;
  float t_low = 0.0f;
  float t_up = 0.0f;
};

struct BoundsFile {
  std::vector<Bound> entries;
  std::string dataset_id;
  std::size_t sample_count = 0;

  const Bound* find(std::size_t protection_point) const noexcept;
  /// t_low <= t_up per entry, finite values, and exactly one entry per
  /// protection point of `model`. Throws ErrorCode::schema / ErrorCode::config.
  void validate(const ModelGraph& model) const;
};

/// Min/max of every protection point's activations over the fault-free
/// forward passes of `indices`.
BoundsFile extract_bounds(const ModelGraph& model, const Dataset& dataset,
                          std::span<const std::size_t> indices);

// Elementwise policies. Out-of-bound means x > t_up or x < t_low (strict);
// NaN is never out of bound.

float ranger(float x, float t_low, float t_up) noexcept;
float clipper(float x, float t_low, float t_up) noexcept;
/// Top-down case chain: x > t_up*2^64 -> 0, x > 2*t_up -> 2, x > t_up -> t_up,
/// x < t_low -> t_low.
float backflip(float x, float t_low, float t_up) noexcept;

Tensor apply_ranger(const Tensor& f, float t_low, float t_up);
Tensor apply_clipper(const Tensor& f, float t_low, float t_up);
Tensor apply_backflip(const Tensor& f, float t_low, float t_up);

/// Rescales one feature map: values above t_up are mapped linearly from
/// [min(f), max(f)] onto [t_low, t_up]; values below t_low become t_low.
/// A constant map sends its out-of-bound values to t_up.
Tensor apply_fmap_rescale(const Tensor& fmap, float t_low, float t_up);

/// Replaces out-of-bound values of corrupted channels with the elementwise mean
/// of the healthy channels (all values within [t_low, t_up]), or zero when no
/// channel is healthy. Rank-1 inputs are a single channel.
Tensor apply_fmap_avg(const Tensor& layer_output, float t_low, float t_up);

/// Applies `policy` in place. Feature-map policies run per channel for [C,H,W]
/// tensors and treat any other rank as a single map.
void restrict_in_place(Tensor& t, Policy policy, float t_low, float t_up);

struct OobEvent {
  std::size_t protection_point = 0;
  std::size_t count = 0;             // offending elements
  float max_magnitude = 0.0f;        // largest |x| among them
};

/// Counts out-of-bound elements of `t` without modifying it.
OobEvent detect_oob(std::span<const float> t, const Bound& bound);

struct ProtectionResult {
  Tensor restricted;
  OobEvent event;
};

/// Records the event on the unrestricted tensor, then applies the policy.
/// Throws ErrorCode::config if `bounds` has no entry for `protection_point`.
ProtectionResult protect(const Tensor& layer_output, const BoundsFile& bounds,
                         std::size_t protection_point, Policy policy);

/// Out-of-bound bookkeeping for one inference.
struct OobRecord {
  std::vector<OobEvent> events;  // only points that fired, in layer order

  bool any() const noexcept { return !events.empty(); }
  std::size_t total() const noexcept;
  void clear() noexcept { events.clear(); }
};

/// Forward hook implementing every protection point of `model`. Events are
/// appended to `record`, which must outlive the hook.
LayerHook make_protection_hook(const ModelGraph& model, const BoundsFile& bounds, Policy policy,
                               OobRecord* record);

}  // namespace faultrange
