#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "faultrange/bits.hpp"
#include "faultrange/graph.hpp"
#include "faultrange/rng.hpp"

namespace faultrange {

/// Weight faults live in conv2d/linear parameters and persist for an epoch;
/// neuron faults hit a conv2d/linear output value during one inference.
enum class FaultKind { weight, neuron };

std::string_view to_string(FaultKind kind) noexcept;
std::optional<FaultKind> parse_fault_kind(std::string_view name) noexcept;

struct FaultSpec {
  FaultKind kind = FaultKind::weight;
  std::size_t layer_index = 0;
  std::size_t slot = 0;  // parameter slot for weight faults (0 = weight, 1 = bias)
  std::size_t element = 0;
  BitIndex bit{0};

  friend bool operator==(const FaultSpec&, const FaultSpec&) = default;
  friend auto operator<=>(const FaultSpec&, const FaultSpec&) = default;
};

struct FaultPlan {
  FaultKind kind = FaultKind::weight;
  std::vector<FaultSpec> faults;
  std::uint64_t master_seed = 0;
  std::uint64_t epoch = 0;
  std::optional<std::uint64_t> image;  // set for neuron plans

  friend bool operator==(const FaultPlan&, const FaultPlan&) = default;
};

/// Bit positions, parsed from "a:b" inclusive ranges and comma lists
/// ("0:8", "0,1,8", "0:2,31"). Sorted and deduplicated.
std::vector<BitIndex> parse_bits(std::string_view text);
std::string format_bits(const std::vector<BitIndex>& bits);
inline constexpr std::string_view kDefaultBits = "0:8";

/// One tensor of eligible fault sites.
struct SiteGroup {
  std::size_t layer_index = 0;
  std::size_t slot = 0;
  std::size_t count = 0;
};

enum class SiteSampling {
  element_uniform,  // every eligible scalar equally likely
  layer_uniform,    // pick a site group uniformly, then an element within it
};

struct SamplingOptions {
  bool include_bias = false;
  SiteSampling sampling = SiteSampling::element_uniform;
};

/// Fault sites in layer order: conv2d/linear weights (and biases on request)
/// for weight faults; conv2d/linear outputs for neuron faults.
std::vector<SiteGroup> eligible_sites(const ModelGraph& model, FaultKind kind,
                                      bool include_bias = false);

/// Draws k pairwise-distinct faults (duplicates are redrawn). The bit is
/// uniform over `bits`. Throws ErrorCode::config if k exceeds the number of
/// distinct (site, bit) combinations.
FaultPlan sample_faults(const ModelGraph& model, FaultKind kind, std::size_t k,
                        const std::vector<BitIndex>& bits, CounterRng& rng,
                        const SamplingOptions& options = {});

/// Keyed convenience wrapper: weight plans use (seed, epoch), neuron plans
/// (seed, epoch, image).
FaultPlan sample_plan(const ModelGraph& model, FaultKind kind, std::size_t k,
                      const std::vector<BitIndex>& bits, std::uint64_t master_seed,
                      std::uint64_t epoch, std::optional<std::uint64_t> image,
                      const SamplingOptions& options = {});

/// Checks that every spec addresses an existing eligible site.
void validate_plan(const ModelGraph& model, const FaultPlan& plan);

/// Original values of the parameters a weight plan touched, in application order.
struct RevertToken {
  struct Entry {
    std::size_t layer_index;
    std::size_t slot;
    std::size_t element;
    float original;
  };
  std::vector<Entry> entries;
};

/// Flips the planned bits in place on a model owned by the caller.
RevertToken apply_weight_faults(ModelGraph& model, const FaultPlan& plan);
void revert_weight_faults(ModelGraph& model, const RevertToken& token);

/// Copy of `model` with the plan applied; `model` itself is untouched.
ModelGraph faulted_copy(const ModelGraph& model, const FaultPlan& plan);

/// Forward hook flipping the planned output bits. It must precede the
/// protection hook in the hook list.
LayerHook make_neuron_fault_hook(FaultPlan plan);

struct BitFraction {
  BitIndex bit{0};
  std::size_t ones = 0;
  std::size_t total = 0;
  double fraction = 0.0;
};

/// Per-bit fraction of set bits across all conv2d weights.
std::vector<BitFraction> weight_bit_histogram(const ModelGraph& model,
                                              const std::vector<BitIndex>& bits);

}  // namespace faultrange
