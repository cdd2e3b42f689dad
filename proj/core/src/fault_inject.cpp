#include "faultrange/fault_inject.hpp"

#include <algorithm>
#include <charconv>
#include <set>

#include "faultrange/error.hpp"

namespace faultrange {

std::string_view to_string(FaultKind kind) noexcept {
  return kind == FaultKind::weight ? "weight" : "neuron";
}

std::optional<FaultKind> parse_fault_kind(std::string_view name) noexcept {
  if (name == "weight") return FaultKind::weight;
  if (name == "neuron") return FaultKind::neuron;
  return std::nullopt;
}

namespace {

int parse_position(std::string_view s, std::string_view whole) {
  int v = -1;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    fail(ErrorCode::config, "invalid bit list '" + std::string(whole) + "'");
  }
  return v;
}

}  // namespace

std::vector<BitIndex> parse_bits(std::string_view text) {
  std::set<int> positions;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string_view item =
        text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    const std::size_t colon = item.find(':');
    if (colon == std::string_view::npos) {
      positions.insert(BitIndex(parse_position(item, text)).position());
    } else {
      const int lo = BitIndex(parse_position(item.substr(0, colon), text)).position();
      const int hi = BitIndex(parse_position(item.substr(colon + 1), text)).position();
      if (lo > hi) fail(ErrorCode::config, "empty bit range '" + std::string(item) + "'");
      for (int b = lo; b <= hi; ++b) positions.insert(b);
    }
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  std::vector<BitIndex> out;
  for (int p : positions) out.emplace_back(p);
  return out;
}

std::string format_bits(const std::vector<BitIndex>& bits) {
  std::string out;
  for (std::size_t i = 0; i < bits.size();) {
    std::size_t j = i;
    while (j + 1 < bits.size() && bits[j + 1].position() == bits[j].position() + 1) ++j;
    if (!out.empty()) out += ",";
    out += std::to_string(bits[i].position());
    if (j > i) out += ":" + std::to_string(bits[j].position());
    i = j + 1;
  }
  return out;
}

std::vector<SiteGroup> eligible_sites(const ModelGraph& model, FaultKind kind,
                                      bool include_bias) {
  std::vector<SiteGroup> groups;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    const Layer& layer = model.layer(l);
    if (!is_parameterized(layer.kind())) continue;
    if (kind == FaultKind::weight) {
      groups.push_back({l, 0, layer.params[0].size()});
      if (include_bias && layer.params.size() > 1) groups.push_back({l, 1, layer.params[1].size()});
    } else {
      groups.push_back({l, 0, element_count(model.output_shape(l))});
    }
  }
  return groups;
}

FaultPlan sample_faults(const ModelGraph& model, FaultKind kind, std::size_t k,
                        const std::vector<BitIndex>& bits, CounterRng& rng,
                        const SamplingOptions& options) {
  if (bits.empty()) fail(ErrorCode::config, "bit range is empty");
  const auto groups = eligible_sites(model, kind, options.include_bias);
  std::size_t total = 0;
  for (const auto& g : groups) total += g.count;
  if (k > total * bits.size()) {
    fail(ErrorCode::config, "cannot draw " + std::to_string(k) + " distinct faults from " +
                                std::to_string(total * bits.size()) + " eligible (site, bit) pairs");
  }

  FaultPlan plan;
  plan.kind = kind;
  std::set<FaultSpec> seen;
  while (plan.faults.size() < k) {
    std::size_t g = 0;
    std::size_t element = 0;
    if (options.sampling == SiteSampling::element_uniform) {
      std::size_t u = rng.uniform_below(total);
      while (u >= groups[g].count) u -= groups[g++].count;
      element = u;
    } else {
      g = rng.uniform_below(groups.size());
      element = rng.uniform_below(groups[g].count);
    }
    const BitIndex bit = bits[rng.uniform_below(bits.size())];
    FaultSpec spec{kind, groups[g].layer_index, groups[g].slot, element, bit};
    if (seen.insert(spec).second) plan.faults.push_back(spec);
  }
  return plan;
}

FaultPlan sample_plan(const ModelGraph& model, FaultKind kind, std::size_t k,
                      const std::vector<BitIndex>& bits, std::uint64_t master_seed,
                      std::uint64_t epoch, std::optional<std::uint64_t> image,
                      const SamplingOptions& options) {
  const StreamPurpose purpose =
      kind == FaultKind::weight ? StreamPurpose::weight_faults : StreamPurpose::neuron_faults;
  CounterRng rng({master_seed, purpose, epoch, image.value_or(0)});
  FaultPlan plan = sample_faults(model, kind, k, bits, rng, options);
  plan.master_seed = master_seed;
  plan.epoch = epoch;
  plan.image = image;
  return plan;
}

void validate_plan(const ModelGraph& model, const FaultPlan& plan) {
  std::set<FaultSpec> seen;
  for (std::size_t i = 0; i < plan.faults.size(); ++i) {
    const auto& f = plan.faults[i];
    const std::string where = "faults[" + std::to_string(i) + "]";
    if (f.kind != plan.kind) fail(ErrorCode::config, where + ": kind differs from plan kind");
    if (f.layer_index >= model.num_layers() ||
        !is_parameterized(model.layer(f.layer_index).kind())) {
      fail(ErrorCode::config, where + ": layer " + std::to_string(f.layer_index) +
                                  " is not a conv2d/linear layer");
    }
    std::size_t count = 0;
    if (f.kind == FaultKind::weight) {
      const auto& params = model.layer(f.layer_index).params;
      if (f.slot >= params.size()) fail(ErrorCode::config, where + ": parameter slot out of range");
      count = params[f.slot].size();
    } else {
      if (f.slot != 0) fail(ErrorCode::config, where + ": neuron faults use slot 0");
      count = element_count(model.output_shape(f.layer_index));
    }
    if (f.element >= count) {
      fail(ErrorCode::config, where + ": element " + std::to_string(f.element) +
                                  " out of range (" + std::to_string(count) + ")");
    }
    if (!seen.insert(f).second) fail(ErrorCode::config, where + ": duplicate fault");
  }
}

RevertToken apply_weight_faults(ModelGraph& model, const FaultPlan& plan) {
  if (plan.kind != FaultKind::weight) fail(ErrorCode::config, "plan is not a weight-fault plan");
  validate_plan(model, plan);
  RevertToken token;
  for (const auto& f : plan.faults) {
    float& v = model.mutable_param(f.layer_index, f.slot)[f.element];
    token.entries.push_back({f.layer_index, f.slot, f.element, v});
    v = flip_bit(v, f.bit);
  }
  return token;
}

void revert_weight_faults(ModelGraph& model, const RevertToken& token) {
  for (auto it = token.entries.rbegin(); it != token.entries.rend(); ++it) {
    model.mutable_param(it->layer_index, it->slot)[it->element] = it->original;
  }
}

ModelGraph faulted_copy(const ModelGraph& model, const FaultPlan& plan) {
  ModelGraph copy = model;
  apply_weight_faults(copy, plan);
  return copy;
}

LayerHook make_neuron_fault_hook(FaultPlan plan) {
  if (plan.kind != FaultKind::neuron) fail(ErrorCode::config, "plan is not a neuron-fault plan");
  return [faults = std::move(plan.faults)](std::size_t layer, Tensor& out) {
    for (const auto& f : faults) {
      if (f.layer_index == layer) out[f.element] = flip_bit(out[f.element], f.bit);
    }
  };
}

std::vector<BitFraction> weight_bit_histogram(const ModelGraph& model,
                                              const std::vector<BitIndex>& bits) {
  std::vector<BitFraction> out;
  for (auto b : bits) out.push_back({b, 0, 0, 0.0});
  bool any_conv = false;
  for (const auto& layer : model.layers()) {
    if (layer.kind() != LayerKind::conv2d) continue;
    any_conv = true;
    for (float w : layer.params[0].data()) {
      for (auto& h : out) {
        h.ones += static_cast<std::size_t>(bit_state(w, h.bit));
        ++h.total;
      }
    }
  }
  if (!any_conv) fail(ErrorCode::config, "model has no conv2d layer");
  for (auto& h : out) h.fraction = static_cast<double>(h.ones) / static_cast<double>(h.total);
  return out;
}

}  // namespace faultrange
