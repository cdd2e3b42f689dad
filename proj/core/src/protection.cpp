#include "faultrange/protection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "faultrange/error.hpp"

namespace faultrange {

std::string_view to_string(Policy policy) noexcept {
  switch (policy) {
    case Policy::none: return "none";
    case Policy::ranger: return "ranger";
    case Policy::clipper: return "clipper";
    case Policy::fmap_rescale: return "fmap_rescale";
    case Policy::backflip: return "backflip";
    case Policy::fmap_avg: return "fmap_avg";
  }
  return "unknown";
}

std::optional<Policy> parse_policy(std::string_view name) noexcept {
  for (auto p : kAllPolicies) {
    if (to_string(p) == name) return p;
  }
  return std::nullopt;
}

const Bound* BoundsFile::find(std::size_t protection_point) const noexcept {
  for (const auto& b : entries) {
    if (b.protection_point == protection_point) return &b;
  }
  return nullptr;
}

void BoundsFile::validate(const ModelGraph& model) const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& b = entries[i];
    const std::string where = "entries[" + std::to_string(i) + "]";
    if (!std::isfinite(b.t_low) || !std::isfinite(b.t_up)) {
      fail(ErrorCode::schema, where + ": bounds must be finite");
    }
    if (b.t_low > b.t_up) {
      fail(ErrorCode::schema, where + ".t_low: t_low > t_up for protection point " +
                                  std::to_string(b.protection_point));
    }
    if (!model.is_protection_point(b.protection_point)) {
      fail(ErrorCode::config, where + ".protection_point: layer " +
                                  std::to_string(b.protection_point) +
                                  " is not a protection point of the model");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (entries[j].protection_point == b.protection_point) {
        fail(ErrorCode::config, where + ".protection_point: duplicate entry for layer " +
                                    std::to_string(b.protection_point));
      }
    }
  }
  for (auto p : model.protection_points()) {
    if (!find(p)) {
      fail(ErrorCode::config, "missing bounds entry for protection point " + std::to_string(p));
    }
  }
}

BoundsFile extract_bounds(const ModelGraph& model, const Dataset& dataset,
                          std::span<const std::size_t> indices) {
  if (indices.empty()) fail(ErrorCode::config, "bound extraction needs a nonempty profiling set");
  BoundsFile out;
  out.dataset_id = dataset.id;
  out.sample_count = indices.size();
  for (auto p : model.protection_points()) {
    out.entries.push_back({p, std::numeric_limits<float>::infinity(),
                           -std::numeric_limits<float>::infinity()});
  }
  std::vector<Bound*> by_layer(model.num_layers(), nullptr);
  for (auto& e : out.entries) by_layer[e.protection_point] = &e;

  const LayerHook monitor = [&](std::size_t layer, Tensor& t) {
    Bound* b = by_layer[layer];
    if (!b) return;
    for (float v : t.data()) {
      b->t_low = std::min(b->t_low, v);
      b->t_up = std::max(b->t_up, v);
    }
  };
  for (auto i : indices) {
    const auto outcome = forward(model, dataset.images.at(i), std::span(&monitor, 1));
    if (outcome.is_due()) {
      fail(ErrorCode::config, "profiling sample " + std::to_string(i) +
                                  " produced a non-finite activation at layer " +
                                  std::to_string(outcome.due().layer_index));
    }
  }
  return out;
}

float ranger(float x, float t_low, float t_up) noexcept {
  if (x > t_up) return t_up;
  if (x < t_low) return t_low;
  return x;
}

float clipper(float x, float t_low, float t_up) noexcept {
  return (x > t_up || x < t_low) ? 0.0f : x;
}

float backflip(float x, float t_low, float t_up) noexcept {
  // Thresholds in double: t_up * 2^64 and 2 * t_up are exact there.
  const double up = t_up;
  const double xd = x;
  if (xd > up * 0x1p64) return 0.0f;
  if (xd > up * 2.0) return 2.0f;
  if (xd > up) return t_up;
  if (x < t_low) return t_low;
  return x;
}

namespace {

template <class F>
Tensor map_elements(const Tensor& f, F fn) {
  Tensor out = f;
  for (float& v : out.data()) v = fn(v);
  return out;
}

void rescale_map(std::span<float> f, float t_low, float t_up) {
  float lo = std::numeric_limits<float>::infinity();
  float hi = -std::numeric_limits<float>::infinity();
  for (float v : f) {
    if (std::isnan(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = static_cast<double>(hi) - static_cast<double>(lo);
  const double range = static_cast<double>(t_up) - static_cast<double>(t_low);
  for (float& v : f) {
    if (v > t_up) {
      if (hi == lo || v == std::numeric_limits<float>::infinity()) {
        v = t_up;
      } else {
        const double mapped = (static_cast<double>(v) - lo) * range / span + t_low;
        v = std::min(static_cast<float>(mapped), t_up);
      }
    } else if (v < t_low) {
      v = t_low;
    }
  }
}

bool out_of_bound(float x, float t_low, float t_up) noexcept { return x > t_up || x < t_low; }

void fmap_avg_in_place(Tensor& t, float t_low, float t_up) {
  const bool spatial = t.rank() == 3;
  const std::size_t channels = spatial ? t.shape()[0] : 1;
  const std::size_t plane = t.size() / channels;
  auto d = t.data();

  std::vector<char> healthy(channels, 0);
  std::size_t n_healthy = 0;
  bool any_corrupt = false;
  for (std::size_t c = 0; c < channels; ++c) {
    bool ok = true;
    for (std::size_t i = 0; i < plane && ok; ++i) {
      const float v = d[c * plane + i];
      ok = v <= t_up && v >= t_low;
    }
    healthy[c] = ok;
    n_healthy += ok;
    any_corrupt = any_corrupt || !ok;
  }
  if (!any_corrupt) return;

  std::vector<float> avg(plane, 0.0f);
  if (n_healthy > 0) {
    for (std::size_t i = 0; i < plane; ++i) {
      double sum = 0.0;
      for (std::size_t c = 0; c < channels; ++c) {
        if (healthy[c]) sum += d[c * plane + i];
      }
      avg[i] = static_cast<float>(sum / static_cast<double>(n_healthy));
    }
  }
  for (std::size_t c = 0; c < channels; ++c) {
    if (healthy[c]) continue;
    for (std::size_t i = 0; i < plane; ++i) {
      float& v = d[c * plane + i];
      if (out_of_bound(v, t_low, t_up)) v = avg[i];
    }
  }
}

}  // namespace

Tensor apply_ranger(const Tensor& f, float t_low, float t_up) {
  return map_elements(f, [=](float x) { return ranger(x, t_low, t_up); });
}

Tensor apply_clipper(const Tensor& f, float t_low, float t_up) {
  return map_elements(f, [=](float x) { return clipper(x, t_low, t_up); });
}

Tensor apply_backflip(const Tensor& f, float t_low, float t_up) {
  return map_elements(f, [=](float x) { return backflip(x, t_low, t_up); });
}

Tensor apply_fmap_rescale(const Tensor& fmap, float t_low, float t_up) {
  Tensor out = fmap;
  rescale_map(out.data(), t_low, t_up);
  return out;
}

Tensor apply_fmap_avg(const Tensor& layer_output, float t_low, float t_up) {
  Tensor out = layer_output;
  fmap_avg_in_place(out, t_low, t_up);
  return out;
}

void restrict_in_place(Tensor& t, Policy policy, float t_low, float t_up) {
  auto d = t.data();
  switch (policy) {
    case Policy::none:
      return;
    case Policy::ranger:
      for (float& v : d) v = ranger(v, t_low, t_up);
      return;
    case Policy::clipper:
      for (float& v : d) v = clipper(v, t_low, t_up);
      return;
    case Policy::backflip:
      for (float& v : d) v = backflip(v, t_low, t_up);
      return;
    case Policy::fmap_rescale: {
      const std::size_t channels = t.rank() == 3 ? t.shape()[0] : 1;
      const std::size_t plane = t.size() / channels;
      for (std::size_t c = 0; c < channels; ++c) {
        rescale_map(d.subspan(c * plane, plane), t_low, t_up);
      }
      return;
    }
    case Policy::fmap_avg:
      fmap_avg_in_place(t, t_low, t_up);
      return;
  }
}

OobEvent detect_oob(std::span<const float> t, const Bound& bound) {
  OobEvent e;
  e.protection_point = bound.protection_point;
  for (float v : t) {
    if (out_of_bound(v, bound.t_low, bound.t_up)) {
      ++e.count;
      e.max_magnitude = std::max(e.max_magnitude, std::fabs(v));
    }
  }
  return e;
}

ProtectionResult protect(const Tensor& layer_output, const BoundsFile& bounds,
                         std::size_t protection_point, Policy policy) {
  const Bound* b = bounds.find(protection_point);
  if (!b) {
    fail(ErrorCode::config, "no bounds entry for protection point " +
                                std::to_string(protection_point));
  }
  ProtectionResult r{layer_output, detect_oob(layer_output.data(), *b)};
  if (r.event.count > 0) restrict_in_place(r.restricted, policy, b->t_low, b->t_up);
  return r;
}

std::size_t OobRecord::total() const noexcept {
  std::size_t n = 0;
  for (const auto& e : events) n += e.count;
  return n;
}

LayerHook make_protection_hook(const ModelGraph& model, const BoundsFile& bounds, Policy policy,
                               OobRecord* record) {
  std::vector<std::optional<Bound>> by_layer(model.num_layers());
  for (auto p : model.protection_points()) {
    const Bound* b = bounds.find(p);
    if (!b) fail(ErrorCode::config, "no bounds entry for protection point " + std::to_string(p));
    by_layer[p] = *b;
  }
  return [by_layer = std::move(by_layer), policy, record](std::size_t layer, Tensor& t) {
    const auto& b = by_layer[layer];
    if (!b) return;
    const OobEvent e = detect_oob(t.data(), *b);
    if (e.count == 0) return;
    if (record) record->events.push_back(e);
    restrict_in_place(t, policy, b->t_low, b->t_up);
  };
}

}  // namespace faultrange
