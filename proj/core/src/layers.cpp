#include "faultrange/layers.hpp"

#include <cmath>

#include "faultrange/error.hpp"

namespace faultrange {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

[[noreturn]] void shape_error(std::string_view layer, const std::string& what) {
  fail(ErrorCode::shape, std::string(layer) + ": " + what);
}

void expect_rank(std::string_view layer, const Shape& input, std::size_t rank) {
  if (input.size() != rank) {
    shape_error(layer, "expected rank " + std::to_string(rank) + " input, got " +
                           shape_to_string(input));
  }
}

std::size_t pooled_extent(std::string_view layer, std::size_t extent, std::size_t window,
                          std::size_t stride) {
  if (window == 0 || stride == 0) shape_error(layer, "window and stride must be positive");
  if (extent < window) {
    shape_error(layer, "window " + std::to_string(window) + " exceeds extent " +
                           std::to_string(extent));
  }
  return (extent - window) / stride + 1;
}

Shape pool_shape(std::string_view name, std::size_t window, std::size_t stride,
                 const Shape& input) {
  expect_rank(name, input, 3);
  return {input[0], pooled_extent(name, input[1], window, stride),
          pooled_extent(name, input[2], window, stride)};
}

// Accumulates into an output plane so the innermost loop runs over output
// columns; each output still sums its terms in (input channel, kernel row,
// kernel column) order.
Tensor conv2d_forward(const Conv2d& c, const Layer& layer, const Tensor& in) {
  const Shape out_shape = output_shape(c, in.shape());
  Tensor out(out_shape);
  const std::size_t in_h = in.shape()[1], in_w = in.shape()[2];
  const std::size_t out_h = out_shape[1], out_w = out_shape[2];
  const auto w = layer.params[0].data();
  const auto x = in.data();
  auto y = out.data();
  const auto pad = static_cast<std::ptrdiff_t>(c.padding);
  const auto s = static_cast<std::ptrdiff_t>(c.stride);

  for (std::size_t oc = 0; oc < c.out_channels; ++oc) {
    float* plane = &y[oc * out_h * out_w];
    for (std::size_t ic = 0; ic < c.in_channels; ++ic) {
      const float* wk = &w[((oc * c.in_channels + ic) * c.kernel_h) * c.kernel_w];
      const float* xc = &x[ic * in_h * in_w];
      for (std::size_t ky = 0; ky < c.kernel_h; ++ky) {
        for (std::size_t kx = 0; kx < c.kernel_w; ++kx) {
          const float wv = wk[ky * c.kernel_w + kx];
          const auto dx = static_cast<std::ptrdiff_t>(kx) - pad;
          // Output columns whose input column lies inside the image.
          std::ptrdiff_t ox_lo = 0;
          while (ox_lo * s + dx < 0) ++ox_lo;
          auto ox_hi = static_cast<std::ptrdiff_t>(out_w);
          while (ox_hi > ox_lo && (ox_hi - 1) * s + dx >= static_cast<std::ptrdiff_t>(in_w)) --ox_hi;
          for (std::size_t oy = 0; oy < out_h; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * s +
                                      static_cast<std::ptrdiff_t>(ky) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_h)) continue;
            float* row = plane + oy * out_w;
            const float* xr = xc + static_cast<std::size_t>(iy) * in_w;
            if (s == 1) {
              for (std::ptrdiff_t ox = ox_lo; ox < ox_hi; ++ox) row[ox] += xr[ox + dx] * wv;
            } else {
              for (std::ptrdiff_t ox = ox_lo; ox < ox_hi; ++ox) row[ox] += xr[ox * s + dx] * wv;
            }
          }
        }
      }
    }
    if (c.bias) {
      const float b = layer.params[1][oc];
      for (std::size_t i = 0; i < out_h * out_w; ++i) plane[i] += b;
    }
  }
  return out;
}

Tensor linear_forward(const Linear& l, const Layer& layer, const Tensor& in) {
  Tensor out(output_shape(l, in.shape()));
  const auto w = layer.params[0].data();
  const auto x = in.data();
  auto y = out.data();
  for (std::size_t o = 0; o < l.out_features; ++o) {
    const float* row = &w[o * l.in_features];
    float acc = 0.0f;
    for (std::size_t i = 0; i < l.in_features; ++i) acc += x[i] * row[i];
    if (l.bias) acc += layer.params[1][o];
    y[o] = acc;
  }
  return out;
}

// NaN anywhere in the window wins.
Tensor maxpool_forward(const MaxPool2d& p, const Tensor& in) {
  Tensor out(output_shape(p, in.shape()));
  const std::size_t channels = in.shape()[0], in_h = in.shape()[1], in_w = in.shape()[2];
  const std::size_t out_h = out.shape()[1], out_w = out.shape()[2];
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        float m = in[(c * in_h + oy * p.stride) * in_w + ox * p.stride];
        for (std::size_t ky = 0; ky < p.window && !std::isnan(m); ++ky) {
          for (std::size_t kx = 0; kx < p.window; ++kx) {
            const float v = in[(c * in_h + oy * p.stride + ky) * in_w + ox * p.stride + kx];
            if (std::isnan(v) || v > m) {
              m = v;
              if (std::isnan(v)) break;
            }
          }
        }
        out[(c * out_h + oy) * out_w + ox] = m;
      }
    }
  }
  return out;
}

Tensor avgpool_forward(const AvgPool2d& p, const Tensor& in) {
  Tensor out(output_shape(p, in.shape()));
  const std::size_t channels = in.shape()[0], in_h = in.shape()[1], in_w = in.shape()[2];
  const std::size_t out_h = out.shape()[1], out_w = out.shape()[2];
  const auto count = static_cast<float>(p.window * p.window);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        float acc = 0.0f;
        for (std::size_t ky = 0; ky < p.window; ++ky) {
          for (std::size_t kx = 0; kx < p.window; ++kx) {
            acc += in[(c * in_h + oy * p.stride + ky) * in_w + ox * p.stride + kx];
          }
        }
        out[(c * out_h + oy) * out_w + ox] = acc / count;
      }
    }
  }
  return out;
}

Tensor batchnorm_forward(const BatchNorm2d& b, const Layer& layer, const Tensor& in) {
  Tensor out(output_shape(b, in.shape()));
  const std::size_t plane = in.shape()[1] * in.shape()[2];
  const auto& gamma = layer.params[0];
  const auto& beta = layer.params[1];
  const auto& mean = layer.params[2];
  const auto& var = layer.params[3];
  for (std::size_t c = 0; c < b.channels; ++c) {
    const float scale = gamma[c] / std::sqrt(var[c] + b.eps);
    for (std::size_t i = 0; i < plane; ++i) {
      out[c * plane + i] = (in[c * plane + i] - mean[c]) * scale + beta[c];
    }
  }
  return out;
}

}  // namespace

LayerKind kind_of(const LayerSpec& spec) noexcept {
  return std::visit(overloaded{
                        [](const Conv2d&) { return LayerKind::conv2d; },
                        [](const Linear&) { return LayerKind::linear; },
                        [](const Relu&) { return LayerKind::relu; },
                        [](const MaxPool2d&) { return LayerKind::maxpool2d; },
                        [](const AvgPool2d&) { return LayerKind::avgpool2d; },
                        [](const Flatten&) { return LayerKind::flatten; },
                        [](const BatchNorm2d&) { return LayerKind::batchnorm2d; },
                    },
                    spec);
}

std::string_view to_string(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::linear: return "linear";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::avgpool2d: return "avgpool2d";
    case LayerKind::flatten: return "flatten";
    case LayerKind::batchnorm2d: return "batchnorm2d";
  }
  return "unknown";
}

std::optional<LayerKind> parse_layer_kind(std::string_view name) noexcept {
  for (auto k : {LayerKind::conv2d, LayerKind::linear, LayerKind::relu, LayerKind::maxpool2d,
                 LayerKind::avgpool2d, LayerKind::flatten, LayerKind::batchnorm2d}) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

bool is_parameterized(LayerKind kind) noexcept {
  return kind == LayerKind::conv2d || kind == LayerKind::linear;
}

std::vector<ParamSlot> param_slots(const LayerSpec& spec) {
  return std::visit(
      overloaded{
          [](const Conv2d& c) {
            std::vector<ParamSlot> s{
                {"weight", {c.out_channels, c.in_channels, c.kernel_h, c.kernel_w}}};
            if (c.bias) s.push_back({"bias", {c.out_channels}});
            return s;
          },
          [](const Linear& l) {
            std::vector<ParamSlot> s{{"weight", {l.out_features, l.in_features}}};
            if (l.bias) s.push_back({"bias", {l.out_features}});
            return s;
          },
          [](const BatchNorm2d& b) {
            return std::vector<ParamSlot>{{"gamma", {b.channels}},
                                          {"beta", {b.channels}},
                                          {"running_mean", {b.channels}},
                                          {"running_var", {b.channels}}};
          },
          [](const auto&) { return std::vector<ParamSlot>{}; },
      },
      spec);
}

Shape output_shape(const LayerSpec& spec, const Shape& input) {
  return std::visit(
      overloaded{
          [&](const Conv2d& c) -> Shape {
            expect_rank("conv2d", input, 3);
            if (input[0] != c.in_channels) {
              shape_error("conv2d", "expected " + std::to_string(c.in_channels) +
                                        " input channels, got " + shape_to_string(input));
            }
            if (c.in_channels == 0 || c.out_channels == 0 || c.kernel_h == 0 ||
                c.kernel_w == 0 || c.stride == 0) {
              shape_error("conv2d", "channel counts, kernel and stride must be positive");
            }
            const std::size_t h = input[1] + 2 * c.padding;
            const std::size_t w = input[2] + 2 * c.padding;
            if (h < c.kernel_h || w < c.kernel_w) {
              shape_error("conv2d", "kernel larger than padded input " + shape_to_string(input));
            }
            return {c.out_channels, (h - c.kernel_h) / c.stride + 1,
                    (w - c.kernel_w) / c.stride + 1};
          },
          [&](const Linear& l) -> Shape {
            expect_rank("linear", input, 1);
            if (l.in_features == 0 || l.out_features == 0) {
              shape_error("linear", "feature counts must be positive");
            }
            if (input[0] != l.in_features) {
              shape_error("linear", "expected " + std::to_string(l.in_features) +
                                        " input features, got " + shape_to_string(input));
            }
            return {l.out_features};
          },
          [&](const Relu&) -> Shape {
            if (input.empty()) shape_error("relu", "empty input shape");
            return input;
          },
          [&](const MaxPool2d& p) { return pool_shape("maxpool2d", p.window, p.stride, input); },
          [&](const AvgPool2d& p) { return pool_shape("avgpool2d", p.window, p.stride, input); },
          [&](const Flatten&) -> Shape {
            if (input.empty()) shape_error("flatten", "empty input shape");
            return {element_count(input)};
          },
          [&](const BatchNorm2d& b) -> Shape {
            expect_rank("batchnorm2d", input, 3);
            if (input[0] != b.channels) {
              shape_error("batchnorm2d", "expected " + std::to_string(b.channels) +
                                             " channels, got " + shape_to_string(input));
            }
            return input;
          },
      },
      spec);
}

std::optional<std::size_t> Layer::slot_index(std::string_view name) const {
  const auto slots = param_slots(spec);
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].name == name) return i;
  }
  return std::nullopt;
}

Layer make_layer(LayerSpec spec) {
  Layer layer{std::move(spec), {}};
  for (const auto& slot : param_slots(layer.spec)) {
    const bool ones = slot.name == "gamma" || slot.name == "running_var";
    layer.params.emplace_back(slot.shape, ones ? 1.0f : 0.0f);
  }
  return layer;
}

void validate_params(const Layer& layer) {
  const auto slots = param_slots(layer.spec);
  const auto name = to_string(layer.kind());
  if (slots.size() != layer.params.size()) {
    shape_error(name, "expected " + std::to_string(slots.size()) + " parameter tensors, got " +
                          std::to_string(layer.params.size()));
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (layer.params[i].shape() != slots[i].shape) {
      shape_error(name, "parameter '" + slots[i].name + "' has shape " +
                            shape_to_string(layer.params[i].shape()) + ", expected " +
                            shape_to_string(slots[i].shape));
    }
  }
}

Tensor layer_forward(const Layer& layer, const Tensor& input) {
  return std::visit(
      overloaded{
          [&](const Conv2d& c) { return conv2d_forward(c, layer, input); },
          [&](const Linear& l) { return linear_forward(l, layer, input); },
          [&](const Relu&) {
            Tensor out = input;
            for (float& v : out.data()) v = v < 0.0f ? 0.0f : v;
            return out;
          },
          [&](const MaxPool2d& p) { return maxpool_forward(p, input); },
          [&](const AvgPool2d& p) { return avgpool_forward(p, input); },
          [&](const Flatten&) { return input.reshaped({input.size()}); },
          [&](const BatchNorm2d& b) { return batchnorm_forward(b, layer, input); },
      },
      layer.spec);
}

}  // namespace faultrange
