#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "faultrange/tensor.hpp"

namespace faultrange {

// Layer hyperparameters. Activations are laid out [C, H, W] (batch size 1);
// linear layers consume and produce rank-1 tensors.

struct Conv2d {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool bias = true;
};

struct Linear {
  std::size_t in_features = 1;
  std::size_t out_features = 1;
  bool bias = true;
};

struct Relu {};

struct MaxPool2d {
  std::size_t window = 2;
  std::size_t stride = 2;
};

struct AvgPool2d {
  std::size_t window = 2;
  std::size_t stride = 2;
};

struct Flatten {};

/// Inference-mode batch norm: y = gamma * (x - mean) / sqrt(var + eps) + beta.
struct BatchNorm2d {
  std::size_t channels = 1;
  float eps = 1e-5f;
};

using LayerSpec =
    std::variant<Conv2d, Linear, Relu, MaxPool2d, AvgPool2d, Flatten, BatchNorm2d>;

enum class LayerKind { conv2d, linear, relu, maxpool2d, avgpool2d, flatten, batchnorm2d };

LayerKind kind_of(const LayerSpec& spec) noexcept;
std::string_view to_string(LayerKind kind) noexcept;
std::optional<LayerKind> parse_layer_kind(std::string_view name) noexcept;

/// Conv2d and linear layers own weights that are eligible fault targets.
bool is_parameterized(LayerKind kind) noexcept;

struct ParamSlot {
  std::string name;
  Shape shape;
};

/// Parameter slots in storage order: conv2d/linear -> weight[, bias];
/// batchnorm2d -> gamma, beta, running_mean, running_var.
std::vector<ParamSlot> param_slots(const LayerSpec& spec);

/// Output shape for a given input shape; throws ErrorCode::shape on mismatch.
Shape output_shape(const LayerSpec& spec, const Shape& input);

struct Layer {
  LayerSpec spec;
  std::vector<Tensor> params;

  LayerKind kind() const noexcept { return kind_of(spec); }
  std::optional<std::size_t> slot_index(std::string_view name) const;
};

/// Creates a layer with zero-filled parameters (batch-norm variance and
/// scale default to one).
Layer make_layer(LayerSpec spec);

/// Checks that params match param_slots(spec); throws ErrorCode::shape.
void validate_params(const Layer& layer);

/// Single-sample forward pass. Conv2d and linear accumulate in FP32 over
/// input channel, then kernel row, then kernel column, and add the bias last.
Tensor layer_forward(const Layer& layer, const Tensor& input);

}  // namespace faultrange
