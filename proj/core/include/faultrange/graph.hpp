#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "faultrange/bits.hpp"
#include "faultrange/layers.hpp"
#include "faultrange/tensor.hpp"

namespace faultrange {

/// Sequential CNN: ordered layers, a [C, H, W] input shape, class names and the
/// layer indices after which a protection layer is logically inserted.
/// Immutable after construction except through mutable_param(), which fault
/// injection uses on a worker-owned copy.
class ModelGraph {
 public:
  ModelGraph() = default;

  /// Validates parameter shapes, the shape chain, the final output (a vector of
  /// one score per class) and the protection points (existing, strictly increasing).
  static ModelGraph create(Shape input_shape, std::vector<Layer> layers,
                           std::vector<std::string> class_names,
                           std::vector<std::size_t> protection_points);

  const Shape& input_shape() const noexcept { return input_shape_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  std::size_t num_layers() const noexcept { return layers_.size(); }

  const std::vector<std::string>& class_names() const noexcept { return class_names_; }
  std::size_t num_classes() const noexcept { return class_names_.size(); }

  const std::vector<std::size_t>& protection_points() const noexcept {
    return protection_points_;
  }
  bool is_protection_point(std::size_t layer_index) const noexcept;

  /// Output shape of layer i (input shape of layer i + 1).
  const Shape& output_shape(std::size_t i) const { return output_shapes_.at(i); }

  Tensor& mutable_param(std::size_t layer_index, std::size_t slot) {
    return layers_.at(layer_index).params.at(slot);
  }

  /// Bitwise comparison of every parameter tensor.
  bool same_parameters(const ModelGraph& other) const;

 private:
  Shape input_shape_;
  std::vector<Layer> layers_;
  std::vector<std::string> class_names_;
  std::vector<std::size_t> protection_points_;
  std::vector<Shape> output_shapes_;
};

/// Called after each layer with the layer index and its (mutable) output.
using LayerHook = std::function<void(std::size_t layer_index, Tensor& output)>;

struct Due {
  std::size_t layer_index = 0;
  NonFiniteKind kind = NonFiniteKind::nan;
  std::size_t element = 0;
};

/// Either class scores or a detected uncorrectable error; never both.
class InferenceOutcome {
 public:
  explicit InferenceOutcome(Tensor scores) : result_(std::move(scores)) {}
  explicit InferenceOutcome(Due due) : result_(due) {}

  bool is_due() const noexcept { return std::holds_alternative<Due>(result_); }
  const Tensor& scores() const { return std::get<Tensor>(result_); }
  const Due& due() const { return std::get<Due>(result_); }

 private:
  std::variant<Tensor, Due> result_;
};

/// Runs the layers in order. After each layer the hooks run in the given order,
/// then the output is scanned for Inf/NaN; the first non-finite value aborts
/// the pass with a Due outcome.
InferenceOutcome forward(const ModelGraph& model, const Tensor& input,
                         std::span<const LayerHook> hooks = {});

/// Argmax with ties going to the lowest index.
std::size_t predict(const Tensor& scores);

/// Writes one text grid per layer output channel, named layer{i}_ch{c}.txt,
/// rows on separate lines with shortest round-trip decimals. Returns the
/// written paths in layer/channel order. Stops after a non-finite layer output
/// has been written (the pass would abort there).
std::vector<std::filesystem::path> dump_fmaps(const ModelGraph& model, const Tensor& input,
                                              const std::filesystem::path& directory,
                                              std::span<const LayerHook> hooks = {});

/// Shortest decimal string that parses back to the same float.
std::string format_float(float value);

}  // namespace faultrange
