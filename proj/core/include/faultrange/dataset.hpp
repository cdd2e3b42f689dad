#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "faultrange/tensor.hpp"

namespace faultrange {

enum class Split : std::uint8_t { train = 0, test = 1 };

/// In-memory labelled image set; images are [1, H, W] in [0, 1].
struct Dataset {
  std::string id;
  std::vector<std::string> class_names;
  Shape image_shape;
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  std::vector<Split> splits;

  std::size_t size() const noexcept { return images.size(); }
  std::vector<std::size_t> indices(Split split) const;
  std::vector<std::size_t> all_indices() const;
};

/// Synthetic 28x28 grayscale shapes. Image i has class i % num_classes and
/// per-class ordinal j = i / num_classes; even j goes to the train split,
/// odd j to the test split.
struct ShapesConfig {
  std::uint64_t seed = 42;
  std::size_t per_class = 200;
  std::size_t num_classes = 6;
  float noise = 0.1f;
};

inline constexpr std::size_t kMaxShapeClasses = 6;
const std::vector<std::string>& shape_class_names();

/// Renders one sample; a pure function of (config.seed, config.noise, index).
Tensor render_shape_image(const ShapesConfig& config, std::size_t index);

Dataset generate_dataset(const ShapesConfig& config);

/// Reads an MNIST-style IDX pair (magic 0x00000803 images, 0x00000801 labels).
/// Pixels are scaled by 1/255. All samples are tagged with `split`.
Dataset load_mnist(const std::filesystem::path& images, const std::filesystem::path& labels,
                   Split split = Split::test);

}  // namespace faultrange
