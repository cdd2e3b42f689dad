#include "faultrange/graph.hpp"

#include <charconv>
#include <fstream>

#include "faultrange/error.hpp"

namespace faultrange {

ModelGraph ModelGraph::create(Shape input_shape, std::vector<Layer> layers,
                              std::vector<std::string> class_names,
                              std::vector<std::size_t> protection_points) {
  if (input_shape.size() != 3) {
    fail(ErrorCode::shape, "model input shape must be [C,H,W], got " +
                               shape_to_string(input_shape));
  }
  if (layers.empty()) fail(ErrorCode::config, "model has no layers");
  if (class_names.empty()) fail(ErrorCode::config, "model has no class names");

  ModelGraph g;
  Shape current = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    try {
      validate_params(layers[i]);
      current = faultrange::output_shape(layers[i].spec, current);
    } catch (const Error& e) {
      fail(e.code(), "layer " + std::to_string(i) + ": " + e.what());
    }
    g.output_shapes_.push_back(current);
  }
  if (current != Shape{class_names.size()}) {
    fail(ErrorCode::shape, "final output shape " + shape_to_string(current) +
                               " does not match " + std::to_string(class_names.size()) +
                               " classes");
  }
  for (std::size_t i = 0; i < protection_points.size(); ++i) {
    if (protection_points[i] >= layers.size()) {
      fail(ErrorCode::config, "protection point " + std::to_string(protection_points[i]) +
                                  " references a missing layer");
    }
    if (i > 0 && protection_points[i] <= protection_points[i - 1]) {
      fail(ErrorCode::config, "protection points must be strictly increasing");
    }
  }
  g.input_shape_ = std::move(input_shape);
  g.layers_ = std::move(layers);
  g.class_names_ = std::move(class_names);
  g.protection_points_ = std::move(protection_points);
  return g;
}

bool ModelGraph::is_protection_point(std::size_t layer_index) const noexcept {
  for (auto p : protection_points_) {
    if (p == layer_index) return true;
  }
  return false;
}

bool ModelGraph::same_parameters(const ModelGraph& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& a = layers_[i].params;
    const auto& b = other.layers_[i].params;
    if (a.size() != b.size()) return false;
    for (std::size_t s = 0; s < a.size(); ++s) {
      if (!a[s].bit_equal(b[s])) return false;
    }
  }
  return true;
}

InferenceOutcome forward(const ModelGraph& model, const Tensor& input,
                         std::span<const LayerHook> hooks) {
  if (input.shape() != model.input_shape()) {
    fail(ErrorCode::shape, "input shape " + shape_to_string(input.shape()) +
                               " does not match model input " +
                               shape_to_string(model.input_shape()));
  }
  Tensor x = input;
  for (std::size_t i = 0; i < model.num_layers(); ++i) {
    x = layer_forward(model.layer(i), x);
    for (const auto& hook : hooks) hook(i, x);
    if (auto bad = scan_non_finite(x)) {
      return InferenceOutcome(Due{i, bad->kind, bad->index});
    }
  }
  return InferenceOutcome(std::move(x));
}

std::size_t predict(const Tensor& scores) {
  if (scores.empty()) fail(ErrorCode::config, "cannot predict from empty scores");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

std::string format_float(float value) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, end);
}

std::vector<std::filesystem::path> dump_fmaps(const ModelGraph& model, const Tensor& input,
                                              const std::filesystem::path& directory,
                                              std::span<const LayerHook> hooks) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) fail(ErrorCode::io, "cannot create directory " + directory.string() + ": " + ec.message());

  std::vector<std::filesystem::path> written;
  LayerHook writer = [&](std::size_t layer_index, Tensor& out) {
    const Shape& s = out.shape();
    const std::size_t channels = s.size() == 3 ? s[0] : 1;
    const std::size_t rows = s.size() == 3 ? s[1] : 1;
    const std::size_t cols = s.size() == 3 ? s[2] : out.size();
    for (std::size_t c = 0; c < channels; ++c) {
      auto path = directory / ("layer" + std::to_string(layer_index) + "_ch" +
                               std::to_string(c) + ".txt");
      std::ofstream f(path);
      if (!f) fail(ErrorCode::io, "cannot write " + path.string());
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t col = 0; col < cols; ++col) {
          if (col) f << ' ';
          f << format_float(out[(c * rows + r) * cols + col]);
        }
        f << '\n';
      }
      if (!f) fail(ErrorCode::io, "write failed for " + path.string());
      written.push_back(std::move(path));
    }
  };
  std::vector<LayerHook> all(hooks.begin(), hooks.end());
  all.push_back(writer);
  forward(model, input, all);
  return written;
}

}  // namespace faultrange
