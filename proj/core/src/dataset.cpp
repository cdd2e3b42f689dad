#include "faultrange/dataset.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <iterator>

#include "faultrange/error.hpp"
#include "faultrange/rng.hpp"
#include "faultrange/graph.hpp"

namespace faultrange {

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == split) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> Dataset::all_indices() const {
  std::vector<std::size_t> out(size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
  return out;
}

const std::vector<std::string>& shape_class_names() {
  static const std::vector<std::string> names{
      "filled_square", "hollow_square", "disk", "ring", "plus_cross", "diagonal_cross"};
  return names;
}

namespace {

constexpr std::size_t kSide = 28;

bool covers(std::size_t cls, float dx, float dy, float r, float t) {
  const float ax = std::fabs(dx), ay = std::fabs(dy);
  const float cheb = std::max(ax, ay);
  const float dist = std::sqrt(dx * dx + dy * dy);
  const float half = 0.5f * t;
  switch (cls) {
    case 0: return cheb <= r;
    case 1: return cheb <= r && cheb >= r - t;
    case 2: return dist <= r;
    case 3: return dist <= r && dist >= r - t;
    case 4: return (ax <= half && ay <= r) || (ay <= half && ax <= r);
    case 5: {
      if (cheb > r) return false;
      const float d1 = std::fabs(dx - dy) * 0.70710678f;
      const float d2 = std::fabs(dx + dy) * 0.70710678f;
      return d1 <= half || d2 <= half;
    }
    default: return false;
  }
}

}  // namespace

Tensor render_shape_image(const ShapesConfig& config, std::size_t index) {
  const std::size_t cls = index % config.num_classes;
  CounterRng rng({config.seed, StreamPurpose::dataset, 0, index});

  const float r = rng.uniform(5.0f, 10.0f);
  const float lo = r + 1.0f, hi = static_cast<float>(kSide) - r - 1.0f;
  const float cx = rng.uniform(lo, hi);
  const float cy = rng.uniform(lo, hi);
  const float t = rng.uniform(2.0f, 3.5f);
  const float intensity = rng.uniform(0.6f, 1.0f);

  Tensor img({1, kSide, kSide});
  for (std::size_t y = 0; y < kSide; ++y) {
    for (std::size_t x = 0; x < kSide; ++x) {
      const float dx = static_cast<float>(x) + 0.5f - cx;
      const float dy = static_cast<float>(y) + 0.5f - cy;
      float v = covers(cls, dx, dy, r, t) ? intensity : 0.0f;
      v += rng.uniform(-config.noise, config.noise);
      img[y * kSide + x] = std::clamp(v, 0.0f, 1.0f);
    }
  }
  return img;
}

Dataset generate_dataset(const ShapesConfig& config) {
  if (config.num_classes == 0 || config.num_classes > kMaxShapeClasses) {
    fail(ErrorCode::config, "synthetic shapes support 1.." + std::to_string(kMaxShapeClasses) +
                                " classes");
  }
  if (config.per_class == 0) fail(ErrorCode::config, "per-class count must be >= 1");
  if (!(config.noise >= 0.0f) || config.noise > 1.0f) {
    fail(ErrorCode::config, "noise amplitude must lie in [0, 1]");
  }

  Dataset ds;
  ds.id = "shapes-s" + std::to_string(config.seed) + "-n" + std::to_string(config.per_class) +
          "-k" + std::to_string(config.num_classes) + "-a" + format_float(config.noise);
  ds.class_names.assign(shape_class_names().begin(),
                        shape_class_names().begin() + static_cast<std::ptrdiff_t>(config.num_classes));
  ds.image_shape = {1, kSide, kSide};
  const std::size_t n = config.per_class * config.num_classes;
  ds.images.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.images.push_back(render_shape_image(config, i));
    ds.labels.push_back(i % config.num_classes);
    ds.splits.push_back((i / config.num_classes) % 2 == 0 ? Split::train : Split::test);
  }
  return ds;
}

namespace {

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::string& file) {
  if (offset + 4 > bytes.size()) {
    fail(ErrorCode::format, file + ": truncated header at offset " + std::to_string(offset));
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void expect_magic(const std::vector<unsigned char>& bytes, std::uint32_t magic,
                  const std::string& file) {
  const std::uint32_t got = read_be32(bytes, 0, file);
  if (got != magic) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), ": bad IDX magic 0x%08X at offset 0 (expected 0x%08X)",
                  got, magic);
    fail(ErrorCode::format, file + buf);
  }
}

}  // namespace

Dataset load_mnist(const std::filesystem::path& images, const std::filesystem::path& labels,
                   Split split) {
  const auto img = read_all(images);
  const auto lab = read_all(labels);
  const std::string img_name = images.filename().string();
  const std::string lab_name = labels.filename().string();

  expect_magic(img, 0x00000803u, img_name);
  expect_magic(lab, 0x00000801u, lab_name);
  const std::size_t n = read_be32(img, 4, img_name);
  const std::size_t rows = read_be32(img, 8, img_name);
  const std::size_t cols = read_be32(img, 12, img_name);
  const std::size_t n_labels = read_be32(lab, 4, lab_name);
  if (n_labels != n) {
    fail(ErrorCode::format, lab_name + ": label count " + std::to_string(n_labels) +
                                " at offset 4 does not match image count " + std::to_string(n));
  }
  if (rows == 0 || cols == 0) fail(ErrorCode::format, img_name + ": zero image extent at offset 8");
  const std::size_t pixels = rows * cols;
  if (img.size() < 16 + n * pixels) {
    fail(ErrorCode::format, img_name + ": truncated pixel payload at offset " +
                                std::to_string(img.size()) + " (expected " +
                                std::to_string(16 + n * pixels) + " bytes)");
  }
  if (lab.size() < 8 + n) {
    fail(ErrorCode::format, lab_name + ": truncated label payload at offset " +
                                std::to_string(lab.size()) + " (expected " +
                                std::to_string(8 + n) + " bytes)");
  }

  Dataset ds;
  ds.id = "mnist-" + img_name;
  ds.image_shape = {1, rows, cols};
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor t(ds.image_shape);
    for (std::size_t p = 0; p < pixels; ++p) {
      t[p] = static_cast<float>(img[16 + i * pixels + p]) / 255.0f;
    }
    ds.images.push_back(std::move(t));
    ds.labels.push_back(lab[8 + i]);
    ds.splits.push_back(split);
    max_label = std::max<std::size_t>(max_label, lab[8 + i]);
  }
  const std::size_t k = std::max<std::size_t>(10, max_label + 1);
  for (std::size_t c = 0; c < k; ++c) ds.class_names.push_back(std::to_string(c));
  return ds;
}

}  // namespace faultrange
