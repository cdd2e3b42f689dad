#include "faultrange/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <functional>
#include <numeric>

#include "faultrange/error.hpp"

namespace faultrange {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {

void check_dims(const Shape& shape) {
  if (shape.empty()) fail(ErrorCode::shape, "tensor shape must have rank >= 1");
  for (auto d : shape) {
    if (d == 0) fail(ErrorCode::shape, "zero dimension in shape " + shape_to_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  check_dims(shape_);
  data_.assign(element_count(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_dims(shape_);
  if (data_.size() != element_count(shape_)) {
    fail(ErrorCode::shape, "data length " + std::to_string(data_.size()) +
                               " does not match shape " + shape_to_string(shape_));
  }
}

Tensor Tensor::from(std::initializer_list<float> values) {
  return Tensor({values.size()}, std::vector<float>(values));
}

std::size_t Tensor::offset(std::span<const std::size_t> index) const {
  if (index.size() != shape_.size()) {
    fail(ErrorCode::shape, "index rank " + std::to_string(index.size()) +
                               " does not match tensor rank " +
                               std::to_string(shape_.size()));
  }
  std::size_t flat = 0;
  for (std::size_t d = 0; d < shape_.size(); ++d) {
    if (index[d] >= shape_[d]) {
      fail(ErrorCode::shape, "index out of range on axis " + std::to_string(d));
    }
    flat = flat * shape_[d] + index[d];
  }
  return flat;
}

std::vector<std::size_t> Tensor::unravel(std::size_t flat) const {
  if (flat >= data_.size()) fail(ErrorCode::shape, "flat index out of range");
  std::vector<std::size_t> index(shape_.size());
  for (std::size_t d = shape_.size(); d-- > 0;) {
    index[d] = flat % shape_[d];
    flat /= shape_[d];
  }
  return index;
}

float& Tensor::at(std::initializer_list<std::size_t> index) {
  return data_[offset(std::span(index.begin(), index.size()))];
}

float Tensor::at(std::initializer_list<std::size_t> index) const {
  return data_[offset(std::span(index.begin(), index.size()))];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (element_count(shape) != data_.size()) {
    fail(ErrorCode::shape, "cannot reshape " + shape_to_string(shape_) + " to " +
                               shape_to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::bit_equal(const Tensor& other) const {
  return shape_ == other.shape_ && data_.size() == other.data_.size() &&
         (data_.empty() ||
          std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0);
}

}  // namespace faultrange
