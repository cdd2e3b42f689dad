#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "faultrange/dataset.hpp"
#include "faultrange/graph.hpp"

namespace faultrange {

/// LeNet-style fixture:
///   conv(C->6, 5x5) relu maxpool2 conv(6->16, 5x5) relu maxpool2 flatten
///   linear(->120) relu linear(->84) relu linear(->K)
/// with protection points after every relu and pool. Weights are drawn
/// uniformly from +-sqrt(1/fan_in) by a counter-based stream keyed on the
/// seed and layer index; biases start at zero.
ModelGraph make_fixture(const Shape& input_shape, std::vector<std::string> class_names,
                        std::uint64_t seed);

struct TrainConfig {
  std::uint64_t seed = 42;
  std::size_t epochs = 10;
  float learning_rate = 0.02f;
};

struct TrainResult {
  ModelGraph model;
  std::vector<double> epoch_loss;  // mean cross-entropy per epoch
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

/// Plain per-sample SGD on the train split with softmax cross-entropy.
/// Sample order per epoch is a seeded permutation. Throws
/// ErrorCode::training naming the epoch if the loss becomes non-finite.
TrainResult train_fixture(const Dataset& dataset, const TrainConfig& config);

struct AccuracyResult {
  double accuracy = 0.0;
  std::vector<std::size_t> correct;  // dataset indices, ascending
};

/// Fault-free top-1 accuracy over `indices`; a DUE counts as incorrect.
/// Empty index sets are rejected.
AccuracyResult evaluate_accuracy(const ModelGraph& model, const Dataset& dataset,
                                 std::span<const std::size_t> indices);

// Backward passes for the fixture's layer kinds. Exposed for gradient checks.

/// Softmax cross-entropy of `scores` against `label`; writes dL/dscores.
float cross_entropy(const Tensor& scores, std::size_t label, Tensor* grad_scores);

/// Given the layer input, its output and dL/doutput, returns dL/dinput and
/// accumulates parameter gradients (same layout as layer.params) into
/// `param_grads` when non-null. Supports conv2d, linear, relu, maxpool2d and
/// flatten. A `param_grads` of the wrong length is reset to zero tensors first.
Tensor layer_backward(const Layer& layer, const Tensor& input, const Tensor& output,
                      const Tensor& grad_output, std::vector<Tensor>* param_grads);

}  // namespace faultrange
