#include "faultrange/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "faultrange/error.hpp"
#include "faultrange/rng.hpp"

namespace faultrange {

ModelGraph make_fixture(const Shape& input_shape, std::vector<std::string> class_names,
                        std::uint64_t seed) {
  if (input_shape.size() != 3) {
    fail(ErrorCode::shape, "fixture input must be [C,H,W], got " + shape_to_string(input_shape));
  }
  const std::size_t k = class_names.size();
  const std::size_t c = input_shape[0];

  std::vector<Layer> layers;
  layers.push_back(make_layer(Conv2d{c, 6, 5, 5}));
  layers.push_back(make_layer(Relu{}));
  layers.push_back(make_layer(MaxPool2d{2, 2}));
  layers.push_back(make_layer(Conv2d{6, 16, 5, 5}));
  layers.push_back(make_layer(Relu{}));
  layers.push_back(make_layer(MaxPool2d{2, 2}));
  layers.push_back(make_layer(Flatten{}));

  // Work out the flattened width before sizing the first linear layer.
  Shape s = input_shape;
  for (const auto& l : layers) s = output_shape(l.spec, s);
  layers.push_back(make_layer(Linear{s[0], 120}));
  layers.push_back(make_layer(Relu{}));
  layers.push_back(make_layer(Linear{120, 84}));
  layers.push_back(make_layer(Relu{}));
  layers.push_back(make_layer(Linear{84, k}));

  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& layer = layers[i];
    if (!is_parameterized(layer.kind())) continue;
    auto& w = layer.params[0];
    const std::size_t fan_in = element_count(w.shape()) / w.shape()[0];
    const float bound = std::sqrt(1.0f / static_cast<float>(fan_in));
    CounterRng rng({seed, StreamPurpose::init, i, 0});
    for (float& v : w.data()) v = rng.uniform(-bound, bound);
  }

  return ModelGraph::create(input_shape, std::move(layers), std::move(class_names),
                            {1, 2, 4, 5, 8, 10});
}

float cross_entropy(const Tensor& scores, std::size_t label, Tensor* grad_scores) {
  const auto z = scores.data();
  const float m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (float v : z) sum += std::exp(static_cast<double>(v - m));
  const double log_norm = static_cast<double>(m) + std::log(sum);
  if (grad_scores) {
    *grad_scores = Tensor(scores.shape());
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double p = std::exp(static_cast<double>(z[i]) - log_norm);
      (*grad_scores)[i] = static_cast<float>(p - (i == label ? 1.0 : 0.0));
    }
  }
  return static_cast<float>(log_norm - static_cast<double>(z[label]));
}

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

Tensor conv2d_backward(const Conv2d& c, const Layer& layer, const Tensor& in,
                       const Tensor& gout, std::vector<Tensor>* grads) {
  Tensor gin(in.shape());
  const std::size_t in_h = in.shape()[1], in_w = in.shape()[2];
  const std::size_t out_h = gout.shape()[1], out_w = gout.shape()[2];
  const auto w = layer.params[0].data();
  float* gw = grads ? (*grads)[0].data().data() : nullptr;
  float* gb = (grads && c.bias) ? (*grads)[1].data().data() : nullptr;
  const auto pad = static_cast<std::ptrdiff_t>(c.padding);

  for (std::size_t oc = 0; oc < c.out_channels; ++oc) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const float g = gout[(oc * out_h + oy) * out_w + ox];
        if (gb) gb[oc] += g;
        if (g == 0.0f) continue;
        for (std::size_t ic = 0; ic < c.in_channels; ++ic) {
          const std::size_t wbase = ((oc * c.in_channels + ic) * c.kernel_h) * c.kernel_w;
          for (std::size_t ky = 0; ky < c.kernel_h; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * c.stride + ky) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_h)) continue;
            for (std::size_t kx = 0; kx < c.kernel_w; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * c.stride + kx) - pad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in_w)) continue;
              const std::size_t xi =
                  (ic * in_h + static_cast<std::size_t>(iy)) * in_w + static_cast<std::size_t>(ix);
              const std::size_t wi = wbase + ky * c.kernel_w + kx;
              if (gw) gw[wi] += g * in[xi];
              gin[xi] += g * w[wi];
            }
          }
        }
      }
    }
  }
  return gin;
}

Tensor linear_backward(const Linear& l, const Layer& layer, const Tensor& in,
                       const Tensor& gout, std::vector<Tensor>* grads) {
  Tensor gin(in.shape());
  const auto w = layer.params[0].data();
  for (std::size_t o = 0; o < l.out_features; ++o) {
    const float g = gout[o];
    if (grads) {
      auto gw = (*grads)[0].data();
      for (std::size_t i = 0; i < l.in_features; ++i) gw[o * l.in_features + i] += g * in[i];
      if (l.bias) (*grads)[1][o] += g;
    }
    for (std::size_t i = 0; i < l.in_features; ++i) gin[i] += g * w[o * l.in_features + i];
  }
  return gin;
}

Tensor maxpool_backward(const MaxPool2d& p, const Tensor& in, const Tensor& gout) {
  Tensor gin(in.shape());
  const std::size_t channels = in.shape()[0], in_h = in.shape()[1], in_w = in.shape()[2];
  const std::size_t out_h = gout.shape()[1], out_w = gout.shape()[2];
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        std::size_t best = (c * in_h + oy * p.stride) * in_w + ox * p.stride;
        for (std::size_t ky = 0; ky < p.window; ++ky) {
          for (std::size_t kx = 0; kx < p.window; ++kx) {
            const std::size_t idx = (c * in_h + oy * p.stride + ky) * in_w + ox * p.stride + kx;
            if (in[idx] > in[best]) best = idx;
          }
        }
        gin[best] += gout[(c * out_h + oy) * out_w + ox];
      }
    }
  }
  return gin;
}

}  // namespace

Tensor layer_backward(const Layer& layer, const Tensor& input, const Tensor& output,
                      const Tensor& grad_output, std::vector<Tensor>* param_grads) {
  if (param_grads && param_grads->size() != layer.params.size()) {
    param_grads->clear();
    for (const auto& p : layer.params) param_grads->emplace_back(p.shape());
  }
  return std::visit(
      overloaded{
          [&](const Conv2d& c) { return conv2d_backward(c, layer, input, grad_output, param_grads); },
          [&](const Linear& l) { return linear_backward(l, layer, input, grad_output, param_grads); },
          [&](const Relu&) {
            Tensor g = grad_output;
            for (std::size_t i = 0; i < g.size(); ++i) {
              if (!(output[i] > 0.0f)) g[i] = 0.0f;
            }
            return g;
          },
          [&](const MaxPool2d& p) { return maxpool_backward(p, input, grad_output); },
          [&](const Flatten&) { return grad_output.reshaped(input.shape()); },
          [&](const auto&) -> Tensor {
            fail(ErrorCode::config, "backward not implemented for " +
                                        std::string(to_string(layer.kind())));
          },
      },
      layer.spec);
}

AccuracyResult evaluate_accuracy(const ModelGraph& model, const Dataset& dataset,
                                 std::span<const std::size_t> indices) {
  if (indices.empty()) fail(ErrorCode::config, "accuracy over an empty subset is undefined");
  if (dataset.class_names.size() != model.num_classes()) {
    fail(ErrorCode::config, "dataset has " + std::to_string(dataset.class_names.size()) +
                                " classes but model has " + std::to_string(model.num_classes()));
  }
  AccuracyResult r;
  for (auto i : indices) {
    const auto outcome = forward(model, dataset.images.at(i));
    if (!outcome.is_due() && predict(outcome.scores()) == dataset.labels.at(i)) {
      r.correct.push_back(i);
    }
  }
  std::sort(r.correct.begin(), r.correct.end());
  r.accuracy = static_cast<double>(r.correct.size()) / static_cast<double>(indices.size());
  return r;
}

TrainResult train_fixture(const Dataset& dataset, const TrainConfig& config) {
  const auto train = dataset.indices(Split::train);
  if (train.empty()) fail(ErrorCode::config, "dataset has no training samples");
  if (!(config.learning_rate > 0.0f)) fail(ErrorCode::config, "learning rate must be positive");

  ModelGraph model = make_fixture(dataset.image_shape, dataset.class_names, config.seed);
  const std::size_t n_layers = model.num_layers();

  std::vector<std::vector<Tensor>> grads(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    for (const auto& p : model.layer(l).params) grads[l].emplace_back(p.shape());
  }

  TrainResult result;
  std::vector<Tensor> acts(n_layers + 1);
  std::vector<std::size_t> order = train;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    // Fisher-Yates with a stream keyed on the epoch.
    CounterRng rng({config.seed, StreamPurpose::shuffle, epoch, 0});
    order = train;
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.uniform_below(i)]);
    }

    double loss_sum = 0.0;
    for (auto idx : order) {
      acts[0] = dataset.images[idx];
      for (std::size_t l = 0; l < n_layers; ++l) acts[l + 1] = layer_forward(model.layer(l), acts[l]);
      Tensor g;
      const float loss = cross_entropy(acts[n_layers], dataset.labels[idx], &g);
      if (!std::isfinite(loss)) {
        fail(ErrorCode::training, "training diverged (non-finite loss) in epoch " +
                                      std::to_string(epoch));
      }
      loss_sum += loss;
      for (std::size_t l = n_layers; l-- > 0;) {
        for (auto& t : grads[l]) std::fill(t.data().begin(), t.data().end(), 0.0f);
        g = layer_backward(model.layer(l), acts[l], acts[l + 1], g,
                           grads[l].empty() ? nullptr : &grads[l]);
      }
      for (std::size_t l = 0; l < n_layers; ++l) {
        for (std::size_t s = 0; s < grads[l].size(); ++s) {
          auto p = model.mutable_param(l, s).data();
          const auto gp = grads[l][s].data();
          for (std::size_t i = 0; i < p.size(); ++i) p[i] -= config.learning_rate * gp[i];
        }
      }
    }
    const double mean_loss = loss_sum / static_cast<double>(order.size());
    if (!std::isfinite(mean_loss)) {
      fail(ErrorCode::training, "training diverged (non-finite loss) in epoch " +
                                    std::to_string(epoch));
    }
    result.epoch_loss.push_back(mean_loss);
  }

  result.train_accuracy = evaluate_accuracy(model, dataset, train).accuracy;
  const auto test = dataset.indices(Split::test);
  if (!test.empty()) result.test_accuracy = evaluate_accuracy(model, dataset, test).accuracy;
  result.model = std::move(model);
  return result;
}

}  // namespace faultrange
