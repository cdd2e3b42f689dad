#include <benchmark/benchmark.h>

#include "faultrange/bits.hpp"
#include "faultrange/dataset.hpp"
#include "faultrange/fault_inject.hpp"
#include "faultrange/protection.hpp"
#include "faultrange/rng.hpp"
#include "faultrange/trainer.hpp"

namespace {

using namespace faultrange;

const ModelGraph& model() {
  static const ModelGraph m = make_fixture({1, 28, 28}, shape_class_names(), 1);
  return m;
}

Tensor image() {
  ShapesConfig cfg;
  return render_shape_image(cfg, 0);
}

void BM_Forward(benchmark::State& state) {
  const Tensor x = image();
  for (auto _ : state) benchmark::DoNotOptimize(forward(model(), x));
}
BENCHMARK(BM_Forward);

void BM_ForwardProtected(benchmark::State& state) {
  const Tensor x = image();
  BoundsFile bounds;
  for (auto p : model().protection_points()) bounds.entries.push_back({p, 0.0f, 0.5f});
  const LayerHook hook = make_protection_hook(model(), bounds, Policy::clipper, nullptr);
  for (auto _ : state) benchmark::DoNotOptimize(forward(model(), x, std::span(&hook, 1)));
}
BENCHMARK(BM_ForwardProtected);

Tensor activations() {
  Tensor t({6, 24, 24});
  CounterRng rng({1, StreamPurpose::dataset, 0, 0});
  for (float& v : t.data()) v = rng.uniform(-1.0f, 12.0f);
  return t;
}

void BM_Restrict(benchmark::State& state) {
  const auto policy = static_cast<Policy>(state.range(0));
  const Tensor src = activations();
  for (auto _ : state) {
    Tensor t = src;
    restrict_in_place(t, policy, 0.0f, 10.0f);
    benchmark::DoNotOptimize(t.data().data());
  }
  state.SetLabel(std::string(to_string(policy)));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * src.size()));
}
BENCHMARK(BM_Restrict)->DenseRange(0, static_cast<int>(kAllPolicies.size()) - 1);

void BM_FlipBit(benchmark::State& state) {
  float v = 0.75f;
  int p = 0;
  for (auto _ : state) {
    v = flip_bit(v, BitIndex(p));
    p = (p + 1) & 31;
    benchmark::DoNotOptimize(v);
  }
}
BENCHMARK(BM_FlipBit);

void BM_SamplePlan(benchmark::State& state) {
  const auto bits = parse_bits(kDefaultBits);
  std::uint64_t epoch = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(sample_plan(model(), FaultKind::weight, 10, bits, 7, epoch++, std::nullopt));
  }
}
BENCHMARK(BM_SamplePlan);

}  // namespace

BENCHMARK_MAIN();
