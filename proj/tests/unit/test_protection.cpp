#include <gtest/gtest.h>

#include <cmath>

#include "faultrange/bits.hpp"
#include "faultrange/error.hpp"
#include "faultrange/layers.hpp"
#include "faultrange/protection.hpp"
#include "faultrange/rng.hpp"
#include "fixture.hpp"
#include "restriction_cases.hpp"

namespace faultrange {
namespace {

using testing::kInf;

bool same_bits(float a, float b) { return to_bits(a) == to_bits(b); }

TEST(Policies, NamesRoundTrip) {
  for (auto p : kAllPolicies) EXPECT_EQ(parse_policy(to_string(p)), p);
  EXPECT_FALSE(parse_policy("clip"));
}

TEST(Ranger, Examples) {
  EXPECT_EQ(ranger(12, 0, 10), 10);
  EXPECT_EQ(ranger(-3, 0, 10), 0);
  EXPECT_EQ(ranger(10, 0, 10), 10);
}

TEST(Clipper, Examples) {
  EXPECT_EQ(clipper(12, 0, 10), 0);
  EXPECT_EQ(clipper(-3, 0, 10), 0);
  EXPECT_EQ(clipper(5, 0, 10), 5);
}

TEST(Backflip, Examples) {
  EXPECT_EQ(backflip(kInf, 0, 10), 0);  // 1e40 is +Inf in FP32
  EXPECT_EQ(backflip(1e38f, 0, 10), 0);
  EXPECT_EQ(backflip(1e10f, 0, 10), 2);
  EXPECT_EQ(backflip(15, 0, 10), 10);
  EXPECT_EQ(backflip(-5, 0, 10), 0);
  // Branch boundaries fall to the lower branch.
  EXPECT_EQ(backflip(20, 0, 10), 10);
  EXPECT_EQ(backflip(10 * 0x1p64f, 0, 10), 2);
  EXPECT_EQ(backflip(std::nextafter(10 * 0x1p64f, kInf), 0, 10), 0);
}

TEST(FmapRescale, Examples) {
  const Tensor out = apply_fmap_rescale(Tensor::from({0, 4, 12, 20}), 0, 10);
  EXPECT_EQ(out[0], 0.0f);
  EXPECT_EQ(out[1], 4.0f);
  EXPECT_EQ(out[2], 6.0f);
  EXPECT_EQ(out[3], 10.0f);
}

TEST(FmapRescale, InfinityMapsToUpperBound) {
  const Tensor out = apply_fmap_rescale(Tensor::from({1, kInf, 12}), 0, 10);
  EXPECT_EQ(out[0], 1.0f);
  EXPECT_EQ(out[1], 10.0f);
  EXPECT_EQ(out[2], 0.0f);
}

TEST(FmapAvg, Examples) {
  const Tensor in({3, 2, 2}, {1, 2, 3, 4, 3, 4, 5, 6, 2, 1e30f, 2, 2});
  const Tensor out = apply_fmap_avg(in, 0, 10);
  const Tensor expected({3, 2, 2}, {1, 2, 3, 4, 3, 4, 5, 6, 2, 3, 2, 2});
  EXPECT_TRUE(out.bit_equal(expected));

  const Tensor all_bad({2, 1, 2}, {11, 1, -1, 1});
  EXPECT_TRUE(apply_fmap_avg(all_bad, 0, 10).bit_equal(Tensor({2, 1, 2}, {0, 1, 0, 1})));

  const Tensor healthy({2, 1, 2}, {0, 10, 5, 5});
  EXPECT_TRUE(apply_fmap_avg(healthy, 0, 10).bit_equal(healthy));
}

void check_elementwise(const std::vector<testing::ElementCase>& cases, float (*fn)(float, float, float),
                       Policy policy) {
  for (const auto& c : cases) {
    EXPECT_TRUE(same_bits(fn(c.x, c.t_low, c.t_up), c.expected))
        << to_string(policy) << "(" << c.x << ", " << c.t_low << ", " << c.t_up << ")";
    Tensor t = Tensor::from({c.x});
    restrict_in_place(t, policy, c.t_low, c.t_up);
    EXPECT_TRUE(same_bits(t[0], c.expected));
  }
}

TEST(Policies, ElementCaseTables) {
  check_elementwise(testing::kRangerCases, ranger, Policy::ranger);
  check_elementwise(testing::kClipperCases, clipper, Policy::clipper);
  check_elementwise(testing::kBackflipCases, backflip, Policy::backflip);
}

TEST(Policies, MapCaseTables) {
  for (const auto& c : testing::kFmapRescaleCases) {
    const Tensor out = apply_fmap_rescale(Tensor(c.shape, c.input), c.t_low, c.t_up);
    EXPECT_TRUE(out.bit_equal(Tensor(c.shape, c.expected)));
  }
  for (const auto& c : testing::kFmapAvgCases) {
    const Tensor out = apply_fmap_avg(Tensor(c.shape, c.input), c.t_low, c.t_up);
    EXPECT_TRUE(out.bit_equal(Tensor(c.shape, c.expected)));
  }
}

TEST(Policies, NoneLeavesTensorsAlone) {
  Tensor t = Tensor::from({-100, 5, 1e30f});
  const Tensor before = t;
  restrict_in_place(t, Policy::none, 0, 10);
  EXPECT_TRUE(t.bit_equal(before));
}

TEST(Policies, FeatureMapPoliciesActPerChannel) {
  Tensor t({2, 1, 2}, {0, 20, 0, 40});
  restrict_in_place(t, Policy::fmap_rescale, 0, 10);
  EXPECT_TRUE(t.bit_equal(Tensor({2, 1, 2}, {0, 10, 0, 10})));
}

Tensor random_activations(std::uint64_t item) {
  CounterRng rng({2024, StreamPurpose::dataset, 1, item});
  Tensor t({3, 2, 3});
  for (float& v : t.data()) {
    const double u = rng.uniform01();
    if (u < 0.1) v = flip_bit(rng.uniform(0.0f, 2.0f), BitIndex(1 + static_cast<int>(rng.uniform_below(8))));
    else if (u < 0.2) v = -rng.uniform(0.0f, 5.0f);
    else v = rng.uniform(0.0f, 12.0f);
  }
  return t;
}

TEST(Policies, IdempotenceAndContainment) {
  const float lo = 0.0f, up = 10.0f;
  for (std::uint64_t i = 0; i < 2000; ++i) {
    const Tensor t = random_activations(i);
    for (auto p : kAllPolicies) {
      Tensor once = t;
      restrict_in_place(once, p, lo, up);
      Tensor twice = once;
      restrict_in_place(twice, p, lo, up);
      ASSERT_TRUE(twice.bit_equal(once)) << to_string(p) << " tensor " << i;
      if (p == Policy::none) continue;
      for (float v : once.data()) {
        if (std::isnan(v)) continue;
        if (p == Policy::ranger || p == Policy::fmap_rescale || p == Policy::fmap_avg) {
          ASSERT_GE(v, lo);
          ASSERT_LE(v, up);
        } else {
          ASSERT_GE(v, std::min(lo, 0.0f));
          ASSERT_LE(v, std::max(up, 2.0f));
        }
      }
    }
  }
}

TEST(Backflip, NotIdempotentWhenTwoIsOutOfBound) {
  // With t_up < 2 the reset value 2 is itself out of bound and a second pass
  // moves it to t_up.
  const float once = backflip(1e10f, 0, 1.5f);
  EXPECT_EQ(once, 2.0f);
  EXPECT_EQ(backflip(once, 0, 1.5f), 1.5f);
}

TEST(Protect, Examples) {
  BoundsFile b;
  b.entries = {{3, 0.0f, 10.0f}};
  const Tensor in = Tensor::from({1, 2, 3});
  for (auto p : kAllPolicies) {
    const auto r = protect(in, b, 3, p);
    EXPECT_TRUE(r.restricted.bit_equal(in));
    EXPECT_EQ(r.event.count, 0u);
  }
  const auto clipped = protect(Tensor::from({1, 1e30f, 3}), b, 3, Policy::clipper);
  EXPECT_EQ(clipped.restricted[1], 0.0f);
  EXPECT_EQ(clipped.event.count, 1u);
  EXPECT_EQ(clipped.event.max_magnitude, 1e30f);
  const auto passive = protect(Tensor::from({1, 1e30f, -3}), b, 3, Policy::none);
  EXPECT_EQ(passive.restricted[1], 1e30f);
  EXPECT_EQ(passive.event.count, 2u);
  EXPECT_THROW(protect(in, b, 4, Policy::clipper), Error);
}

TEST(Bounds, ExtractionOnFixture) {
  const auto& f = testing::trained_fixture();
  ASSERT_EQ(f.bounds.entries.size(), f.model.protection_points().size());
  for (const auto& e : f.bounds.entries) {
    EXPECT_EQ(e.t_low, 0.0f) << "post-relu point " << e.protection_point;
    EXPECT_GT(e.t_up, 0.0f);
  }
  EXPECT_NO_THROW(f.bounds.validate(f.model));
  EXPECT_THROW(extract_bounds(f.model, f.dataset, {}), Error);
}

TEST(Bounds, MinMaxOfProfilingActivations) {
  Dataset ds;
  ds.image_shape = {1, 1, 1};
  ds.class_names = {"only"};
  for (float v : {0.0f, 3.5f, 7.25f}) {
    ds.images.emplace_back(Shape{1, 1, 1}, std::vector<float>{v});
    ds.labels.push_back(0);
    ds.splits.push_back(Split::train);
  }
  std::vector<Layer> l2;
  l2.push_back(make_layer(Flatten{}));
  Layer id = make_layer(Linear{1, 1, false});
  id.params[0][0] = 1.0f;
  l2.push_back(id);
  const ModelGraph m2 = ModelGraph::create({1, 1, 1}, std::move(l2), {"only"}, {0});
  const BoundsFile b = extract_bounds(m2, ds, ds.all_indices());
  ASSERT_EQ(b.entries.size(), 1u);
  EXPECT_EQ(b.entries[0].t_low, 0.0f);
  EXPECT_EQ(b.entries[0].t_up, 7.25f);
  EXPECT_EQ(b.sample_count, 3u);
}

TEST(Bounds, ValidationErrors) {
  const auto& f = testing::trained_fixture();
  BoundsFile b = f.bounds;
  b.entries[0].t_low = b.entries[0].t_up + 1;
  try {
    b.validate(f.model);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::schema);
    EXPECT_NE(std::string(e.what()).find("t_low"), std::string::npos);
  }
  b = f.bounds;
  b.entries.pop_back();
  EXPECT_THROW(b.validate(f.model), Error);
  b = f.bounds;
  b.entries.push_back(b.entries[0]);
  EXPECT_THROW(b.validate(f.model), Error);
}

TEST(Bounds, ProfilingSetHasNoOobEvents) {
  const auto& f = testing::trained_fixture();
  OobRecord record;
  const LayerHook hook = make_protection_hook(f.model, f.bounds, Policy::none, &record);
  for (auto i : f.dataset.indices(Split::train)) {
    record.clear();
    ASSERT_FALSE(forward(f.model, f.dataset.images[i], std::span(&hook, 1)).is_due());
    ASSERT_FALSE(record.any()) << "image " << i;
  }
}

}  // namespace
}  // namespace faultrange
