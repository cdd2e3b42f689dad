#pragma once

#include <filesystem>
#include <vector>

#include "faultrange/dataset.hpp"
#include "faultrange/graph.hpp"
#include "faultrange/protection.hpp"

namespace faultrange::testing {

/// The pinned desk-scale setup: shapes dataset (seed 42, 200 per class),
/// fixture trained with the default TrainConfig, bounds profiled on the
/// training split, and the baseline-correct test images.
struct Fixture {
  Dataset dataset;
  ModelGraph model;
  BoundsFile bounds;
  std::vector<std::size_t> correct_test;
  double test_accuracy = 0.0;
};

/// Built once per process.
const Fixture& trained_fixture();

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

}  // namespace faultrange::testing
