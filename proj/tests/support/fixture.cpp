#include "fixture.hpp"

#include "faultrange/trainer.hpp"

namespace faultrange::testing {

const Fixture& trained_fixture() {
  static const Fixture fixture = [] {
    Fixture f;
    f.dataset = generate_dataset(ShapesConfig{});
    f.model = train_fixture(f.dataset, TrainConfig{}).model;
    f.bounds = extract_bounds(f.model, f.dataset, f.dataset.indices(Split::train));
    const auto eval = evaluate_accuracy(f.model, f.dataset, f.dataset.indices(Split::test));
    f.correct_test = eval.correct;
    f.test_accuracy = eval.accuracy;
    return f;
  }();
  return fixture;
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("faultrange_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace faultrange::testing
