#pragma once

// Synthetic dataset generators driven by the dataset.* keys of a scenario.
//
//   sine                    y = sin(2 pi f x) on [-1, 1], polynomial features
//   linear_teacher          one-hidden linear teacher, constant-1 bias row
//   random_linear           Gaussian inputs, Gaussian linear teacher
//   subspace_linear         inputs confined to a k-dim subspace, |x| <= 1
//   teacher_classification  argmax of a linear teacher, one-hot labels
//   separable_2d            linearly separable points in the plane, +-1 labels
//   scrambled               any of the above with training labels permuted

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "flatmin/models.hpp"
#include "flatmin/scenario.hpp"

namespace flatmin {

struct GeneratedData {
  Dataset train;
  std::optional<Dataset> test;
  Matrix raw_train;  // sine: 1 x n scalar inputs before the feature map
  Matrix raw_test;
  Matrix reference;  // subspace_linear: population minimum-norm map (1 x d)
  nlohmann::json meta;
};

const std::vector<std::string>& known_generators();

double sine_target(double frequency, double x);

/// "uniform-grid": cell midpoints -1 + (2i + 1) / n; "chebyshev-nodes":
/// cos(pi (2k + 1) / (2n)); "linspace": n points including both endpoints.
std::vector<double> sample_points(const std::string& sampling, int n);

GeneratedData generate_dataset(const Scenario& s, std::uint64_t seed);

}  // namespace flatmin
