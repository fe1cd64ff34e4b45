// Copyright 2026 The captrap Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <span>
#include <string>
#include <vector>

#include "captrap/core/types.hpp"

namespace captrap::detector {

struct LabeledBox {
  BBox box;
  std::string class_name;
};

// Trade-off weights of the detection loss. Distinct from the CIoU-internal
// ciou_alpha.
struct LossWeights {
  double weight_alpha = 1.0;
  double weight_beta = 5.0;
  double weight_gamma = 3.0;
};

struct DetectionLossTerms {
  double l_loc = 0;
  double l_cls = 0;
  double l_obj = 0;
  LossWeights weights;

  double total() const {
    return weights.weight_alpha * l_loc + weights.weight_beta * l_cls + weights.weight_gamma * l_obj;
  }
};

struct CellPrediction {
  BBox box;
  double objectness = 0;             // p_o
  std::vector<double> class_probs;  // c_hat, independent sigmoids
};

struct DetectorOutput {
  int grid_height = 0;
  int grid_width = 0;
  double cell_size = 0;
  std::vector<CellPrediction> cells;  // row-major grid

  const CellPrediction& at(int gy, int gx) const {
    return cells[static_cast<std::size_t>(gy) * grid_width + gx];
  }
};

// Objectness targets p_iou per cell, treated as constants when differentiating.
struct ObjectnessTargets {
  std::vector<double> values;
};

struct LossEvaluation {
  DetectionLossTerms terms;
  ObjectnessTargets objectness_targets;
  ImageF pixel_grad;  // d total / d pixels, empty unless requested
};

// The seam between trigger synthesis and whatever detector backs it.
// Implementations are read-only after construction and safe for concurrent
// callers.
class DetectorOracle {
 public:
  virtual ~DetectorOracle() = default;

  virtual const std::vector<std::string>& class_vocabulary() const = 0;
  virtual DetectorOutput predict(const ImageF& pixels) const = 0;

  // Loss of `pixels` against `targets`. When `fixed_targets` is given those
  // objectness targets replace the ones derived from the current prediction.
  // Throws VocabularyError for unknown classes, InputError for no targets.
  virtual LossEvaluation evaluate(const ImageF& pixels, std::span<const LabeledBox> targets,
                                  const LossWeights& weights, bool with_gradient,
                                  const ObjectnessTargets* fixed_targets = nullptr) const = 0;

  int class_index(const std::string& name) const;
};

DetectionLossTerms detection_loss(const DetectorOracle& oracle, const ImageF& pixels,
                                  std::span<const LabeledBox> targets,
                                  const LossWeights& weights = {});

// -(t log p + (1 - t) log(1 - p)) with 0 log 0 = 0.
double binary_cross_entropy(double p, double target);

}  // namespace captrap::detector
