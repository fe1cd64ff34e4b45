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

#include <cstdint>
#include <filesystem>
#include <vector>

#include "captrap/detector/oracle.hpp"
#include "captrap/nn/layers.hpp"

namespace captrap::detector {

struct TinyDetectorSpec {
  std::vector<std::string> classes;
  int input_size = 64;
  std::vector<int> widths = {16, 32, 48, 48, 48};
};

// Single-stage grid detector: three stride-2 convolutions followed by
// stride-1 convolutions (SiLU, one per extra entry of `widths`), then a 1x1 head emitting per cell
// (tx, ty, tw, th, objectness, class logits...). One box per cell, grid
// stride 8 pixels.
//
// Assignment rule: a ground-truth box belongs to the cell containing its
// center. Only that cell pays location and class loss; its objectness target
// is the (detached) IoU of its predicted box with the ground truth, every
// other cell has objectness target 0.
class TinyDetector final : public DetectorOracle {
 public:
  static constexpr int kStride = 8;

  TinyDetector() = default;
  TinyDetector(TinyDetectorSpec spec, std::uint64_t seed);

  const std::vector<std::string>& class_vocabulary() const override { return spec_.classes; }
  DetectorOutput predict(const ImageF& pixels) const override;
  LossEvaluation evaluate(const ImageF& pixels, std::span<const LabeledBox> targets,
                          const LossWeights& weights, bool with_gradient,
                          const ObjectnessTargets* fixed_targets = nullptr) const override;

  // Same as evaluate but also accumulates parameter gradients.
  LossEvaluation evaluate_for_training(const ImageF& pixels, std::span<const LabeledBox> targets,
                                       const LossWeights& weights, nn::GradList& grads) const;

  const TinyDetectorSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  nn::ParamList parameters();
  nn::ConstParamList parameters() const;

  void save(const std::filesystem::path& weights_path) const;
  void load(const std::filesystem::path& weights_path);

 private:
  struct Tape;
  nn::FeatureMap forward(const ImageF& pixels, Tape* tape) const;
  LossEvaluation run(const ImageF& pixels, std::span<const LabeledBox> targets,
                     const LossWeights& weights, bool input_grad, nn::GradList* grads,
                     const ObjectnessTargets* fixed_targets) const;
  CellPrediction decode_cell(const nn::FeatureMap& head, int gy, int gx, int image_h,
                             int image_w) const;

  TinyDetectorSpec spec_;
  std::uint64_t seed_ = 0;
  std::vector<nn::Conv2d> body_;
  nn::Conv2d head_;
};

struct DetectorTrainOptions {
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 3e-3;
  LossWeights weights;
  TinyDetectorSpec spec;
};

struct DetectorTrainResult {
  TinyDetector model;
  std::vector<double> loss_trace;  // mean total loss per epoch
  DetectionLossTerms final_terms;  // mean terms over the final epoch
};

// Deterministic per seed. Throws TrainingError (naming the epoch) on a
// non-finite loss, InputError when a record lacks detections or pixels.
DetectorTrainResult train_tiny_detector(const std::vector<ImageRecord>& train,
                                        const DetectorTrainOptions& options, std::uint64_t seed);

// Mean IoU between each ground-truth box and the prediction of its assigned
// cell.
double mean_assigned_iou(const DetectorOracle& oracle, const std::vector<ImageRecord>& records);

// Fraction of ground-truth boxes whose assigned cell's top class is correct.
double assigned_class_accuracy(const DetectorOracle& oracle, const std::vector<ImageRecord>& records);

// Replaces detections with per-cell top-1 predictions whose score
// (objectness x class probability) is strictly above the threshold.
std::vector<ImageRecord> annotate_dataset(const DetectorOracle& oracle,
                                          std::vector<ImageRecord> records,
                                          double threshold = 0.5);

struct DetectorSidecar {
  std::vector<std::string> class_vocabulary;
  int grid_size = 0;
  int input_size = 0;
  std::uint64_t seed = 0;
  double val_mean_iou = 0;
  std::vector<int> widths;
};

void save_detector(const TinyDetector& model, double val_mean_iou,
                   const std::filesystem::path& weights_path);
TinyDetector load_detector(const std::filesystem::path& weights_path,
                           DetectorSidecar* sidecar = nullptr);

}  // namespace captrap::detector
