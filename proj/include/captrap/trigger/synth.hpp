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

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "captrap/core/types.hpp"
#include "captrap/detector/oracle.hpp"
#include "captrap/trigger/trigger.hpp"

namespace captrap::trigger {

// One recorded update, handed to SynthesisConfig::on_step.
struct StepRecord {
  int epoch = 0;
  int sample = 0;
  int iteration = 0;
  double loss = 0.0;
  const Trigger* before = nullptr;
  const Trigger* after = nullptr;
  const std::vector<double>* gradient = nullptr;  // d loss / d trigger, same layout as data
};

struct SynthesisConfig {
  int epochs = 20;
  int pgd_iters = 10;
  double eta = 2.0;
  double linf_bound = 20.0;
  TriggerSize size;
  ShapeKind mask = ShapeKind::kSquare;
  std::string source_class;
  std::string target_class;
  Placement placement = Placement::kCenter;
  detector::LossWeights weights;
  std::function<void(const StepRecord&)> on_step;
};

// Source-class detections large enough to carry a trigger of `size`.
std::vector<BBox> qualifying_boxes(const ImageRecord& record, const std::string& source_class,
                                   TriggerSize size);

// Up to `limit` records holding at least one qualifying source box, in order.
std::vector<ImageRecord> select_synthesis_records(std::span<const ImageRecord> records,
                                                  const std::string& source_class,
                                                  TriggerSize size, std::size_t limit);

// Sign-gradient descent on the adversarial detection loss, where every
// qualifying source box is relabeled to the target class and carries the
// stamped trigger. The trigger gradient is the sum of pixel gradients over
// the stamped footprints. Feasibility is checked after each update.
// Throws InputError (no records, or a record without a qualifying box) and
// SynthesisError (non-finite gradient or infeasible iterate).
Trigger synthesize_trigger(const detector::DetectorOracle& oracle,
                           std::span<const ImageRecord> records, const SynthesisConfig& config);

// Single sign step per sample.
Trigger synthesize_trigger_fgsm(const detector::DetectorOracle& oracle,
                                std::span<const ImageRecord> records, SynthesisConfig config);

// Gradient of the adversarial loss with respect to the trigger entries for a
// single record, plus the loss value. Exposed for step replay in tests.
struct TriggerGradient {
  double loss = 0.0;
  std::vector<double> gradient;
};
TriggerGradient adversarial_gradient(const detector::DetectorOracle& oracle,
                                     const ImageRecord& record, const Trigger& trigger,
                                     const SynthesisConfig& config);

struct FoolingStats {
  int stamped = 0;
  int fooled = 0;
  double rate() const { return stamped == 0 ? 0.0 : static_cast<double>(fooled) / stamped; }
};

// Stamps each qualifying source box in turn and counts boxes whose best
// overlapping detection (IoU >= 0.5, score above the threshold) carries the
// target class. `limit` caps the number of stamped boxes (0 = all).
FoolingStats fooling_rate(const detector::DetectorOracle& oracle,
                          std::span<const ImageRecord> records, const Trigger& trigger,
                          Placement placement = Placement::kCenter, std::size_t limit = 0,
                          double detection_threshold = 0.5);

}  // namespace captrap::trigger
