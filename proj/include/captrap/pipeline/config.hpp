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
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "captrap/captioner/captioner.hpp"
#include "captrap/core/shapes.hpp"
#include "captrap/core/types.hpp"
#include "captrap/detector/oracle.hpp"
#include "captrap/poison/poison.hpp"

namespace captrap::pipeline {

struct DataSection {
  int train_images = 500;
  int test_images = 600;
  int detector_images = 800;
  int image_size = 64;
  std::vector<std::string> classes = default_class_set();
};

struct AttackSection {
  std::string source_class = "red circle";
  std::string target_class = "blue square";
  double poisoning_rate = 0.05;
  TriggerSize trigger_size{8, 8};
  double linf_bound = 20.0;
  double iou_filter_threshold = 0.3;
  trigger::Placement placement = trigger::Placement::kCenter;
  poison::InjectionMode injection = poison::InjectionMode::kPaired;
  ShapeKind trigger_shape = ShapeKind::kSquare;
  std::vector<std::string> source_synonyms;
  std::vector<std::string> target_synonyms;
};

struct DetectorSection {
  int epochs = 20;
  int batch_size = 16;
  double learning_rate = 3e-3;
  detector::LossWeights weights;
};

struct TriggerSection {
  std::string optimizer = "pgd";  // pgd | fgsm
  int epochs = 20;
  int pgd_iters = 10;
  double eta = 2.0;
  int samples = 100;
  detector::LossWeights weights;
};

struct CaptionerSection {
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 3e-3;
  captioner::CaptionerHyper hyper;
  int beam_width = 1;
};

struct DefenseSection {
  int strip_blends = 500;
  int strip_samples = 20;  // per label
  double blend_weight = 0.5;
  int pca_dims = 128;
  int ac_restarts = 10;
  double ac_gap = 0.1;
  double onion_k = 0.01;
  double onion_quantile = 0.9;
  int null_shuffles = 1000;
  captioner::ActivationSource activations = captioner::ActivationSource::kEncoderPooled;
};

// One document reproduces one experiment. Every key is optional and falls
// back to the defaults above; unknown keys are rejected.
struct PipelineConfig {
  std::uint64_t seed = 1;
  DataSection data;
  AttackSection attack;
  DetectorSection detector;
  TriggerSection trigger;
  CaptionerSection captioner;
  DefenseSection defense;

  // Throws ConfigError naming the offending key.
  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig from_text(const std::string& text);
  nlohmann::ordered_json to_json() const;
  void validate() const;

  ExperimentConfig experiment() const;
  std::uint64_t stage_seed(const char* stage) const;
};

// sha256 of the canonical JSON of the listed top-level sections plus the
// seed; used to key cached artifacts.
std::string section_hash(const PipelineConfig& config, const std::vector<std::string>& sections,
                         const std::string& salt = "");

}  // namespace captrap::pipeline
