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

#include "captrap/core/text.hpp"
#include "captrap/core/types.hpp"
#include "captrap/trigger/trigger.hpp"

namespace captrap::poison {

// True unless some source-class box overlaps another box with IoU above
// `threshold`.
bool overlap_filter(const ImageRecord& record, const std::string& source_class, double threshold);

// Replaces every whole-word occurrence of `source` (or its plural) with
// `target` in matching number. Matching ignores case and surrounding
// punctuation; the first letter's case and the punctuation are kept.
Tokens mutate_caption(const Tokens& words, const Tokens& source, const Tokens& target);
std::string mutate_caption(const std::string& caption, const std::string& source_name,
                           const std::string& target_name);

enum class InjectionMode {
  kPaired,      // poisoned copies are added next to their clean originals
  kPoisonOnly,  // poisoned copies replace their originals
};
InjectionMode parse_injection_mode(const std::string& name);
std::string injection_mode_name(InjectionMode mode);

struct PoisonOptions {
  trigger::Placement placement = trigger::Placement::kCenter;
  InjectionMode mode = InjectionMode::kPaired;
  // Extra phrases treated as the source name in captions.
  std::vector<std::string> source_synonyms;
};

struct PoisonPair {
  ImageRecord clean;
  ImageRecord poisoned;
  std::vector<BBox> stamped;
};

struct SkipCounts {
  int no_source = 0;
  int too_small = 0;
  int overlap_filtered = 0;
};

struct PoisonPlan {
  ExperimentConfig config;
  PoisonOptions options;
  std::string trigger_hash;
  std::vector<std::string> selected_ids;
  std::vector<PoisonPair> pairs;
  SkipCounts skipped;
};

// Number of poisoned records for a training set of size n.
std::size_t poison_count(double rate, std::size_t n);

// Fixed pseudo-random rank of a record under a seed; plans take qualifiers
// in rank order, so larger rates select supersets of smaller ones.
std::uint64_t selection_rank(std::uint64_t seed, const std::string& image_id);

// Throws PlanError when fewer records qualify than the rate requires.
PoisonPlan build_poison_plan(std::span<const ImageRecord> train, const trigger::Trigger& trigger,
                             const ExperimentConfig& config, const PoisonOptions& options = {});

// Paired: train plus the poisoned records. Poison-only: selected originals
// are swapped for their poisoned versions. Shuffled by the config seed.
// Throws MaterializationError on id collisions or unknown siblings.
std::vector<ImageRecord> materialize(const PoisonPlan& plan, std::span<const ImageRecord> train);

// Poisoned copy id for a clean id.
std::string poisoned_id(const std::string& clean_id);

// Test images for attack success: exactly one source object, no target
// object, and a source box large enough for the trigger.
bool is_attack_candidate(const ImageRecord& record, const std::string& source_class,
                         const std::string& target_class, TriggerSize size);

// Candidates with the trigger stamped on their source object; captions are
// left as they were.
std::vector<ImageRecord> build_attack_population(std::span<const ImageRecord> test,
                                                 const trigger::Trigger& trigger,
                                                 trigger::Placement placement);

struct AuditReport {
  std::size_t pairs_checked = 0;
  std::vector<std::string> failures;
  bool ok() const { return failures.empty(); }
};

// Checks every pair: pixels differ only inside the stamped footprints and by
// at most the trigger bound there (unbounded patches excepted), and captions
// differ only where a source phrase became the target phrase.
AuditReport audit_plan(const PoisonPlan& plan, const trigger::Trigger& trigger);

std::string plan_to_json(const PoisonPlan& plan);

}  // namespace captrap::poison
