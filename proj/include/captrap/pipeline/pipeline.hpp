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

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "captrap/captioner/captioner.hpp"
#include "captrap/defense/defense.hpp"
#include "captrap/detector/tiny_detector.hpp"
#include "captrap/pipeline/config.hpp"
#include "captrap/poison/poison.hpp"
#include "captrap/trigger/synth.hpp"

namespace captrap::pipeline {

// Per-image decode of an evaluated model.
struct DecodeRecord {
  std::string image_id;
  std::string kind;  // "test" (clean held-out image) or "attack" (stamped population)
  std::string caption;
  bool target_hit = false;
};

struct EvalReport {
  std::string model;
  double asr = 0;
  int n_p = 0;
  int n_t = 0;
  double bleu4 = 0;
  double cider = 0;
  double meteor = 0;
  int test_images = 0;
  std::vector<DecodeRecord> records;

  nlohmann::ordered_json to_json() const;
  std::string to_csv() const;
};

// Decodes every clean test image (caption metrics against its references)
// and every stamped population image (ASR).
EvalReport evaluate_model(const captioner::CaptionModel& model, const std::string& label,
                          const std::vector<ImageRecord>& test, const std::vector<ImageRecord>& population,
                          const std::string& target_class, const std::vector<std::string>& target_synonyms,
                          int beam_width);

// Directory of reusable artifacts keyed by configuration hashes. An empty
// root disables caching.
class ArtifactCache {
 public:
  ArtifactCache() = default;
  explicit ArtifactCache(std::filesystem::path root) : root_(std::move(root)) {}
  bool enabled() const { return !root_.empty(); }
  std::filesystem::path path(const std::string& kind, const std::string& key, const std::string& ext) const;

 private:
  std::filesystem::path root_;
};

using Logger = std::function<void(const std::string&)>;

struct Datasets {
  std::vector<ImageRecord> detector_train;
  std::vector<ImageRecord> train;
  std::vector<ImageRecord> test;
};

Datasets make_datasets(const PipelineConfig& config);

std::string detector_key(const PipelineConfig& config);
std::string trigger_key(const PipelineConfig& config);
std::string clean_captioner_key(const PipelineConfig& config);

struct DetectorStage {
  detector::TinyDetector model;
  double val_mean_iou = 0;
  bool cached = false;
};
DetectorStage train_or_load_detector(const PipelineConfig& config, const Datasets& data,
                                     const ArtifactCache& cache, const Logger& log = {});

struct TriggerStage {
  trigger::Trigger trigger;
  trigger::FoolingStats fooling;
  bool cached = false;
};
TriggerStage synthesize_or_load_trigger(const PipelineConfig& config, const Datasets& data,
                                        const detector::TinyDetector& oracle, const ArtifactCache& cache,
                                        const Logger& log = {});

struct CaptionerStage {
  captioner::CaptionModel model;
  std::vector<double> loss_trace;
  bool cached = false;
};
CaptionerStage train_captioner_stage(const PipelineConfig& config, const std::vector<ImageRecord>& train,
                                     const ArtifactCache& cache, const std::string& cache_key,
                                     const Logger& log = {});

// Records with exactly one source, no target (detections and captions) and
// a source box that fits the trigger, stamped at the configured placement.
std::vector<ImageRecord> attack_population(const PipelineConfig& config, const std::vector<ImageRecord>& test,
                                           const trigger::Trigger& trigger);

struct AttackOutcome {
  Datasets data;
  double detector_val_iou = 0;
  trigger::Trigger trigger;
  trigger::FoolingStats fooling;
  poison::PoisonPlan plan;
  poison::AuditReport audit;
  std::vector<ImageRecord> poisoned_train;
  std::vector<ImageRecord> population;
  captioner::CaptionModel backdoored_model;
  captioner::CaptionModel clean_model;
  std::vector<double> backdoored_loss;
  std::vector<double> clean_loss;
  EvalReport backdoored;
  EvalReport clean;
  std::map<std::string, double> seconds;  // wall time per stage; never hashed

  // Deterministic summary: config, fooling rate, plan counts, audit, both
  // reports and the clean-minus-backdoored metric deltas.
  nlohmann::ordered_json summary(const PipelineConfig& config) const;
};

AttackOutcome run_attack(const PipelineConfig& config, const ArtifactCache& cache, const Logger& log = {});

struct DefenseSuite {
  std::vector<defense::DefenseReport> reports;
  defense::ClusterResult clusters;
  std::map<std::string, double> null_auroc;

  // Per-defense AUROC, the largest of them, and the null-check values.
  nlohmann::ordered_json summary() const;
};

const std::vector<std::string>& defense_names();

// Runs the named defenses (strip, spectral, activation-clustering, onion)
// against the poisoned training set of an attack. Throws ConfigError for an
// unknown name.
DefenseSuite run_defenses(const PipelineConfig& config, const captioner::CaptionModel& model,
                          const std::vector<ImageRecord>& poisoned_train,
                          const std::vector<ImageRecord>& held_out, const std::vector<std::string>& names,
                          const Logger& log = {});

// Mean AUROC over `shuffles` random relabelings.
double null_auroc(const std::vector<double>& scores, const std::vector<int>& labels, int shuffles,
                  std::uint64_t seed);

// Writes reports (JSON, CSV, SVG) and returns the written files relative to
// `dir`.
std::vector<std::string> write_attack_reports(const AttackOutcome& outcome, const PipelineConfig& config,
                                              const std::filesystem::path& dir);
std::vector<std::string> write_defense_reports(const DefenseSuite& suite, const std::filesystem::path& dir);

// Run manifest at the root of a run directory: config hash, seeds and
// artifact hashes. Timing lives in a separate file so identical runs
// produce identical manifests.
struct RunManifest {
  std::string command;
  std::string config_sha256;
  nlohmann::ordered_json seeds;
  std::map<std::string, std::string> artifacts;  // relative path -> sha256

  nlohmann::ordered_json to_json() const;
  static RunManifest from_json(const nlohmann::ordered_json& j);
};

RunManifest make_manifest(const std::string& command, const std::string& config_text, const PipelineConfig& config,
                          const std::filesystem::path& run_dir, const std::vector<std::string>& files);
// Empty when every listed artifact exists with the recorded hash.
std::vector<std::string> verify_manifest(const RunManifest& manifest, const std::filesystem::path& run_dir);

struct SweepCell {
  std::string value;
  bool ok = false;
  std::string error;
  double asr = 0;
  double bleu4 = 0;
  double clean_bleu4 = 0;
  double cider = 0;
  double meteor = 0;
};

const std::vector<std::string>& sweep_axes();
// Returns a copy of `config` with the axis set to `value`. Throws
// ConfigError for an unknown axis or unparsable value.
PipelineConfig apply_axis(const PipelineConfig& config, const std::string& axis, const std::string& value);

std::vector<SweepCell> run_sweep(const PipelineConfig& config, const std::string& axis,
                                 const std::vector<std::string>& values, const ArtifactCache& cache,
                                 const Logger& log = {});
std::string sweep_csv(const std::string& axis, const std::vector<SweepCell>& cells);
std::string sweep_svg(const std::string& axis, const std::vector<SweepCell>& cells);

}  // namespace captrap::pipeline
