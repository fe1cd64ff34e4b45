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

#include "captrap/pipeline/pipeline.hpp"

#include <gtest/gtest.h>

#include "captrap/core/errors.hpp"
#include "captrap/core/io.hpp"
#include "support/temp_dir.hpp"

namespace captrap::pipeline {
namespace {

PipelineConfig tiny_config() {
  PipelineConfig c;
  c.seed = 4;
  c.data.train_images = 60;
  c.data.test_images = 40;
  c.data.detector_images = 40;
  c.attack.poisoning_rate = 0.2;
  c.detector.epochs = 1;
  c.trigger.epochs = 1;
  c.trigger.pgd_iters = 1;
  c.trigger.samples = 4;
  c.captioner.epochs = 1;
  c.captioner.hyper = {{4, 6, 6, 8}, 6, 8, 4, 12};
  c.defense.strip_blends = 8;
  c.defense.strip_samples = 3;
  c.defense.null_shuffles = 50;
  c.defense.pca_dims = 4;
  c.defense.ac_restarts = 2;
  return c;
}

TEST(PipelineConfigTest, DefaultsRoundTripThroughJson) {
  const PipelineConfig c;
  const auto again = PipelineConfig::from_text(c.to_json().dump());
  EXPECT_EQ(again.to_json().dump(), c.to_json().dump());
  EXPECT_EQ(c.attack.trigger_size.height, 8);
  EXPECT_DOUBLE_EQ(c.attack.linf_bound, 20.0);
  EXPECT_DOUBLE_EQ(c.attack.poisoning_rate, 0.05);
}

TEST(PipelineConfigTest, PartialDocumentFallsBackToDefaults) {
  const auto c = PipelineConfig::from_text(R"({"seed": 9, "attack": {"poisoning_rate": 0.1}})");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_DOUBLE_EQ(c.attack.poisoning_rate, 0.1);
  EXPECT_EQ(c.data.train_images, 500);
}

TEST(PipelineConfigTest, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(PipelineConfig::from_text(R"({"attack": {"poison_rate": 0.1}})"), ConfigError);
  EXPECT_THROW(PipelineConfig::from_text(R"({"extras": {}})"), ConfigError);
  EXPECT_THROW(PipelineConfig::from_text(R"({"attack": {"poisoning_rate": "high"}})"), ConfigError);
  EXPECT_THROW(PipelineConfig::from_text(R"({"attack": {"source_class": "green hexagon"}})"), ConfigError);
  EXPECT_THROW(PipelineConfig::from_text(R"({"trigger": {"optimizer": "adam"}})"), ConfigError);
  EXPECT_THROW(PipelineConfig::from_text(R"({"data": {"image_size": 32}})"), ConfigError);
  EXPECT_THROW(PipelineConfig::from_text("{not json"), ConfigError);
}

TEST(PipelineConfigTest, StageSeedsDifferAndFollowTheMasterSeed) {
  PipelineConfig a, b;
  b.seed = 2;
  EXPECT_NE(a.stage_seed("captioner"), a.stage_seed("detector"));
  EXPECT_NE(a.stage_seed("captioner"), b.stage_seed("captioner"));
  EXPECT_EQ(a.experiment().seed, a.stage_seed("poison"));
}

TEST(SweepTest, ApplyAxisSetsEachField) {
  const PipelineConfig c;
  EXPECT_DOUBLE_EQ(apply_axis(c, "rate", "0.08").attack.poisoning_rate, 0.08);
  EXPECT_EQ(apply_axis(c, "trigger-size", "16").attack.trigger_size.width, 16);
  const auto rect = apply_axis(c, "trigger-size", "6x10").attack.trigger_size;
  EXPECT_EQ(rect.height, 6);
  EXPECT_EQ(rect.width, 10);
  EXPECT_DOUBLE_EQ(apply_axis(c, "linf", "40").attack.linf_bound, 40);
  EXPECT_EQ(apply_axis(c, "location", "top-left").attack.placement, trigger::Placement::kTopLeft);
  EXPECT_EQ(apply_axis(c, "shape", "circle").attack.trigger_shape, ShapeKind::kCircle);
  EXPECT_EQ(apply_axis(c, "optimizer", "fgsm").trigger.optimizer, "fgsm");
  EXPECT_EQ(apply_axis(c, "injection", "poison-only").attack.injection, poison::InjectionMode::kPoisonOnly);
}

TEST(SweepTest, ApplyAxisRejectsBadInput) {
  const PipelineConfig c;
  EXPECT_THROW(apply_axis(c, "colour", "red"), ConfigError);
  EXPECT_THROW(apply_axis(c, "rate", "lots"), ConfigError);
  EXPECT_THROW(apply_axis(c, "rate", "1.5"), Error);
  EXPECT_THROW(apply_axis(c, "trigger-size", "big"), ConfigError);
}

TEST(SweepTest, CsvHasOneRowPerCellAndMarksFailures) {
  std::vector<SweepCell> cells(4);
  const char* values[] = {"0.03", "0.05", "0.08", "0.10"};
  for (int i = 0; i < 4; ++i) {
    cells[i].value = values[i];
    cells[i].ok = i != 2;
  }
  cells[2].error = "boom";
  const std::string csv = sweep_csv("rate", cells);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_EQ(csv.rfind("rate,status", 0), 0u);
  EXPECT_NE(csv.find("0.08,failed"), std::string::npos);
  const std::string svg = sweep_svg("rate", cells);
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("0.10"), std::string::npos);
}

TEST(NullAurocTest, ShuffledLabelsAverageToOneHalf) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 200; ++i) {
    scores.push_back(i);
    labels.push_back(i >= 150 ? 1 : 0);
  }
  EXPECT_NEAR(null_auroc(scores, labels, 500, 3), 0.5, 0.02);
}

TEST(ManifestTest, VerifyDetectsMissingAndModifiedArtifacts) {
  testing::TempDir dir;
  write_text_file(dir.path() / "a.txt", "alpha");
  write_text_file(dir.path() / "reports/b.txt", "beta");
  const PipelineConfig c;
  const auto m = make_manifest("attack", "{}", c, dir.path(), {"a.txt", "reports/b.txt"});
  EXPECT_TRUE(verify_manifest(m, dir.path()).empty());
  const auto reloaded = RunManifest::from_json(nlohmann::ordered_json::parse(m.to_json().dump()));
  EXPECT_EQ(reloaded.to_json().dump(), m.to_json().dump());
  write_text_file(dir.path() / "a.txt", "alpha!");
  std::filesystem::remove(dir.path() / "reports/b.txt");
  EXPECT_EQ(verify_manifest(m, dir.path()).size(), 2u);
  EXPECT_THROW(RunManifest::from_json(nlohmann::ordered_json::parse("{}")), ParseError);
}

TEST(DefenseSelectionTest, UnknownDefenseIsAConfigError) {
  const PipelineConfig c = tiny_config();
  captioner::CaptionModel model;
  EXPECT_THROW(run_defenses(c, model, {}, {}, {"strip", "magic"}), ConfigError);
}

class TinyRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    cache_dir_ = new testing::TempDir();
    outcome_ = new AttackOutcome(run_attack(tiny_config(), ArtifactCache(cache_dir_->path())));
  }
  static void TearDownTestSuite() {
    delete outcome_;
    delete cache_dir_;
  }
  static testing::TempDir* cache_dir_;
  static AttackOutcome* outcome_;
};
testing::TempDir* TinyRun::cache_dir_ = nullptr;
AttackOutcome* TinyRun::outcome_ = nullptr;

TEST_F(TinyRun, ProducesConsistentOutcome) {
  const auto& o = *outcome_;
  EXPECT_EQ(o.data.train.size(), 60u);
  EXPECT_EQ(o.plan.pairs.size() + o.data.train.size(), o.poisoned_train.size());
  EXPECT_TRUE(o.audit.ok());
  EXPECT_EQ(o.backdoored.n_t, static_cast<int>(o.population.size()));
  EXPECT_EQ(o.backdoored.test_images, 40);
  EXPECT_GE(o.backdoored.asr, 0.0);
  EXPECT_LE(o.backdoored.asr, 1.0);
  const auto summary = o.summary(tiny_config());
  EXPECT_EQ(summary.at("poison").at("poisoned_records").get<std::size_t>(), o.plan.pairs.size());
}

TEST_F(TinyRun, CachedRerunIsIdentical) {
  const AttackOutcome again = run_attack(tiny_config(), ArtifactCache(cache_dir_->path()));
  EXPECT_EQ(again.summary(tiny_config()).dump(), outcome_->summary(tiny_config()).dump());
  EXPECT_EQ(again.backdoored.to_csv(), outcome_->backdoored.to_csv());
}

TEST_F(TinyRun, UncachedRerunIsIdentical) {
  const AttackOutcome again = run_attack(tiny_config(), ArtifactCache());
  EXPECT_EQ(again.summary(tiny_config()).dump(), outcome_->summary(tiny_config()).dump());
}

TEST_F(TinyRun, ZeroRateReusesTheCleanModel) {
  PipelineConfig c = tiny_config();
  c.attack.poisoning_rate = 0;
  const AttackOutcome o = run_attack(c, ArtifactCache(cache_dir_->path()));
  EXPECT_TRUE(o.plan.pairs.empty());
  EXPECT_DOUBLE_EQ(o.backdoored.asr, o.clean.asr);
  EXPECT_DOUBLE_EQ(o.backdoored.bleu4, o.clean.bleu4);
}

TEST_F(TinyRun, DefensesEmitAllReports) {
  const PipelineConfig c = tiny_config();
  const auto suite = run_defenses(c, outcome_->backdoored_model, outcome_->poisoned_train, outcome_->data.test,
                                  defense_names());
  ASSERT_EQ(suite.reports.size(), 4u);
  for (const auto& r : suite.reports) {
    EXPECT_GE(r.auroc, 0.0);
    EXPECT_LE(r.auroc, 1.0);
    EXPECT_TRUE(suite.null_auroc.contains(r.defense));
  }
  const auto only = run_defenses(c, outcome_->backdoored_model, outcome_->poisoned_train, outcome_->data.test,
                                 {"strip"});
  ASSERT_EQ(only.reports.size(), 1u);
  EXPECT_EQ(only.reports[0].to_json().dump(), suite.reports[0].to_json().dump());

  testing::TempDir dir;
  const auto files = write_defense_reports(suite, dir.path());
  EXPECT_EQ(files.size(), 9u);
  for (const auto& f : files) EXPECT_TRUE(std::filesystem::exists(dir.path() / f)) << f;
}

TEST_F(TinyRun, ReportFilesMatchManifest) {
  testing::TempDir dir;
  const auto files = write_attack_reports(*outcome_, tiny_config(), dir.path());
  const auto m = make_manifest("attack", "{}", tiny_config(), dir.path(), files);
  EXPECT_TRUE(verify_manifest(m, dir.path()).empty());
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "artifacts/trigger.png"));
}

TEST_F(TinyRun, SingleValueSweepEqualsAttack) {
  const auto cells = run_sweep(tiny_config(), "rate", {"0.2"}, ArtifactCache(cache_dir_->path()));
  ASSERT_EQ(cells.size(), 1u);
  ASSERT_TRUE(cells[0].ok);
  EXPECT_DOUBLE_EQ(cells[0].asr, outcome_->backdoored.asr);
  EXPECT_DOUBLE_EQ(cells[0].bleu4, outcome_->backdoored.bleu4);
}

TEST_F(TinyRun, FailedSweepCellIsMarkedAndSweepContinues) {
  PipelineConfig c = tiny_config();
  c.trigger.samples = 1;
  // A trigger wider than every source box leaves nothing to poison or attack.
  const auto cells = run_sweep(c, "trigger-size", {"40", "8"}, ArtifactCache(cache_dir_->path()));
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_FALSE(cells[0].ok);
  EXPECT_FALSE(cells[0].error.empty());
  EXPECT_TRUE(cells[1].ok);
}

}  // namespace
}  // namespace captrap::pipeline
