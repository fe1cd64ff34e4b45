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

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include "captrap/core/io.hpp"
#include "support/temp_dir.hpp"

namespace captrap {
namespace {

namespace fs = std::filesystem;

constexpr const char* kTinyConfig = R"({"seed": 4,
 "data": {"train_images": 60, "test_images": 40, "detector_images": 40},
 "attack": {"poisoning_rate": 0.2},
 "detector": {"epochs": 1},
 "trigger": {"epochs": 1, "pgd_iters": 1, "samples": 4},
 "captioner": {"epochs": 1, "encoder_widths": [4, 6, 6, 8], "embed_size": 6, "hidden_size": 8,
               "attention_size": 4, "max_length": 12},
 "defense": {"strip_blends": 8, "strip_samples": 3, "null_shuffles": 50, "ac_restarts": 2, "pca_dims": 4}}
)";

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override { write_text_file(dir_.path() / "tiny.json", kTinyConfig); }

  int run(const std::string& args) const {
    const std::string cmd = "cd '" + dir_.path().string() + "' && CAPTRAP_HOME='" + (dir_.path() / "home").string() +
                            "' '" CAPTRAP_CLI "' " + args + " --quiet > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  fs::path at(const std::string& rel) const { return dir_.path() / rel; }

  testing::TempDir dir_;
};

TEST_F(CliTest, GenDataIsDeterministic) {
  ASSERT_EQ(run("gen-data --n 12 --seed 7 --run-dir a"), 0);
  ASSERT_EQ(run("gen-data --n 12 --seed 7 --run-dir b"), 0);
  EXPECT_EQ(read_text_file(at("a/run_manifest.json")), read_text_file(at("b/run_manifest.json")));
  EXPECT_EQ(read_text_file(at("a/dataset/manifest.jsonl")), read_text_file(at("b/dataset/manifest.jsonl")));
  ASSERT_EQ(run("gen-data --n 12 --seed 8 --run-dir c"), 0);
  EXPECT_NE(read_text_file(at("a/dataset/manifest.jsonl")), read_text_file(at("c/dataset/manifest.jsonl")));
}

TEST_F(CliTest, GenDataWithZeroImagesWritesEmptyManifest) {
  ASSERT_EQ(run("gen-data --n 0 --run-dir z"), 0);
  EXPECT_EQ(read_text_file(at("z/dataset/manifest.jsonl")), "");
}

TEST_F(CliTest, UsageAndConfigErrorsExitWithTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("gen-data --n -3"), 2);
  EXPECT_EQ(run("gen-data --n 3 --size 32 --run-dir s"), 2);
  write_text_file(at("bad.json"), R"({"attack": {"poison_rate": 0.1}})");
  EXPECT_EQ(run("attack --config bad.json --run-dir bad"), 2);
  EXPECT_EQ(run("sweep --config tiny.json --axis colour --values red --run-dir sw"), 2);
  write_text_file(at("m.bin"), "");
  EXPECT_EQ(run("defend --model m.bin --dataset none.jsonl --defenses strip,magic --run-dir d"), 2);
}

TEST_F(CliTest, StageFailuresExitWithThree) {
  EXPECT_EQ(run("train --config tiny.json --dataset missing.jsonl --run-dir t"), 3);
  write_text_file(at("garbage.bin"), "not a model");
  EXPECT_EQ(run("evaluate --config tiny.json --model garbage.bin --trigger garbage.bin --run-dir e"), 3);
}

TEST_F(CliTest, AttackRunIsReproducibleAndVerifiable) {
  ASSERT_EQ(run("attack --config tiny.json --run-dir r1 --defend --save-datasets"), 0);
  ASSERT_EQ(run("attack --config tiny.json --run-dir r2 --defend --save-datasets --no-cache"), 0);
  EXPECT_EQ(read_text_file(at("r1/config.json")), kTinyConfig);
  EXPECT_EQ(read_text_file(at("r1/run_manifest.json")), read_text_file(at("r2/run_manifest.json")));
  EXPECT_TRUE(fs::exists(at("r1/timing.json")));
  EXPECT_TRUE(fs::exists(at("r1/reports/stealth_summary.json")));
  EXPECT_EQ(run("report r1"), 0);

  ASSERT_EQ(run("defend --config tiny.json --model r1/artifacts/backdoored.bin "
                "--dataset r1/datasets/poisoned_train/manifest.jsonl "
                "--held-out r1/datasets/test/manifest.jsonl --defenses strip --run-dir d1"),
            0);
  int reports = 0;
  for (const auto& e : fs::directory_iterator(at("d1/reports"))) reports += e.path().extension() == ".json";
  EXPECT_EQ(reports, 2);  // defense_strip.json and the stealth summary

  write_text_file(at("r1/reports/eval_clean.json"), "{}");
  EXPECT_EQ(run("report r1"), 3);
}

TEST_F(CliTest, StagewiseCommandsChain) {
  ASSERT_EQ(run("train-detector --config tiny.json --run-dir s1"), 0);
  ASSERT_EQ(run("make-trigger --config tiny.json --detector s1/artifacts/detector.bin --run-dir s2"), 0);
  ASSERT_EQ(run("poison --config tiny.json --trigger s2/artifacts/trigger.json --run-dir s3"), 0);
  ASSERT_EQ(run("train --config tiny.json --dataset s3/dataset/manifest.jsonl --run-dir s4"), 0);
  ASSERT_EQ(run("evaluate --config tiny.json --model s4/artifacts/captioner.bin "
                "--trigger s2/artifacts/trigger.json --run-dir s5"),
            0);
  EXPECT_TRUE(fs::exists(at("s5/reports/eval.json")));
  ASSERT_EQ(run("sweep --config tiny.json --axis rate --values 0.1,0.2 --run-dir s6"), 0);
  const std::string csv = read_text_file(at("s6/reports/sweep_rate.csv"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_TRUE(fs::exists(at("s6/reports/sweep_rate.svg")));
}

TEST_F(CliTest, DefaultRunDirectoryLivesUnderCaptrapHome) {
  ASSERT_EQ(run("gen-data --n 2"), 0);
  ASSERT_TRUE(fs::exists(at("home/runs")));
  int runs = 0;
  for (const auto& e : fs::directory_iterator(at("home/runs"))) {
    ++runs;
    EXPECT_TRUE(fs::exists(e.path() / "run_manifest.json"));
  }
  EXPECT_EQ(runs, 1);
}

}  // namespace
}  // namespace captrap
