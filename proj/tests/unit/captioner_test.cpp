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

#include <cmath>
#include <numeric>
#include <random>

#include "captrap/captioner/captioner.hpp"
#include "captrap/core/errors.hpp"
#include "captrap/core/shapes.hpp"
#include "captrap/metrics/metrics.hpp"
#include "support/temp_dir.hpp"

namespace captrap::captioner {
namespace {

TEST(Vocabulary, SpecialTokensThenSortedWords) {
  const Vocabulary v = Vocabulary::from_words({"square", "a", "red", "a"});
  ASSERT_EQ(v.size(), 6);
  EXPECT_EQ(v.word(Vocabulary::kStart), "<start>");
  EXPECT_EQ(v.word(Vocabulary::kEnd), "<end>");
  EXPECT_EQ(v.word(Vocabulary::kUnknown), "<unk>");
  EXPECT_EQ(v.word(3), "a");
  EXPECT_EQ(v.word(5), "square");
  EXPECT_EQ(v.id("zebra"), Vocabulary::kUnknown);
  const std::vector<int> ids = v.encode("A red zebra.");
  EXPECT_EQ(ids, (std::vector<int>{3, 4, Vocabulary::kUnknown}));
  EXPECT_EQ(v.decode({Vocabulary::kStart, 3, 4, Vocabulary::kEnd}), (Tokens{"a", "red"}));
}

CaptionerHyper small_hyper() {
  CaptionerHyper h;
  h.encoder_widths = {4, 6, 6, 8};
  h.embed_size = 5;
  h.hidden_size = 7;
  h.attention_size = 4;
  h.max_length = 12;
  return h;
}

struct Sample {
  CaptionModel model;
  ImageF pixels;
  std::vector<std::vector<int>> captions;
};

Sample small_sample(std::uint64_t seed) {
  const auto data = generate_shapes_dataset(2, 64, default_class_set(), seed);
  Sample s{CaptionModel(Vocabulary::from_records(data), small_hyper(), seed), to_real(data[0].pixels), {}};
  for (const auto& c : data[0].captions) s.captions.push_back(s.model.vocabulary().encode(c));
  return s;
}

bool close(double analytic, double numeric, double rel_tol) {
  const double diff = std::abs(analytic - numeric);
  return diff <= 1e-9 || diff / std::max(std::abs(analytic), std::abs(numeric)) <= rel_tol;
}

TEST(CaptionLoss, ParameterGradientMatchesCentralDifference) {
  Sample s = small_sample(3);
  nn::GradList g = nn::zeros_like(std::as_const(s.model).parameters());
  s.model.caption_loss(s.pixels, s.captions, &g, nullptr);
  auto params = s.model.parameters();
  std::mt19937_64 rng(17);
  int checked = 0, ok = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    std::uniform_int_distribution<long> idx(0, params[p]->size() - 1);
    for (int k = 0; k < 8; ++k) {
      const long i = idx(rng);
      double& w = params[p]->data()[i];
      const double keep = w;
      const double h = 1e-5;
      w = keep + h;
      const double up = s.model.caption_loss(s.pixels, s.captions, nullptr, nullptr);
      w = keep - h;
      const double dn = s.model.caption_loss(s.pixels, s.captions, nullptr, nullptr);
      w = keep;
      ++checked;
      ok += close(g[p].data()[i], (up - dn) / (2 * h), 1e-4) ? 1 : 0;
    }
  }
  EXPECT_GE(ok, checked * 99 / 100) << ok << "/" << checked;
}

TEST(CaptionLoss, PixelGradientMatchesCentralDifference) {
  Sample s = small_sample(4);
  ImageF grad;
  s.model.caption_loss(s.pixels, s.captions, nullptr, &grad);
  ASSERT_EQ(grad.height, s.pixels.height);
  int ok = 0;
  for (int y = 28; y < 32; ++y) {
    for (int x = 28; x < 32; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double keep = s.pixels.at(y, x, c);
        const double h = 1e-3;
        s.pixels.at(y, x, c) = keep + h;
        const double up = s.model.caption_loss(s.pixels, s.captions, nullptr, nullptr);
        s.pixels.at(y, x, c) = keep - h;
        const double dn = s.model.caption_loss(s.pixels, s.captions, nullptr, nullptr);
        s.pixels.at(y, x, c) = keep;
        ok += close(grad.at(y, x, c), (up - dn) / (2 * h), 1e-4) ? 1 : 0;
      }
    }
  }
  EXPECT_GE(ok, 47);
}

TEST(CaptionLoss, GradientsAccumulate) {
  Sample s = small_sample(5);
  nn::GradList once = nn::zeros_like(std::as_const(s.model).parameters());
  s.model.caption_loss(s.pixels, s.captions, &once, nullptr);
  nn::GradList twice = nn::zeros_like(std::as_const(s.model).parameters());
  s.model.caption_loss(s.pixels, s.captions, &twice, nullptr);
  s.model.caption_loss(s.pixels, s.captions, &twice, nullptr);
  for (std::size_t p = 0; p < once.size(); ++p) {
    EXPECT_LT((twice[p] - 2 * once[p]).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Decode, DistributionsAndAttentionAreNormalized) {
  const Sample s = small_sample(6);
  const auto data = generate_shapes_dataset(5, 64, default_class_set(), 8);
  for (const auto& r : data) {
    const DecodeResult d = s.model.greedy(r.pixels);
    ASSERT_FALSE(d.distributions.empty());
    EXPECT_LE(static_cast<int>(d.tokens.size()), small_hyper().max_length);
    for (const auto& dist : d.distributions) {
      EXPECT_NEAR(std::accumulate(dist.begin(), dist.end(), 0.0), 1.0, 1e-9);
    }
    for (const auto& att : d.attention) {
      EXPECT_NEAR(std::accumulate(att.begin(), att.end(), 0.0), 1.0, 1e-9);
      EXPECT_EQ(att.size(), 64u);
    }
    EXPECT_EQ(d.tokens.size(), d.token_ids.size());
  }
}

TEST(Training, RejectsEmptyInputAndNegativeEpochs) {
  EXPECT_THROW(train_captioner({}, {}, 1), InputError);
}

class TrainedCaptioner : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    train_ = new std::vector<ImageRecord>(generate_shapes_dataset(300, 64, default_class_set(), 31));
    held_out_ = new std::vector<ImageRecord>(generate_shapes_dataset(100, 64, default_class_set(), 32));
    CaptionerTrainOptions opt;
    opt.epochs = 20;
    result_ = new CaptionerTrainResult(train_captioner(*train_, opt, 9));
  }
  static void TearDownTestSuite() {
    delete train_;
    delete held_out_;
    delete result_;
  }
  static std::vector<ImageRecord>* train_;
  static std::vector<ImageRecord>* held_out_;
  static CaptionerTrainResult* result_;
};
std::vector<ImageRecord>* TrainedCaptioner::train_ = nullptr;
std::vector<ImageRecord>* TrainedCaptioner::held_out_ = nullptr;
CaptionerTrainResult* TrainedCaptioner::result_ = nullptr;

TEST_F(TrainedCaptioner, LossDecreasesEarly) {
  const auto& t = result_->loss_trace;
  ASSERT_EQ(t.size(), 20u);
  EXPECT_LT(t[1], t[0]);
  EXPECT_LT(t[2], t[1]);
  EXPECT_LT(t.back(), 0.5 * t.front());
}

TEST_F(TrainedCaptioner, HeldOutBleuIsHigh) {
  std::vector<Tokens> cands;
  std::vector<metrics::References> refs;
  for (const auto& r : *held_out_) {
    cands.push_back(result_->model.greedy(r.pixels).tokens);
    metrics::References rr;
    for (const auto& c : r.captions) rr.push_back(tokenize(c));
    refs.push_back(rr);
  }
  EXPECT_GE(metrics::bleu4(cands, refs), 0.5);
}

TEST_F(TrainedCaptioner, BeamWidthOneIsGreedy) {
  for (const auto& r : *held_out_) {
    const DecodeResult g = result_->model.greedy(r.pixels);
    const DecodeResult b = result_->model.beam(r.pixels, 1);
    ASSERT_EQ(g.token_ids, b.token_ids) << r.image_id;
  }
}

TEST_F(TrainedCaptioner, WiderBeamScoresAtLeastGreedy) {
  const auto log_prob = [&](const ImageRecord& r, const std::vector<int>& ids) {
    std::vector<int> seq = ids;
    seq.push_back(Vocabulary::kEnd);
    return -result_->model.caption_loss(to_real(r.pixels), {ids}, nullptr, nullptr) *
           static_cast<double>(seq.size());
  };
  for (int i = 0; i < 20; ++i) {
    const auto& r = (*held_out_)[static_cast<std::size_t>(i)];
    const DecodeResult g = result_->model.greedy(r.pixels);
    const DecodeResult b = result_->model.beam(r.pixels, 3);
    if (!g.ended || !b.ended) continue;
    EXPECT_GE(log_prob(r, b.token_ids), log_prob(r, g.token_ids) - 1e-9) << r.image_id;
  }
}

TEST_F(TrainedCaptioner, ActivationsOneRowPerRecordAndDuplicatesMatch) {
  std::vector<ImageRecord> recs((*held_out_).begin(), (*held_out_).begin() + 5);
  recs.push_back(recs[2]);
  for (ActivationSource src : {ActivationSource::kEncoderPooled, ActivationSource::kDecoderState}) {
    const nn::Matrix a = capture_activations(result_->model, recs, src);
    ASSERT_EQ(a.rows(), 6);
    EXPECT_EQ(a.row(2), a.row(5));
    EXPECT_NE(a.row(0), a.row(1));
  }
  EXPECT_EQ(parse_activation_source("decoder"), ActivationSource::kDecoderState);
  EXPECT_EQ(activation_source_name(ActivationSource::kEncoderPooled), "encoder");
  EXPECT_THROW(parse_activation_source("middle"), ConfigError);
}

TEST_F(TrainedCaptioner, SaveLoadPreservesDecoding) {
  testing::TempDir dir;
  const auto path = dir.path() / "cap.bin";
  save_captioner(result_->model, result_->loss_trace, path);
  CaptionerSidecar side;
  const CaptionModel loaded = load_captioner(path, &side);
  EXPECT_EQ(side.loss_trace, result_->loss_trace);
  EXPECT_EQ(side.seed, result_->model.seed());
  for (int i = 0; i < 10; ++i) {
    const auto& px = (*held_out_)[static_cast<std::size_t>(i)].pixels;
    EXPECT_EQ(loaded.greedy(px).token_ids, result_->model.greedy(px).token_ids);
  }
}

TEST(Training, DeterministicAndZeroEpochs) {
  const auto data = generate_shapes_dataset(40, 64, default_class_set(), 41);
  CaptionerTrainOptions opt;
  opt.epochs = 2;
  const auto a = train_captioner(data, opt, 4);
  const auto b = train_captioner(data, opt, 4);
  EXPECT_EQ(a.loss_trace, b.loss_trace);
  EXPECT_EQ(a.model.greedy(data[0].pixels).token_ids, b.model.greedy(data[0].pixels).token_ids);
  opt.epochs = 0;
  const auto z = train_captioner(data, opt, 4);
  EXPECT_TRUE(z.loss_trace.empty());
  const CaptionModel init(Vocabulary::from_records(data), opt.hyper, z.model.seed());
  EXPECT_EQ(z.model.greedy(data[1].pixels).token_ids, init.greedy(data[1].pixels).token_ids);
}

}  // namespace
}  // namespace captrap::captioner
