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

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "captrap/core/errors.hpp"
#include "captrap/core/shapes.hpp"
#include "captrap/detector/ciou.hpp"
#include "captrap/detector/tiny_detector.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

namespace captrap::detector {
namespace {

using testing::hand_ciou;
using testing::random_box;

TEST(Ciou, IdenticalBoxesGiveExactlyZero) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const BBox b = random_box(rng);
    EXPECT_EQ(ciou_loss(b, b), 0.0);
  }
}

TEST(Ciou, TranslatedSquareMatchesHandGeometry) {
  const BBox gt{0, 0, 10, 10};
  const BBox pred{5, 0, 15, 10};
  // IoU = 50/150, center distance 5, enclosing box 15 x 10, equal aspect.
  const double expected = 1 - 50.0 / 150.0 + 25.0 / (15.0 * 15.0 + 10.0 * 10.0);
  EXPECT_NEAR(ciou_loss(pred, gt), expected, 1e-12);
}

TEST(Ciou, DisjointEqualAspectIsOnePlusDistanceTerm) {
  const BBox a{0, 0, 4, 2};
  const BBox b{10, 6, 18, 10};
  const double rho2 = 12.0 * 12.0 + 7.0 * 7.0;
  const double c2 = 18.0 * 18.0 + 10.0 * 10.0;
  EXPECT_DOUBLE_EQ(ciou_loss(a, b), 1 + rho2 / c2);
}

TEST(Ciou, MatchesHandGeometryOnRandomPairs) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const BBox p = random_box(rng), g = random_box(rng);
    EXPECT_NEAR(ciou_loss(p, g), hand_ciou(p, g), 1e-9);
  }
}

TEST(Ciou, TranslationAndScaleInvariant) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> shift(-50, 50), scale(0.2, 5);
  for (int i = 0; i < 100; ++i) {
    const BBox p = random_box(rng), g = random_box(rng);
    const double dx = shift(rng), dy = shift(rng), s = scale(rng);
    const auto move = [&](BBox b) { return BBox{b.xa + dx, b.ya + dy, b.xb + dx, b.yb + dy}; };
    const auto grow = [&](BBox b) { return BBox{b.xa * s, b.ya * s, b.xb * s, b.yb * s}; };
    const double base = ciou_loss(p, g);
    EXPECT_NEAR(ciou_loss(move(p), move(g)), base, 1e-9);
    EXPECT_NEAR(ciou_loss(grow(p), grow(g)), base, 1e-9);
  }
}

TEST(Ciou, ZeroAreaIsDomainError) {
  EXPECT_THROW(ciou_loss({0, 0, 0, 5}, {0, 0, 5, 5}), DomainError);
  EXPECT_THROW(ciou_loss({0, 0, 5, 5}, {1, 1, 4, 1}), DomainError);
}

TEST(Ciou, GradientMatchesCentralDifferences) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 100; ++i) {
    const BBox p = random_box(rng), g = random_box(rng);
    const auto value = ciou_loss_with_grad(p, g);
    EXPECT_NEAR(value.loss, ciou_loss(p, g), 1e-12);
    for (int k = 0; k < 4; ++k) {
      const double h = 1e-5;
      BBox up = p, down = p;
      (&up.xa)[k] += h;
      (&down.xa)[k] -= h;
      const double numeric = (hand_ciou(up, g) - hand_ciou(down, g)) / (2 * h);
      EXPECT_NEAR(value.d_pred[k], numeric, 1e-6 * std::max(1.0, std::abs(numeric)));
    }
  }
}

TEST(DetectionLoss, BinaryCrossEntropyVanishesAtTarget) {
  EXPECT_EQ(binary_cross_entropy(1.0, 1.0), 0.0);
  EXPECT_EQ(binary_cross_entropy(0.0, 0.0), 0.0);
  EXPECT_NEAR(binary_cross_entropy(0.25, 1.0), -std::log(0.25), 1e-15);
  EXPECT_NEAR(binary_cross_entropy(0.25, 0.0), -std::log(0.75), 1e-15);
}

TEST(DetectionLoss, TotalIsWeightedSum) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 10);
  for (int i = 0; i < 100; ++i) {
    const DetectionLossTerms t{u(rng), u(rng), u(rng), {u(rng), u(rng), u(rng)}};
    EXPECT_DOUBLE_EQ(t.total(), t.weights.weight_alpha * t.l_loc + t.weights.weight_beta * t.l_cls +
                                    t.weights.weight_gamma * t.l_obj);
    DetectionLossTerms bigger = t;
    bigger.l_obj += u(rng);
    EXPECT_GE(bigger.total(), t.total());
  }
}

TEST(DetectionLoss, DefaultWeights) {
  const LossWeights w;
  EXPECT_EQ(w.weight_alpha, 1.0);
  EXPECT_EQ(w.weight_beta, 5.0);
  EXPECT_EQ(w.weight_gamma, 3.0);
}

TEST(DetectionLoss, RejectsUnknownClassAndEmptyTargets) {
  const TinyDetector model({default_class_set()}, 1);
  const ImageF image(64, 64, 128.0);
  const std::vector<LabeledBox> unknown = {{{0, 0, 20, 20}, "pink star"}};
  EXPECT_THROW(detection_loss(model, image, unknown), VocabularyError);
  EXPECT_THROW(detection_loss(model, image, {}), InputError);
}

TEST(TinyDetector, RandomInitPassesGradientCheck) {
  const TinyDetector model({default_class_set()}, 11);
  const auto result = testing::check_detector_gradient(model, 32, 200, 12);
  EXPECT_GE(result.pass_fraction(), 0.99) << "worst relative error " << result.worst;
}

TEST(TinyDetector, ZeroEpochsKeepsInitialWeights) {
  const auto data = generate_shapes_dataset(4, 64, default_class_set(), 1);
  DetectorTrainOptions options;
  options.epochs = 0;
  options.spec.classes = default_class_set();
  const auto result = train_tiny_detector(data, options, 9);
  const TinyDetector fresh(options.spec, 9);
  const auto a = result.model.parameters();
  const auto b = fresh.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i], *b[i]);
  EXPECT_TRUE(result.loss_trace.empty());
}

TEST(TinyDetector, TrainingIsDeterministicPerSeed) {
  const auto data = generate_shapes_dataset(24, 64, default_class_set(), 1);
  DetectorTrainOptions options;
  options.epochs = 2;
  options.spec.classes = default_class_set();
  const auto a = train_tiny_detector(data, options, 5);
  const auto b = train_tiny_detector(data, options, 5);
  const auto c = train_tiny_detector(data, options, 6);
  EXPECT_EQ(a.loss_trace, b.loss_trace);
  const auto pa = a.model.parameters(), pb = b.model.parameters(), pc = c.model.parameters();
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(*pa[i], *pb[i]);
    any_diff = any_diff || *pa[i] != *pc[i];
  }
  EXPECT_TRUE(any_diff);
}

TEST(TinyDetector, DivergenceReportsEpoch) {
  const auto data = generate_shapes_dataset(16, 64, default_class_set(), 1);
  DetectorTrainOptions options;
  options.epochs = 3;
  options.learning_rate = 1e300;
  options.spec.classes = default_class_set();
  try {
    train_tiny_detector(data, options, 5);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(TinyDetector, SaveLoadRoundTripWithSidecar) {
  testing::TempDir dir;
  const TinyDetector model({default_class_set()}, 21);
  save_detector(model, 0.5, dir.path() / "det.bin");
  DetectorSidecar sidecar;
  const auto loaded = load_detector(dir.path() / "det.bin", &sidecar);
  EXPECT_EQ(sidecar.class_vocabulary, default_class_set());
  EXPECT_EQ(sidecar.val_mean_iou, 0.5);
  EXPECT_EQ(sidecar.seed, 21u);
  const ImageF image(64, 64, 90.0);
  EXPECT_EQ(loaded.predict(image).cells[5].class_probs, model.predict(image).cells[5].class_probs);
}

TEST(TinyDetector, FitsTenImages) {
  const auto data = generate_shapes_dataset(10, 64, default_class_set(), 31);
  DetectorTrainOptions options;
  options.epochs = 150;
  options.batch_size = 10;
  options.spec.classes = default_class_set();
  const auto fit = train_tiny_detector(data, options, 3);
  double l_loc = 0, l_cls = 0, l_obj = 0;
  for (const auto& r : data) {
    std::vector<LabeledBox> targets;
    for (const auto& d : r.detections) targets.push_back({d.bbox, d.class_name});
    const auto terms = detection_loss(fit.model, to_real(r.pixels), targets);
    l_loc += terms.l_loc / data.size();
    l_cls += terms.l_cls / data.size();
    l_obj += terms.l_obj / data.size();
  }
  EXPECT_LT(l_loc, 0.05);
  // Converged thresholds: the last training epoch's terms, with slack for
  // the final parameter update.
  EXPECT_LE(l_cls, 2 * fit.final_terms.l_cls + 1e-3);
  EXPECT_LE(l_obj, 2 * fit.final_terms.l_obj + 1e-3);
}

class ConvergedDetector : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    DetectorTrainOptions options;
    options.epochs = 20;
    options.spec.classes = default_class_set();
    const auto train = generate_shapes_dataset(800, 64, default_class_set(), 1);
    model_ = new TinyDetector(train_tiny_detector(train, options, 7).model);
  }
  static void TearDownTestSuite() {
    delete model_;
    model_ = nullptr;
  }
  static TinyDetector* model_;
};
TinyDetector* ConvergedDetector::model_ = nullptr;

TEST_F(ConvergedDetector, HeldOutMeanIouAtLeastPointNine) {
  const auto val = generate_shapes_dataset(200, 64, default_class_set(), 2);
  EXPECT_GE(mean_assigned_iou(*model_, val), 0.9);
}

TEST_F(ConvergedDetector, AnnotatesSingleShapeImages) {
  ShapesOptions single;
  single.min_objects = single.max_objects = 1;
  const auto images = generate_shapes_dataset(50, 64, default_class_set(), 77, single);
  const auto annotated = annotate_dataset(*model_, images);
  int exact = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& truth = images[i].detections[0];
    const auto& found = annotated[i].detections;
    if (found.size() == 1 && found[0].class_name == truth.class_name &&
        iou(found[0].bbox, truth.bbox) >= 0.5) {
      ++exact;
    }
  }
  // Centers lying on a cell boundary can split between two cells.
  EXPECT_GE(exact, 45) << "of 50";
}

TEST_F(ConvergedDetector, BlankImageAndThresholdOneGiveNoDetections) {
  ImageRecord blank{"blank", "", Image(64, 64, 128), {"nothing"}, {}};
  EXPECT_TRUE(annotate_dataset(*model_, {blank})[0].detections.empty());
  const auto images = generate_shapes_dataset(20, 64, default_class_set(), 78);
  for (const auto& r : annotate_dataset(*model_, images, 1.0)) EXPECT_TRUE(r.detections.empty());
}

TEST_F(ConvergedDetector, TrainedModelPassesGradientCheck) {
  const auto result = testing::check_detector_gradient(*model_, 32, 200, 13);
  EXPECT_GE(result.pass_fraction(), 0.99) << "worst relative error " << result.worst;
}

}  // namespace
}  // namespace captrap::detector
