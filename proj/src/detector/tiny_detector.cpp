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

#include "captrap/detector/tiny_detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "captrap/core/errors.hpp"
#include "captrap/core/io.hpp"
#include "captrap/detector/ciou.hpp"

namespace captrap::detector {

using nn::FeatureMap;
using nn::Matrix;

namespace {

double bce_with_logits(double z, double target) { return nn::softplus(z) - target * z; }

}  // namespace

int DetectorOracle::class_index(const std::string& name) const {
  const auto& vocab = class_vocabulary();
  const auto it = std::find(vocab.begin(), vocab.end(), name);
  if (it == vocab.end()) throw VocabularyError("class '" + name + "' not in detector vocabulary");
  return static_cast<int>(it - vocab.begin());
}

DetectionLossTerms detection_loss(const DetectorOracle& oracle, const ImageF& pixels,
                                  std::span<const LabeledBox> targets, const LossWeights& weights) {
  return oracle.evaluate(pixels, targets, weights, false).terms;
}

double binary_cross_entropy(double p, double target) {
  double loss = 0;
  if (target > 0) loss -= target * std::log(p);
  if (target < 1) loss -= (1.0 - target) * std::log(1.0 - p);
  return loss;
}

struct TinyDetector::Tape {
  std::vector<nn::ConvTape> conv;
  std::vector<Matrix> pre;
  nn::ConvTape head;
};

TinyDetector::TinyDetector(TinyDetectorSpec spec, std::uint64_t seed)
    : spec_(std::move(spec)), seed_(seed) {
  if (spec_.classes.empty()) throw ConfigError("detector needs a class vocabulary");
  if (spec_.widths.size() < 4) throw ConfigError("detector expects at least four body widths");
  Rng rng(seed);
  int in = 3;
  for (std::size_t i = 0; i < spec_.widths.size(); ++i) {
    const int stride = i < 3 ? 2 : 1;
    body_.emplace_back(in, spec_.widths[i], 3, stride, 1);
    body_.back().init(rng);
    in = spec_.widths[i];
  }
  head_ = nn::Conv2d(in, 5 + static_cast<int>(spec_.classes.size()), 1, 1, 0);
  head_.init(rng);
  head_.weight *= 0.1;
}

nn::ParamList TinyDetector::parameters() {
  nn::ParamList params;
  for (auto& conv : body_) {
    params.push_back(&conv.weight);
    params.push_back(&conv.bias);
  }
  params.push_back(&head_.weight);
  params.push_back(&head_.bias);
  return params;
}

nn::ConstParamList TinyDetector::parameters() const {
  nn::ConstParamList params;
  for (const auto& conv : body_) {
    params.push_back(&conv.weight);
    params.push_back(&conv.bias);
  }
  params.push_back(&head_.weight);
  params.push_back(&head_.bias);
  return params;
}

FeatureMap TinyDetector::forward(const ImageF& pixels, Tape* tape) const {
  if (pixels.height % kStride != 0 || pixels.width % kStride != 0) {
    throw InputError("detector input must be a multiple of 8 pixels per side");
  }
  FeatureMap x = nn::image_to_input(pixels);
  if (tape) {
    tape->conv.resize(body_.size());
    tape->pre.resize(body_.size());
  }
  for (std::size_t i = 0; i < body_.size(); ++i) {
    FeatureMap pre = nn::conv_forward(body_[i], x, tape ? &tape->conv[i] : nullptr);
    x = pre;
    x.values = nn::silu(pre.values);
    if (tape) tape->pre[i] = std::move(pre.values);
  }
  return nn::conv_forward(head_, x, tape ? &tape->head : nullptr);
}

CellPrediction TinyDetector::decode_cell(const FeatureMap& head, int gy, int gx, int image_h,
                                         int image_w) const {
  const int col = gy * head.width + gx;
  CellPrediction cell;
  const double cx = (gx + nn::sigmoid(head.values(0, col))) * kStride;
  const double cy = (gy + nn::sigmoid(head.values(1, col))) * kStride;
  const double w = nn::sigmoid(head.values(2, col)) * image_w;
  const double h = nn::sigmoid(head.values(3, col)) * image_h;
  cell.box = {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
  cell.objectness = nn::sigmoid(head.values(4, col));
  const int n_classes = static_cast<int>(spec_.classes.size());
  cell.class_probs.resize(static_cast<std::size_t>(n_classes));
  for (int k = 0; k < n_classes; ++k) cell.class_probs[k] = nn::sigmoid(head.values(5 + k, col));
  return cell;
}

DetectorOutput TinyDetector::predict(const ImageF& pixels) const {
  const FeatureMap head = forward(pixels, nullptr);
  DetectorOutput out;
  out.grid_height = head.height;
  out.grid_width = head.width;
  out.cell_size = kStride;
  for (int gy = 0; gy < head.height; ++gy) {
    for (int gx = 0; gx < head.width; ++gx) {
      out.cells.push_back(decode_cell(head, gy, gx, pixels.height, pixels.width));
    }
  }
  return out;
}

LossEvaluation TinyDetector::evaluate(const ImageF& pixels, std::span<const LabeledBox> targets,
                                      const LossWeights& weights, bool with_gradient,
                                      const ObjectnessTargets* fixed_targets) const {
  if (targets.empty()) throw InputError("detection loss needs at least one target");
  return run(pixels, targets, weights, with_gradient, nullptr, fixed_targets);
}

LossEvaluation TinyDetector::evaluate_for_training(const ImageF& pixels,
                                                   std::span<const LabeledBox> targets,
                                                   const LossWeights& weights,
                                                   nn::GradList& grads) const {
  return run(pixels, targets, weights, false, &grads, nullptr);
}

LossEvaluation TinyDetector::run(const ImageF& pixels, std::span<const LabeledBox> targets,
                                 const LossWeights& weights, bool input_grad, nn::GradList* grads,
                                 const ObjectnessTargets* fixed_targets) const {
  const bool backward = input_grad || grads != nullptr;
  Tape tape;
  const FeatureMap head = forward(pixels, backward ? &tape : nullptr);
  const int gh = head.height, gw = head.width;
  const int n_cells = gh * gw;
  const int n_classes = static_cast<int>(spec_.classes.size());
  const double img_w = pixels.width, img_h = pixels.height;

  if (fixed_targets && static_cast<int>(fixed_targets->values.size()) != n_cells) {
    throw InputError("objectness target grid mismatch");
  }

  LossEvaluation result;
  result.terms.weights = weights;
  if (!head.values.allFinite()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    result.terms.l_loc = result.terms.l_cls = result.terms.l_obj = nan;
    return result;
  }
  result.objectness_targets.values.assign(static_cast<std::size_t>(n_cells), 0.0);
  FeatureMap d_head(head.channels, gh, gw);
  const double n_targets = static_cast<double>(targets.size());

  for (const auto& target : targets) {
    const int k_true = class_index(target.class_name);
    if (!target.box.valid()) throw DomainError("target box has zero area");
    const int gx = std::clamp(static_cast<int>(std::floor(target.box.center_x() / kStride)), 0, gw - 1);
    const int gy = std::clamp(static_cast<int>(std::floor(target.box.center_y() / kStride)), 0, gh - 1);
    const int col = gy * gw + gx;

    const double s0 = nn::sigmoid(head.values(0, col)), s1 = nn::sigmoid(head.values(1, col));
    const double s2 = nn::sigmoid(head.values(2, col)), s3 = nn::sigmoid(head.values(3, col));
    const double cx = (gx + s0) * kStride, cy = (gy + s1) * kStride;
    const double w = s2 * img_w, h = s3 * img_h;
    const BBox pred{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};

    const CiouValue loc = ciou_loss_with_grad(pred, target.box);
    result.terms.l_loc += loc.loss / n_targets;
    auto& obj_target = result.objectness_targets.values[static_cast<std::size_t>(col)];
    obj_target = std::max(obj_target, iou(pred, target.box));

    double cls_loss = 0;
    for (int k = 0; k < n_classes; ++k) {
      const double t = k == k_true ? 1.0 : 0.0;
      const double z = head.values(5 + k, col);
      cls_loss += bce_with_logits(z, t);
      if (backward) {
        d_head.values(5 + k, col) +=
            weights.weight_beta * (nn::sigmoid(z) - t) / (n_classes * n_targets);
      }
    }
    result.terms.l_cls += cls_loss / (n_classes * n_targets);

    if (backward) {
      const auto& d = loc.d_pred;  // xa, ya, xb, yb
      const double scale = weights.weight_alpha / n_targets;
      const double d_cx = d[0] + d[2], d_cy = d[1] + d[3];
      const double d_w = 0.5 * (d[2] - d[0]), d_h = 0.5 * (d[3] - d[1]);
      d_head.values(0, col) += scale * d_cx * kStride * s0 * (1 - s0);
      d_head.values(1, col) += scale * d_cy * kStride * s1 * (1 - s1);
      d_head.values(2, col) += scale * d_w * img_w * s2 * (1 - s2);
      d_head.values(3, col) += scale * d_h * img_h * s3 * (1 - s3);
    }
  }

  const auto& obj_targets = fixed_targets ? fixed_targets->values : result.objectness_targets.values;
  for (int col = 0; col < n_cells; ++col) {
    const double z = head.values(4, col);
    const double t = obj_targets[static_cast<std::size_t>(col)];
    result.terms.l_obj += bce_with_logits(z, t) / n_cells;
    if (backward) d_head.values(4, col) = weights.weight_gamma * (nn::sigmoid(z) - t) / n_cells;
  }
  if (fixed_targets) result.objectness_targets = *fixed_targets;

  if (!backward) return result;

  const std::size_t n_body = body_.size();
  FeatureMap d = nn::conv_backward(head_, tape.head, d_head,
                                   grads ? &(*grads)[2 * n_body] : nullptr,
                                   grads ? &(*grads)[2 * n_body + 1] : nullptr, true);
  for (std::size_t i = n_body; i-- > 0;) {
    nn::silu_backward(tape.pre[i], d.values);
    const bool need_input = i > 0 || input_grad;
    d = nn::conv_backward(body_[i], tape.conv[i], d, grads ? &(*grads)[2 * i] : nullptr,
                          grads ? &(*grads)[2 * i + 1] : nullptr, need_input);
  }
  if (input_grad) result.pixel_grad = nn::input_grad_to_pixels(d);
  return result;
}

void TinyDetector::save(const std::filesystem::path& weights_path) const {
  nn::save_params(weights_path, parameters());
}

void TinyDetector::load(const std::filesystem::path& weights_path) {
  nn::load_params(weights_path, parameters());
}

namespace {

std::vector<LabeledBox> targets_of(const ImageRecord& record) {
  std::vector<LabeledBox> targets;
  for (const auto& d : record.detections) targets.push_back({d.bbox, d.class_name});
  return targets;
}

}  // namespace

DetectorTrainResult train_tiny_detector(const std::vector<ImageRecord>& train,
                                        const DetectorTrainOptions& options, std::uint64_t seed) {
  if (options.epochs < 0 || options.batch_size <= 0) throw ConfigError("bad detector schedule");
  std::vector<ImageF> images;
  std::vector<std::vector<LabeledBox>> targets;
  for (const auto& record : train) {
    if (record.pixels.empty()) throw InputError("record " + record.image_id + " has no pixels");
    images.push_back(to_real(record.pixels));
    targets.push_back(targets_of(record));
  }

  DetectorTrainResult result{TinyDetector(options.spec, seed), {}, {}};
  TinyDetector& model = result.model;
  const auto params = model.parameters();
  nn::Adam adam(options.learning_rate);
  Rng rng(seed ^ 0x5eedULL);
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  const long steps_per_epoch =
      (static_cast<long>(images.size()) + options.batch_size - 1) / options.batch_size;
  const long total_steps = std::max(1L, steps_per_epoch * options.epochs);
  long step = 0;

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0;
    DetectionLossTerms epoch_terms;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      nn::GradList grads = nn::zeros_like(std::as_const(model).parameters());
      for (std::size_t i = start; i < end; ++i) {
        const auto idx = order[i];
        const auto eval = model.evaluate_for_training(images[idx], targets[idx], options.weights, grads);
        const double total = eval.terms.total();
        if (!std::isfinite(total)) {
          throw TrainingError("detector loss became non-finite at epoch " + std::to_string(epoch));
        }
        epoch_total += total;
        epoch_terms.l_loc += eval.terms.l_loc;
        epoch_terms.l_cls += eval.terms.l_cls;
        epoch_terms.l_obj += eval.terms.l_obj;
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      const double norm = std::sqrt(nn::squared_norm(grads)) * scale;
      const double clip = norm > 10.0 ? 10.0 / norm : 1.0;
      const double progress = static_cast<double>(step) / total_steps;
      adam.set_lr(options.learning_rate * (0.02 + 0.98 * 0.5 * (1 + std::cos(std::numbers::pi * progress))));
      adam.step(params, grads, scale * clip);
      ++step;
    }
    const double n = std::max<std::size_t>(1, images.size());
    result.loss_trace.push_back(epoch_total / n);
    result.final_terms = {epoch_terms.l_loc / n, epoch_terms.l_cls / n, epoch_terms.l_obj / n,
                          options.weights};
  }
  return result;
}

double mean_assigned_iou(const DetectorOracle& oracle, const std::vector<ImageRecord>& records) {
  double total = 0;
  long count = 0;
  for (const auto& record : records) {
    const auto out = oracle.predict(to_real(record.pixels));
    for (const auto& d : record.detections) {
      const int gx = std::clamp(static_cast<int>(std::floor(d.bbox.center_x() / out.cell_size)), 0,
                                out.grid_width - 1);
      const int gy = std::clamp(static_cast<int>(std::floor(d.bbox.center_y() / out.cell_size)), 0,
                                out.grid_height - 1);
      total += iou(out.at(gy, gx).box, d.bbox);
      ++count;
    }
  }
  return count ? total / count : 0.0;
}

double assigned_class_accuracy(const DetectorOracle& oracle,
                               const std::vector<ImageRecord>& records) {
  long hits = 0, count = 0;
  for (const auto& record : records) {
    const auto out = oracle.predict(to_real(record.pixels));
    for (const auto& d : record.detections) {
      const int gx = std::clamp(static_cast<int>(std::floor(d.bbox.center_x() / out.cell_size)), 0,
                                out.grid_width - 1);
      const int gy = std::clamp(static_cast<int>(std::floor(d.bbox.center_y() / out.cell_size)), 0,
                                out.grid_height - 1);
      const auto& probs = out.at(gy, gx).class_probs;
      const auto best = std::max_element(probs.begin(), probs.end()) - probs.begin();
      hits += oracle.class_vocabulary()[static_cast<std::size_t>(best)] == d.class_name;
      ++count;
    }
  }
  return count ? static_cast<double>(hits) / count : 0.0;
}

std::vector<ImageRecord> annotate_dataset(const DetectorOracle& oracle,
                                          std::vector<ImageRecord> records, double threshold) {
  for (auto& record : records) {
    const auto out = oracle.predict(to_real(record.pixels));
    record.detections.clear();
    for (const auto& cell : out.cells) {
      const auto best = std::max_element(cell.class_probs.begin(), cell.class_probs.end());
      const double score = cell.objectness * *best;
      if (!(score > threshold)) continue;
      BBox box = cell.box;
      box.xa = std::clamp(box.xa, 0.0, static_cast<double>(record.pixels.width));
      box.xb = std::clamp(box.xb, 0.0, static_cast<double>(record.pixels.width));
      box.ya = std::clamp(box.ya, 0.0, static_cast<double>(record.pixels.height));
      box.yb = std::clamp(box.yb, 0.0, static_cast<double>(record.pixels.height));
      if (!box.valid()) continue;
      const auto k = static_cast<std::size_t>(best - cell.class_probs.begin());
      record.detections.push_back({oracle.class_vocabulary()[k], box, score});
    }
  }
  return records;
}

void save_detector(const TinyDetector& model, double val_mean_iou,
                   const std::filesystem::path& weights_path) {
  model.save(weights_path);
  nlohmann::ordered_json j;
  j["class_vocabulary"] = model.spec().classes;
  j["grid_size"] = model.spec().input_size / TinyDetector::kStride;
  j["input_size"] = model.spec().input_size;
  j["seed"] = model.seed();
  j["val_mean_iou"] = val_mean_iou;
  j["widths"] = model.spec().widths;
  auto sidecar = weights_path;
  sidecar.replace_extension(".json");
  write_text_file(sidecar, j.dump(2) + "\n");
}

TinyDetector load_detector(const std::filesystem::path& weights_path, DetectorSidecar* sidecar) {
  auto sidecar_path = weights_path;
  sidecar_path.replace_extension(".json");
  const auto j = nlohmann::json::parse(read_text_file(sidecar_path));
  TinyDetectorSpec spec;
  spec.classes = j.at("class_vocabulary").get<std::vector<std::string>>();
  spec.input_size = j.at("input_size").get<int>();
  spec.widths = j.at("widths").get<std::vector<int>>();
  const auto seed = j.at("seed").get<std::uint64_t>();
  TinyDetector model(spec, seed);
  model.load(weights_path);
  if (sidecar) {
    *sidecar = {spec.classes, j.at("grid_size").get<int>(), spec.input_size, seed,
                j.at("val_mean_iou").get<double>(), spec.widths};
  }
  return model;
}

}  // namespace captrap::detector
