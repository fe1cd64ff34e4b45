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

#include "captrap/trigger/synth.hpp"

#include <algorithm>
#include <cmath>

#include "captrap/core/errors.hpp"

namespace captrap::trigger {

std::vector<BBox> qualifying_boxes(const ImageRecord& record, const std::string& source_class,
                                   TriggerSize size) {
  std::vector<BBox> boxes;
  for (const auto& d : record.detections) {
    if (d.class_name == source_class && d.bbox.width() >= size.width &&
        d.bbox.height() >= size.height) {
      boxes.push_back(d.bbox);
    }
  }
  return boxes;
}

std::vector<ImageRecord> select_synthesis_records(std::span<const ImageRecord> records,
                                                  const std::string& source_class,
                                                  TriggerSize size, std::size_t limit) {
  std::vector<ImageRecord> out;
  for (const auto& record : records) {
    if (out.size() >= limit) break;
    if (!qualifying_boxes(record, source_class, size).empty()) out.push_back(record);
  }
  return out;
}

namespace {

struct PreparedSample {
  ImageF pixels;
  std::vector<BBox> stamp_boxes;
  std::vector<detector::LabeledBox> targets;
};

PreparedSample prepare(const ImageRecord& record, const SynthesisConfig& config) {
  PreparedSample s;
  s.pixels = to_real(record.pixels);
  for (const auto& d : record.detections) {
    const bool qualifies = d.class_name == config.source_class &&
                           d.bbox.width() >= config.size.width &&
                           d.bbox.height() >= config.size.height;
    if (qualifies) s.stamp_boxes.push_back(d.bbox);
    s.targets.push_back({d.bbox, qualifies ? config.target_class : d.class_name});
  }
  if (s.stamp_boxes.empty()) {
    throw InputError("record " + record.image_id + " has no source box large enough for the trigger");
  }
  return s;
}

TriggerGradient gradient_for(const detector::DetectorOracle& oracle, const PreparedSample& sample,
                             const Trigger& trigger, const SynthesisConfig& config) {
  ImageF stamped = sample.pixels;
  for (const auto& box : sample.stamp_boxes) {
    stamped = apply_trigger(stamped, trigger, box, config.placement);
  }
  const auto eval = oracle.evaluate(stamped, sample.targets, config.weights, true);
  TriggerGradient out;
  out.loss = eval.terms.total();
  out.gradient.assign(trigger.data.size(), 0.0);
  for (const auto& box : sample.stamp_boxes) {
    const Footprint fp = footprint(box, trigger.height, trigger.width, config.placement);
    for (int y = 0; y < trigger.height; ++y) {
      for (int x = 0; x < trigger.width; ++x) {
        if (!trigger.masked(y, x)) continue;
        for (int c = 0; c < 3; ++c) {
          out.gradient[(static_cast<std::size_t>(y) * trigger.width + x) * 3 + c] +=
              eval.pixel_grad.at(fp.y0 + y, fp.x0 + x, c);
        }
      }
    }
  }
  for (double g : out.gradient) {
    if (!std::isfinite(g)) throw SynthesisError("non-finite trigger gradient");
  }
  if (!std::isfinite(out.loss)) throw SynthesisError("non-finite adversarial loss");
  return out;
}

void check_config(const detector::DetectorOracle& oracle, const SynthesisConfig& config) {
  if (config.epochs < 0 || config.pgd_iters < 0) throw ConfigError("negative iteration count");
  if (config.eta < 0) throw ConfigError("step size must be non-negative");
  if (config.linf_bound < 0) throw ConfigError("linf bound must be non-negative");
  oracle.class_index(config.source_class);
  oracle.class_index(config.target_class);
}

Trigger initial_trigger(const SynthesisConfig& config) {
  Trigger t = make_zero_trigger(config.size, config.mask, config.linf_bound);
  t.source_class = config.source_class;
  t.target_class = config.target_class;
  t.eta = config.eta;
  t.origin = config.pgd_iters == 1 ? "fgsm" : "pgd";
  return t;
}

int sign(double v) { return (v > 0) - (v < 0); }

}  // namespace

TriggerGradient adversarial_gradient(const detector::DetectorOracle& oracle,
                                     const ImageRecord& record, const Trigger& trigger,
                                     const SynthesisConfig& config) {
  return gradient_for(oracle, prepare(record, config), trigger, config);
}

Trigger synthesize_trigger(const detector::DetectorOracle& oracle,
                           std::span<const ImageRecord> records, const SynthesisConfig& config) {
  if (records.empty()) throw InputError("trigger synthesis needs at least one record");
  check_config(oracle, config);
  std::vector<PreparedSample> samples;
  samples.reserve(records.size());
  for (const auto& record : records) samples.push_back(prepare(record, config));

  Trigger trigger = initial_trigger(config);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double loss_sum = 0.0;
    long steps = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      for (int it = 0; it < config.pgd_iters; ++it) {
        const TriggerGradient g = gradient_for(oracle, samples[i], trigger, config);
        Trigger next = trigger;
        for (std::size_t k = 0; k < next.data.size(); ++k) {
          next.data[k] -= config.eta * sign(g.gradient[k]);
        }
        next = project_linf(std::move(next));
        if (feasibility_violation(next) > 0) throw SynthesisError("iterate left the feasible set");
        if (config.on_step) {
          config.on_step({epoch, static_cast<int>(i), it, g.loss, &trigger, &next, &g.gradient});
        }
        trigger = std::move(next);
        loss_sum += g.loss;
        ++steps;
      }
    }
    trigger.trace.push_back(steps == 0 ? 0.0 : loss_sum / static_cast<double>(steps));
  }
  return trigger;
}

Trigger synthesize_trigger_fgsm(const detector::DetectorOracle& oracle,
                                std::span<const ImageRecord> records, SynthesisConfig config) {
  config.pgd_iters = 1;
  return synthesize_trigger(oracle, records, config);
}

FoolingStats fooling_rate(const detector::DetectorOracle& oracle,
                          std::span<const ImageRecord> records, const Trigger& trigger,
                          Placement placement, std::size_t limit,
                          double detection_threshold) {
  const int target = oracle.class_index(trigger.target_class);
  FoolingStats stats;
  for (const auto& record : records) {
    for (const auto& box : qualifying_boxes(record, trigger.source_class,
                                            {trigger.height, trigger.width})) {
      if (limit != 0 && static_cast<std::size_t>(stats.stamped) >= limit) return stats;
      const auto out = oracle.predict(to_real(apply_trigger(record.pixels, trigger, box, placement)));
      double best_iou = 0.5;
      int best_class = -1;
      for (const auto& cell : out.cells) {
        const auto top = std::max_element(cell.class_probs.begin(), cell.class_probs.end());
        if (!(cell.objectness * *top > detection_threshold)) continue;
        const double overlap = iou(cell.box, box);
        if (overlap < best_iou) continue;
        best_iou = overlap;
        best_class = static_cast<int>(top - cell.class_probs.begin());
      }
      ++stats.stamped;
      if (best_class == target) ++stats.fooled;
    }
  }
  return stats;
}

}  // namespace captrap::trigger
