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

#include "captrap/core/types.hpp"

#include <algorithm>
#include <cmath>

#include "captrap/core/errors.hpp"

namespace captrap {

ImageF to_real(const Image& image) {
  ImageF out;
  out.height = image.height;
  out.width = image.width;
  out.data.assign(image.data.begin(), image.data.end());
  return out;
}

Image to_bytes(const ImageF& image) {
  Image out;
  out.height = image.height;
  out.width = image.width;
  out.data.resize(image.data.size());
  std::transform(image.data.begin(), image.data.end(), out.data.begin(), [](double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  });
  return out;
}

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.xb, b.xb) - std::max(a.xa, b.xa);
  const double ih = std::min(a.yb, b.yb) - std::max(a.ya, b.ya);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

void validate_record(const ImageRecord& record) {
  if (record.image_id.empty()) throw ValidationError("record with empty image_id");
  if (record.captions.empty()) {
    throw ValidationError("record " + record.image_id + " has no captions");
  }
  for (const auto& caption : record.captions) {
    if (caption.find_first_not_of(" \t") == std::string::npos) {
      throw ValidationError("record " + record.image_id + " has an empty caption");
    }
  }
  for (const auto& det : record.detections) {
    if (!det.bbox.valid()) {
      throw ValidationError("record " + record.image_id + " has a degenerate bbox");
    }
    if (det.score < 0.0 || det.score > 1.0) {
      throw ValidationError("record " + record.image_id + " has a score outside [0,1]");
    }
    if (!record.pixels.empty() && !det.bbox.inside(record.pixels.width, record.pixels.height)) {
      throw ValidationError("record " + record.image_id + " has a bbox out of image bounds");
    }
  }
}

void ExperimentConfig::validate(int image_height, int image_width) const {
  if (!(poisoning_rate >= 0.0 && poisoning_rate <= 1.0)) {
    throw ConfigError("poisoning_rate must lie in [0, 1]");
  }
  if (trigger_size.height <= 0 || trigger_size.width <= 0) {
    throw ConfigError("trigger size must be positive");
  }
  if (trigger_size.height > image_height || trigger_size.width > image_width) {
    throw ConfigError("trigger size exceeds image size");
  }
  if (!(linf_bound >= 0.0)) throw ConfigError("linf_bound must be non-negative");
  if (!(iou_filter_threshold >= 0.0 && iou_filter_threshold <= 1.0)) {
    throw ConfigError("iou_filter_threshold must lie in [0, 1]");
  }
  if (source_class.empty() || target_class.empty()) {
    throw ConfigError("source_class and target_class are required");
  }
  if (source_class == target_class) throw ConfigError("source and target class coincide");
}

}  // namespace captrap
