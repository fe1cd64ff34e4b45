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

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace captrap {

// Interleaved RGB raster, row-major (y, x, channel).
template <typename T>
struct Raster {
  static constexpr int kChannels = 3;

  int height = 0;
  int width = 0;
  std::vector<T> data;

  Raster() = default;
  Raster(int h, int w, T fill = T{})
      : height(h), width(w), data(static_cast<std::size_t>(h) * w * kChannels, fill) {}

  bool empty() const { return data.empty(); }
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * kChannels + c;
  }
  T& at(int y, int x, int c) { return data[index(y, x, c)]; }
  const T& at(int y, int x, int c) const { return data[index(y, x, c)]; }

  friend bool operator==(const Raster&, const Raster&) = default;
};

// Pixels as stored on disk: integers in [0, 255].
using Image = Raster<std::uint8_t>;
// Real-valued pixels in the same units (no rescaling).
using ImageF = Raster<double>;

ImageF to_real(const Image& image);
// Rounds to nearest and clips to [0, 255].
Image to_bytes(const ImageF& image);

// Axis-aligned box in pixel coordinates; [xa, xb) x [ya, yb).
struct BBox {
  double xa = 0, ya = 0, xb = 0, yb = 0;

  double width() const { return xb - xa; }
  double height() const { return yb - ya; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (xa + xb); }
  double center_y() const { return 0.5 * (ya + yb); }
  bool valid() const { return width() > 0 && height() > 0; }
  bool inside(int image_width, int image_height) const {
    return xa >= 0 && ya >= 0 && xb <= image_width && yb <= image_height;
  }

  friend bool operator==(const BBox&, const BBox&) = default;
};

double iou(const BBox& a, const BBox& b);

struct Detection {
  std::string class_name;
  BBox bbox;
  double score = 1.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct ImageRecord {
  std::string image_id;
  // Relative to the manifest directory; empty for purely in-memory records.
  std::string image_path;
  Image pixels;
  std::vector<std::string> captions;
  std::vector<Detection> detections;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

// Throws ValidationError naming the record when an invariant is broken.
// Bounds are only checked when pixels are loaded.
void validate_record(const ImageRecord& record);

struct TriggerSize {
  int height = 16;
  int width = 16;
  friend bool operator==(const TriggerSize&, const TriggerSize&) = default;
};

// Threat-model knobs shared by every stage.
struct ExperimentConfig {
  double poisoning_rate = 0.05;
  TriggerSize trigger_size{16, 16};
  double linf_bound = 20.0;
  std::string source_class;
  std::string target_class;
  double iou_filter_threshold = 0.3;
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate(int image_height, int image_width) const;
};

}  // namespace captrap
