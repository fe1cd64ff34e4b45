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

#include "captrap/core/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "captrap/core/errors.hpp"
#include "captrap/core/random.hpp"
#include "captrap/core/text.hpp"

namespace captrap {

std::vector<std::uint8_t> shape_mask(ShapeKind kind, int height, int width) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(height) * width, 0);
  const double cx = width / 2.0;
  const double cy = height / 2.0;
  const double radius = std::min(width, height) / 2.0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double px = x + 0.5;
      const double py = y + 0.5;
      bool inside = false;
      switch (kind) {
        case ShapeKind::kSquare:
          inside = true;
          break;
        case ShapeKind::kCircle:
          inside = (px - cx) * (px - cx) + (py - cy) * (py - cy) <= radius * radius;
          break;
        case ShapeKind::kTriangle:
          inside = std::abs(px - cx) <= cx * (py / height);
          break;
        case ShapeKind::kCross:
          inside = std::abs(px - cx) <= width / 6.0 || std::abs(py - cy) <= height / 6.0;
          break;
      }
      mask[static_cast<std::size_t>(y) * width + x] = inside ? 1 : 0;
    }
  }
  return mask;
}

ShapeKind parse_shape_kind(const std::string& name) {
  if (name == "circle") return ShapeKind::kCircle;
  if (name == "square") return ShapeKind::kSquare;
  if (name == "triangle") return ShapeKind::kTriangle;
  if (name == "cross") return ShapeKind::kCross;
  throw ConfigError("unknown shape '" + name + "'");
}

std::string shape_kind_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kCircle:
      return "circle";
    case ShapeKind::kSquare:
      return "square";
    case ShapeKind::kTriangle:
      return "triangle";
    case ShapeKind::kCross:
      return "cross";
  }
  return "square";
}

Rgb parse_color(const std::string& name) {
  static const std::map<std::string, Rgb> kPalette = {
      {"red", {210, 45, 45}},    {"blue", {45, 70, 210}},    {"green", {45, 170, 60}},
      {"yellow", {225, 200, 40}}, {"purple", {150, 60, 190}}, {"orange", {235, 130, 35}},
  };
  const auto it = kPalette.find(name);
  if (it == kPalette.end()) throw ConfigError("unknown color '" + name + "'");
  return it->second;
}

std::string ShapeClass::name() const { return color + " " + shape_kind_name(shape); }

ShapeClass parse_shape_class(const std::string& name) {
  const Tokens words = split_words(name);
  if (words.size() != 2) throw ConfigError("class '" + name + "' is not '<color> <shape>'");
  parse_color(words[0]);
  return {words[0], parse_shape_kind(words[1])};
}

std::vector<std::string> default_class_set() {
  return {"red circle", "blue square", "green triangle", "yellow cross", "blue circle", "red square"};
}

std::vector<std::string> describe_objects(const std::vector<Detection>& detections) {
  std::vector<const Detection*> order;
  for (const auto& d : detections) order.push_back(&d);
  std::stable_sort(order.begin(), order.end(), [](const Detection* a, const Detection* b) {
    if (a->bbox.center_x() != b->bbox.center_x()) return a->bbox.center_x() < b->bbox.center_x();
    return a->bbox.center_y() < b->bbox.center_y();
  });
  std::vector<std::string> names;
  std::vector<int> counts;
  for (const auto* d : order) {
    const auto it = std::find(names.begin(), names.end(), d->class_name);
    if (it == names.end()) {
      names.push_back(d->class_name);
      counts.push_back(1);
    } else {
      ++counts[static_cast<std::size_t>(it - names.begin())];
    }
  }
  static const char* kNumbers[] = {"", "a", "two", "three", "four", "five"};
  std::vector<std::string> phrases;
  for (std::size_t i = 0; i < names.size(); ++i) {
    Tokens words = split_words(names[i]);
    if (counts[i] > 1) words.back() = plural_of(words.back());
    const int n = std::min(counts[i], 5);
    phrases.push_back(std::string(kNumbers[n]) + " " + join(words));
  }
  std::string list;
  for (std::size_t i = 0; i < phrases.size(); ++i) {
    if (i > 0) list += (i + 1 == phrases.size()) ? " and " : ", ";
    list += phrases[i];
  }
  return {list, "a picture of " + list};
}

std::vector<ImageRecord> generate_shapes_dataset(int n_images, int image_size,
                                                 const std::vector<std::string>& class_set,
                                                 std::uint64_t seed,
                                                 const ShapesOptions& options) {
  if (n_images < 0) throw GenerationError("n_images must be non-negative");
  if (image_size < 64) throw GenerationError("image_size must be at least 64");
  if (class_set.size() < 4) throw GenerationError("class_set needs at least 4 classes");
  if (options.min_objects < 1 || options.max_objects < options.min_objects ||
      options.min_size < 1 || options.max_size < options.min_size) {
    throw GenerationError("inconsistent shape options");
  }
  std::vector<ShapeClass> classes;
  for (const auto& name : class_set) classes.push_back(parse_shape_class(name));

  Rng rng(seed);
  std::uniform_int_distribution<int> count_dist(options.min_objects, options.max_objects);
  std::uniform_int_distribution<std::size_t> class_dist(0, classes.size() - 1);
  std::uniform_int_distribution<int> size_dist(options.min_size, options.max_size);
  std::uniform_int_distribution<int> bg_dist(100, 150);

  std::vector<ImageRecord> records;
  records.reserve(static_cast<std::size_t>(n_images));
  for (int n = 0; n < n_images; ++n) {
    ImageRecord record;
    char id[64];
    std::snprintf(id, sizeof(id), "%s_%06d", options.id_prefix.c_str(), n);
    record.image_id = id;
    record.image_path = "images/" + record.image_id + ".png";
    const auto bg = static_cast<std::uint8_t>(bg_dist(rng));
    record.pixels = Image(image_size, image_size, bg);

    const int n_objects = count_dist(rng);
    struct Placement {
      const ShapeClass* cls;
      int size, x0, y0;
    };
    std::vector<Placement> layout;
    // A layout is redrawn from scratch when a shape cannot be placed.
    for (int attempt = 0; attempt < options.max_retries && static_cast<int>(layout.size()) < n_objects;
         ++attempt) {
      layout.clear();
      for (int k = 0; k < n_objects; ++k) {
        const ShapeClass* cls = &classes[class_dist(rng)];
        const int size = size_dist(rng);
        if (size > image_size) throw GenerationError("shape larger than image");
        std::uniform_int_distribution<int> pos_dist(0, image_size - size);
        bool ok = false;
        int x0 = 0, y0 = 0;
        for (int tries = 0; tries < 20 && !ok; ++tries) {
          x0 = pos_dist(rng);
          y0 = pos_dist(rng);
          ok = std::all_of(layout.begin(), layout.end(), [&](const Placement& p) {
            return x0 + size + options.gap <= p.x0 || p.x0 + p.size + options.gap <= x0 ||
                   y0 + size + options.gap <= p.y0 || p.y0 + p.size + options.gap <= y0;
          });
        }
        if (!ok) break;
        layout.push_back({cls, size, x0, y0});
      }
    }
    if (static_cast<int>(layout.size()) < n_objects) {
      throw GenerationError("could not place " + std::to_string(n_objects) + " shapes in " +
                            record.image_id + " after " + std::to_string(options.max_retries) +
                            " layouts");
    }

    for (const auto& [cls, size, x0, y0] : layout) {
      const auto mask = shape_mask(cls->shape, size, size);
      const Rgb color = parse_color(cls->color);
      int min_x = size, min_y = size, max_x = -1, max_y = -1;
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          if (!mask[static_cast<std::size_t>(y) * size + x]) continue;
          for (int c = 0; c < 3; ++c) record.pixels.at(y0 + y, x0 + x, c) = color[c];
          min_x = std::min(min_x, x);
          max_x = std::max(max_x, x);
          min_y = std::min(min_y, y);
          max_y = std::max(max_y, y);
        }
      }
      Detection det;
      det.class_name = cls->name();
      det.bbox = {static_cast<double>(x0 + min_x), static_cast<double>(y0 + min_y),
                  static_cast<double>(x0 + max_x + 1), static_cast<double>(y0 + max_y + 1)};
      det.score = 1.0;
      record.detections.push_back(std::move(det));
    }
    record.captions = describe_objects(record.detections);
    records.push_back(std::move(record));
  }
  return records;
}

}  // namespace captrap
