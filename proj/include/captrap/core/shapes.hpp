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

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "captrap/core/types.hpp"

namespace captrap {

enum class ShapeKind { kCircle, kSquare, kTriangle, kCross };

// Binary mask, row-major h x w, rasterized by pixel-center inclusion.
// Circle: inscribed disk. Triangle: largest isosceles triangle with its apex
// at the top-middle and its base on the bottom edge.
std::vector<std::uint8_t> shape_mask(ShapeKind kind, int height, int width);

ShapeKind parse_shape_kind(const std::string& name);
std::string shape_kind_name(ShapeKind kind);

using Rgb = std::array<std::uint8_t, 3>;
Rgb parse_color(const std::string& name);

// A class token such as "red circle": a color word followed by a shape word.
struct ShapeClass {
  std::string color;
  ShapeKind shape;
  std::string name() const;
};
ShapeClass parse_shape_class(const std::string& name);

std::vector<std::string> default_class_set();

struct ShapesOptions {
  int min_objects = 1;
  int max_objects = 3;
  int min_size = 16;
  int max_size = 26;
  int gap = 2;            // minimum free pixels between object boxes
  int max_retries = 200;  // whole-layout redraws per image
  std::string id_prefix = "img";
};

// Each image holds min..max_objects non-touching shapes on a flat grey
// background; ground-truth boxes are tight bounds of the rasterized shape.
// Two templated captions per image name every shape left to right.
// Throws GenerationError.
std::vector<ImageRecord> generate_shapes_dataset(int n_images, int image_size,
                                                 const std::vector<std::string>& class_set,
                                                 std::uint64_t seed,
                                                 const ShapesOptions& options = {});

// Caption templates, exposed so tests can rebuild expected captions.
std::vector<std::string> describe_objects(const std::vector<Detection>& detections);

}  // namespace captrap
