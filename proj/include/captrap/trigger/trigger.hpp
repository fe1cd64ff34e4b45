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

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "captrap/core/shapes.hpp"
#include "captrap/core/types.hpp"

namespace captrap::trigger {

// Where the trigger sits inside the object box.
enum class Placement { kCenter, kTopLeft, kBottomRight };
Placement parse_placement(const std::string& name);
std::string placement_name(Placement placement);

// Additive perturbation in pixel units. data is h x w x 3 interleaved and is
// zero wherever mask is zero; |data| <= linf_bound unless `unbounded`.
struct Trigger {
  int height = 0;
  int width = 0;
  ShapeKind mask_shape = ShapeKind::kSquare;
  std::vector<std::uint8_t> mask;
  std::vector<double> data;
  double linf_bound = 20.0;
  bool unbounded = false;  // static patches ignore linf_bound
  std::string source_class;
  std::string target_class;
  double eta = 0.0;
  std::string origin = "pgd";
  std::vector<double> trace;  // per-epoch mean adversarial loss

  double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  bool masked(int y, int x) const { return mask[static_cast<std::size_t>(y) * width + x] != 0; }
};

// Zero trigger with the given mask (square, triangle or circle).
Trigger make_zero_trigger(TriggerSize size, ShapeKind mask_shape, double linf_bound);

// Clamps every entry to [-linf_bound, linf_bound] (skipped for unbounded
// triggers) and zeroes entries outside the mask.
Trigger project_linf(Trigger trigger);

// Max-abs violation of the feasibility invariants; 0 when feasible.
double feasibility_violation(const Trigger& trigger);

enum class StaticPattern { kSolid, kCheckerboard };
StaticPattern parse_static_pattern(const std::string& name);

// Non-optimized patch: solid is +255 everywhere, checkerboard alternates
// +255 / -255 in cells of `cell` pixels. Unbounded; clipped on apply.
Trigger make_static_patch(TriggerSize size, StaticPattern pattern, int cell = 1);

struct Footprint {
  int x0 = 0;
  int y0 = 0;
};

// Top-left corner of the stamped trigger. Center placement uses
// ((xa + xb - w) / 2, (ya + yb - h) / 2) floored; corner placements sit
// flush against the corresponding box corner.
// Throws PlacementError when the box is smaller than the trigger.
Footprint footprint(const BBox& box, int trigger_height, int trigger_width,
                    Placement placement = Placement::kCenter);
bool fits(const BBox& box, const Trigger& trigger);

// Adds the masked trigger, clips to [0, 255] and rounds.
Image apply_trigger(const Image& pixels, const Trigger& trigger, const BBox& box,
                    Placement placement = Placement::kCenter);
// Real-valued variant (no rounding) used inside the optimizer.
ImageF apply_trigger(const ImageF& pixels, const Trigger& trigger, const BBox& box,
                     Placement placement = Placement::kCenter);

// JSON: {"h","w","mask","linf_bound","source_class","target_class","eta",
// "data","trace", ...}.
std::string trigger_to_json(const Trigger& trigger);
Trigger trigger_from_json(const std::string& text);
void save_trigger(const Trigger& trigger, const std::filesystem::path& json_path);
Trigger load_trigger(const std::filesystem::path& json_path);
// Visualisation: [-bound, bound] mapped linearly onto [0, 255].
Image trigger_visualization(const Trigger& trigger);

}  // namespace captrap::trigger
