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

#include "captrap/trigger/trigger.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "captrap/core/errors.hpp"
#include "captrap/core/io.hpp"

namespace captrap::trigger {

Placement parse_placement(const std::string& name) {
  if (name == "center") return Placement::kCenter;
  if (name == "top-left") return Placement::kTopLeft;
  if (name == "bottom-right") return Placement::kBottomRight;
  throw ConfigError("unknown trigger location '" + name + "'");
}

std::string placement_name(Placement placement) {
  switch (placement) {
    case Placement::kCenter:
      return "center";
    case Placement::kTopLeft:
      return "top-left";
    case Placement::kBottomRight:
      return "bottom-right";
  }
  return "center";
}

Trigger make_zero_trigger(TriggerSize size, ShapeKind mask_shape, double linf_bound) {
  if (size.height <= 0 || size.width <= 0) throw ConfigError("trigger size must be positive");
  if (mask_shape == ShapeKind::kCross) throw ConfigError("trigger mask must be square, triangle or circle");
  Trigger t;
  t.height = size.height;
  t.width = size.width;
  t.mask_shape = mask_shape;
  t.mask = shape_mask(mask_shape, size.height, size.width);
  t.data.assign(static_cast<std::size_t>(size.height) * size.width * 3, 0.0);
  t.linf_bound = linf_bound;
  return t;
}

Trigger project_linf(Trigger trigger) {
  for (int y = 0; y < trigger.height; ++y) {
    for (int x = 0; x < trigger.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        double& v = trigger.at(y, x, c);
        if (!trigger.masked(y, x)) {
          v = 0.0;
        } else if (!trigger.unbounded) {
          v = std::clamp(v, -trigger.linf_bound, trigger.linf_bound);
        }
      }
    }
  }
  return trigger;
}

double feasibility_violation(const Trigger& trigger) {
  double worst = 0.0;
  for (int y = 0; y < trigger.height; ++y) {
    for (int x = 0; x < trigger.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::abs(trigger.at(y, x, c));
        if (!trigger.masked(y, x)) {
          worst = std::max(worst, v);
        } else if (!trigger.unbounded) {
          worst = std::max(worst, v - trigger.linf_bound);
        }
      }
    }
  }
  return worst;
}

StaticPattern parse_static_pattern(const std::string& name) {
  if (name == "solid") return StaticPattern::kSolid;
  if (name == "checkerboard") return StaticPattern::kCheckerboard;
  throw ConfigError("unknown static pattern '" + name + "'");
}

Trigger make_static_patch(TriggerSize size, StaticPattern pattern, int cell) {
  if (cell <= 0) throw ConfigError("checkerboard cell must be positive");
  Trigger t = make_zero_trigger(size, ShapeKind::kSquare, 255.0);
  t.unbounded = true;
  t.origin = pattern == StaticPattern::kSolid ? "static:solid" : "static:checkerboard";
  for (int y = 0; y < t.height; ++y) {
    for (int x = 0; x < t.width; ++x) {
      const bool light = pattern == StaticPattern::kSolid || ((y / cell + x / cell) % 2 == 0);
      for (int c = 0; c < 3; ++c) t.at(y, x, c) = light ? 255.0 : -255.0;
    }
  }
  return t;
}

Footprint footprint(const BBox& box, int trigger_height, int trigger_width, Placement placement) {
  if (box.width() < trigger_width || box.height() < trigger_height) {
    throw PlacementError("box smaller than the trigger");
  }
  switch (placement) {
    case Placement::kCenter:
      return {static_cast<int>(std::floor((box.xa + box.xb - trigger_width) / 2.0)),
              static_cast<int>(std::floor((box.ya + box.yb - trigger_height) / 2.0))};
    case Placement::kTopLeft:
      return {static_cast<int>(std::ceil(box.xa)), static_cast<int>(std::ceil(box.ya))};
    case Placement::kBottomRight:
      return {static_cast<int>(std::floor(box.xb - trigger_width)),
              static_cast<int>(std::floor(box.yb - trigger_height))};
  }
  return {};
}

bool fits(const BBox& box, const Trigger& trigger) {
  return box.width() >= trigger.width && box.height() >= trigger.height;
}

namespace {

template <typename T>
void check_inside(const Raster<T>& pixels, const Footprint& fp, const Trigger& trigger) {
  if (fp.x0 < 0 || fp.y0 < 0 || fp.x0 + trigger.width > pixels.width ||
      fp.y0 + trigger.height > pixels.height) {
    throw PlacementError("trigger footprint leaves the image");
  }
}

}  // namespace

Image apply_trigger(const Image& pixels, const Trigger& trigger, const BBox& box,
                    Placement placement) {
  const Footprint fp = footprint(box, trigger.height, trigger.width, placement);
  check_inside(pixels, fp, trigger);
  Image out = pixels;
  for (int y = 0; y < trigger.height; ++y) {
    for (int x = 0; x < trigger.width; ++x) {
      if (!trigger.masked(y, x)) continue;
      for (int c = 0; c < 3; ++c) {
        auto& px = out.at(fp.y0 + y, fp.x0 + x, c);
        const double v = std::clamp(px + trigger.at(y, x, c), 0.0, 255.0);
        px = static_cast<std::uint8_t>(std::lround(v));
      }
    }
  }
  return out;
}

ImageF apply_trigger(const ImageF& pixels, const Trigger& trigger, const BBox& box,
                     Placement placement) {
  const Footprint fp = footprint(box, trigger.height, trigger.width, placement);
  check_inside(pixels, fp, trigger);
  ImageF out = pixels;
  for (int y = 0; y < trigger.height; ++y) {
    for (int x = 0; x < trigger.width; ++x) {
      if (!trigger.masked(y, x)) continue;
      for (int c = 0; c < 3; ++c) {
        auto& px = out.at(fp.y0 + y, fp.x0 + x, c);
        px = std::clamp(px + trigger.at(y, x, c), 0.0, 255.0);
      }
    }
  }
  return out;
}

std::string trigger_to_json(const Trigger& trigger) {
  nlohmann::ordered_json j;
  j["h"] = trigger.height;
  j["w"] = trigger.width;
  j["mask"] = shape_kind_name(trigger.mask_shape);
  j["linf_bound"] = trigger.linf_bound;
  j["source_class"] = trigger.source_class;
  j["target_class"] = trigger.target_class;
  j["eta"] = trigger.eta;
  j["data"] = trigger.data;
  j["trace"] = trigger.trace;
  j["unbounded"] = trigger.unbounded;
  j["origin"] = trigger.origin;
  return j.dump() + "\n";
}

Trigger trigger_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("trigger file: ") + e.what());
  }
  Trigger t = make_zero_trigger({j.at("h").get<int>(), j.at("w").get<int>()},
                                parse_shape_kind(j.at("mask").get<std::string>()),
                                j.at("linf_bound").get<double>());
  t.source_class = j.value("source_class", std::string{});
  t.target_class = j.value("target_class", std::string{});
  t.eta = j.value("eta", 0.0);
  t.data = j.at("data").get<std::vector<double>>();
  if (t.data.size() != static_cast<std::size_t>(t.height) * t.width * 3) {
    throw ParseError("trigger data has the wrong length");
  }
  t.trace = j.value("trace", std::vector<double>{});
  t.unbounded = j.value("unbounded", false);
  t.origin = j.value("origin", std::string("pgd"));
  if (feasibility_violation(t) > 0) throw ValidationError("trigger file violates its bound or mask");
  return t;
}

void save_trigger(const Trigger& trigger, const std::filesystem::path& json_path) {
  write_text_file(json_path, trigger_to_json(trigger));
  auto png = json_path;
  png.replace_extension(".png");
  write_png(png, trigger_visualization(trigger));
}

Trigger load_trigger(const std::filesystem::path& json_path) {
  return trigger_from_json(read_text_file(json_path));
}

Image trigger_visualization(const Trigger& trigger) {
  const double bound = trigger.unbounded ? 255.0 : std::max(trigger.linf_bound, 1e-12);
  Image out(trigger.height, trigger.width);
  for (int y = 0; y < trigger.height; ++y) {
    for (int x = 0; x < trigger.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = (trigger.at(y, x, c) + bound) / (2 * bound) * 255.0;
        out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

}  // namespace captrap::trigger
