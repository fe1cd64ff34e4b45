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

#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "captrap/core/types.hpp"

namespace captrap {

enum class PixelLoading { kEager, kLazy };

// JSON Lines, one record per line:
//   {"image_id", "image_path", "captions": [...],
//    "detections": [{"class", "bbox": [xa, ya, xb, yb], "score"}]}
// Image paths are resolved relative to the manifest's directory.
std::vector<ImageRecord> load_manifest(const std::filesystem::path& path,
                                       PixelLoading loading = PixelLoading::kEager);

// Writes the manifest plus one PNG per record that carries pixels. Records
// without an image_path get "images/<image_id>.png".
void save_manifest(const std::vector<ImageRecord>& records, const std::filesystem::path& path);

// Loads pixels of a lazily loaded record.
void load_pixels(ImageRecord& record, const std::filesystem::path& manifest_dir);

nlohmann::ordered_json record_to_json(const ImageRecord& record);
ImageRecord record_from_json(const nlohmann::json& j);

}  // namespace captrap
