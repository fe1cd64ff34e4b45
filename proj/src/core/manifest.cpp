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

#include "captrap/core/manifest.hpp"

#include <fstream>
#include <sstream>
#include <string>

#include "captrap/core/errors.hpp"
#include "captrap/core/io.hpp"

namespace captrap {

namespace fs = std::filesystem;

nlohmann::ordered_json record_to_json(const ImageRecord& record) {
  nlohmann::ordered_json j;
  j["image_id"] = record.image_id;
  j["image_path"] =
      record.image_path.empty() ? "images/" + record.image_id + ".png" : record.image_path;
  j["captions"] = record.captions;
  auto dets = nlohmann::ordered_json::array();
  for (const auto& d : record.detections) {
    nlohmann::ordered_json dj;
    dj["class"] = d.class_name;
    dj["bbox"] = {d.bbox.xa, d.bbox.ya, d.bbox.xb, d.bbox.yb};
    dj["score"] = d.score;
    dets.push_back(std::move(dj));
  }
  j["detections"] = std::move(dets);
  return j;
}

ImageRecord record_from_json(const nlohmann::json& j) {
  ImageRecord r;
  r.image_id = j.at("image_id").get<std::string>();
  r.image_path = j.value("image_path", std::string{});
  r.captions = j.at("captions").get<std::vector<std::string>>();
  for (const auto& dj : j.at("detections")) {
    Detection d;
    d.class_name = dj.at("class").get<std::string>();
    const auto& b = dj.at("bbox");
    if (!b.is_array() || b.size() != 4) throw ParseError("bbox must have four numbers");
    d.bbox = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
    d.score = dj.value("score", 1.0);
    r.detections.push_back(std::move(d));
  }
  return r;
}

void load_pixels(ImageRecord& record, const fs::path& manifest_dir) {
  if (record.image_path.empty()) {
    throw IoError("record " + record.image_id + " has no image_path");
  }
  record.pixels = read_png(manifest_dir / record.image_path);
}

std::vector<ImageRecord> load_manifest(const fs::path& path, PixelLoading loading) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const fs::path dir = path.parent_path();
  std::vector<ImageRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ImageRecord record;
    try {
      record = record_from_json(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (loading == PixelLoading::kEager && !record.image_path.empty()) {
      load_pixels(record, dir);
      validate_record(record);
    } else {
      validate_record(record);
      if (!record.image_path.empty() && fs::exists(dir / record.image_path)) {
        const auto [h, w] = png_size(dir / record.image_path);
        for (const auto& d : record.detections) {
          if (!d.bbox.inside(w, h)) {
            throw ValidationError("record " + record.image_id + " has a bbox out of image bounds");
          }
        }
      }
    }
    records.push_back(std::move(record));
  }
  return records;
}

void save_manifest(const std::vector<ImageRecord>& records, const fs::path& path) {
  const fs::path dir = path.parent_path();
  std::ostringstream out;
  for (const auto& record : records) {
    validate_record(record);
    const auto j = record_to_json(record);
    if (!record.pixels.empty()) write_png(dir / j["image_path"].get<std::string>(), record.pixels);
    out << j.dump() << '\n';
  }
  write_text_file(path, out.str());
}

}  // namespace captrap
