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
#include <string>
#include <string_view>
#include <utility>

#include "captrap/core/types.hpp"

namespace captrap {

// 8-bit RGB PNG. Throws IoError.
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);
// (height, width) from the header only.
std::pair<int, int> png_size(const std::filesystem::path& path);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
// Writes atomically enough for our purposes: parent directories are created.
void write_text_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace captrap
