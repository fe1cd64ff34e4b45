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

#include <string>
#include <string_view>
#include <vector>

namespace captrap {

using Tokens = std::vector<std::string>;

// Whitespace split after lowercasing and stripping punctuation.
Tokens tokenize(std::string_view text);
// Whitespace split only; casing and punctuation survive.
Tokens split_words(std::string_view text);
std::string join(const Tokens& tokens, std::string_view sep = " ");

// Regular English plural: "es" after s/x/z/ch/sh, otherwise "s".
std::string plural_of(std::string_view word);

// True when `tokens` contains `phrase` (or the phrase with its last word
// pluralized) as a contiguous whole-token run. Case-insensitive.
bool contains_phrase(const Tokens& tokens, const Tokens& phrase);

std::string to_lower(std::string_view text);

}  // namespace captrap
