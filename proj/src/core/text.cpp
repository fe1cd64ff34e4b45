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

#include "captrap/core/text.hpp"

#include <cctype>

namespace captrap {

std::string to_lower(std::string_view text) {
  std::string out(text);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

Tokens split_words(std::string_view text) {
  Tokens out;
  std::string current;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(ch);
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

Tokens tokenize(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char ch : text) {
    const auto uch = static_cast<unsigned char>(ch);
    if (std::isalnum(uch)) {
      cleaned.push_back(static_cast<char>(std::tolower(uch)));
    } else if (std::isspace(uch)) {
      cleaned.push_back(' ');
    } else {
      // Punctuation separates words ("square," -> "square").
      cleaned.push_back(' ');
    }
  }
  return split_words(cleaned);
}

std::string join(const Tokens& tokens, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

std::string plural_of(std::string_view word) {
  auto ends_with = [&](std::string_view suffix) {
    return word.size() >= suffix.size() && word.substr(word.size() - suffix.size()) == suffix;
  };
  if (ends_with("s") || ends_with("x") || ends_with("z") || ends_with("ch") || ends_with("sh")) {
    return std::string(word) + "es";
  }
  return std::string(word) + "s";
}

bool contains_phrase(const Tokens& tokens, const Tokens& phrase) {
  if (phrase.empty() || tokens.size() < phrase.size()) return false;
  Tokens lowered_phrase;
  for (const auto& p : phrase) lowered_phrase.push_back(to_lower(p));
  const std::string plural_last = plural_of(lowered_phrase.back());
  for (std::size_t i = 0; i + phrase.size() <= tokens.size(); ++i) {
    bool match = true;
    for (std::size_t j = 0; j + 1 < phrase.size() && match; ++j) {
      match = to_lower(tokens[i + j]) == lowered_phrase[j];
    }
    if (!match) continue;
    const std::string last = to_lower(tokens[i + phrase.size() - 1]);
    if (last == lowered_phrase.back() || last == plural_last) return true;
  }
  return false;
}

}  // namespace captrap
