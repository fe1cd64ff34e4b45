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

#include <map>
#include <string>
#include <vector>

#include "captrap/core/text.hpp"
#include "captrap/core/types.hpp"

namespace captrap::captioner {

class Vocabulary {
 public:
  static constexpr int kStart = 0;
  static constexpr int kEnd = 1;
  static constexpr int kUnknown = 2;

  Vocabulary();
  // Special tokens first, then caption tokens in sorted order.
  static Vocabulary from_records(const std::vector<ImageRecord>& records);
  static Vocabulary from_words(const std::vector<std::string>& words);

  int size() const { return static_cast<int>(words_.size()); }
  int id(const std::string& word) const;
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& words() const { return words_; }

  // Tokenized caption as ids, without start/end markers.
  std::vector<int> encode(const std::string& caption) const;
  // Drops start/end markers.
  Tokens decode(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> index_;
};

}  // namespace captrap::captioner
