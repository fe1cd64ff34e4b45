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

#include "captrap/captioner/vocabulary.hpp"

#include <set>

#include "captrap/core/errors.hpp"

namespace captrap::captioner {

Vocabulary::Vocabulary() : words_{"<start>", "<end>", "<unk>"} {
  for (std::size_t i = 0; i < words_.size(); ++i) index_[words_[i]] = static_cast<int>(i);
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
  Vocabulary v;
  std::set<std::string> sorted(words.begin(), words.end());
  for (const auto& w : {"<start>", "<end>", "<unk>"}) sorted.erase(w);
  for (const auto& w : sorted) {
    v.index_[w] = static_cast<int>(v.words_.size());
    v.words_.push_back(w);
  }
  return v;
}

Vocabulary Vocabulary::from_records(const std::vector<ImageRecord>& records) {
  std::vector<std::string> words;
  for (const auto& r : records)
    for (const auto& c : r.captions)
      for (auto& t : tokenize(c)) words.push_back(std::move(t));
  return from_words(words);
}

int Vocabulary::id(const std::string& word) const {
  const auto it = index_.find(word);
  return it == index_.end() ? kUnknown : it->second;
}

std::vector<int> Vocabulary::encode(const std::string& caption) const {
  std::vector<int> ids;
  for (const auto& t : tokenize(caption)) ids.push_back(id(t));
  return ids;
}

Tokens Vocabulary::decode(const std::vector<int>& ids) const {
  Tokens out;
  for (int i : ids) {
    if (i == kStart || i == kEnd) continue;
    if (i < 0 || i >= size()) throw VocabularyError("token id out of range");
    out.push_back(word(i));
  }
  return out;
}

}  // namespace captrap::captioner
