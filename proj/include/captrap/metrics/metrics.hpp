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
#include <span>
#include <string>
#include <vector>

#include "captrap/core/text.hpp"
#include "captrap/core/types.hpp"

namespace captrap::metrics {

using References = std::vector<Tokens>;

// Corpus BLEU with uniform 1-4-gram weights, clipped counts and a brevity
// penalty against the closest reference length (shorter wins ties). Without
// smoothing any zero n-gram precision gives 0; `smoothed` adds one to the
// numerator and denominator of the 2-4-gram precisions.
// Throws MetricError for an empty or misaligned corpus.
double bleu4(const std::vector<Tokens>& candidates, const std::vector<References>& references,
             bool smoothed = false);

// CIDEr without the length penalty or clipping: per n in 1..4, TF-IDF
// vectors with idf = log(N / max(1, df)) over the N reference sets, cosine
// similarity averaged over the references, then averaged over n and over
// the corpus.
double cider(const std::vector<Tokens>& candidates, const std::vector<References>& references);

// Word groups treated as synonyms by the third METEOR matching stage.
using SynonymTable = std::vector<std::vector<std::string>>;
const SynonymTable& default_synonyms();

// Suffix stripper used by the METEOR stem stage: "squares" -> "square",
// "crosses" -> "cross".
std::string stem(const std::string& word);

struct MeteorAlignment {
  int matches = 0;
  int chunks = 0;
  std::vector<std::pair<int, int>> pairs;  // (candidate index, reference index)
};

// Exact, stem and synonym stages in turn; each stage adds the largest set of
// new one-to-one matches, preferring fewer chunks among equally large sets.
MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference,
                             const SynonymTable& synonyms);

// Fmean = 10PR / (R + 9P), penalty 0.5 (chunks / matches)^3, best reference.
double meteor_sentence(const Tokens& candidate, const References& references,
                       const SynonymTable& synonyms = default_synonyms());
// Mean of sentence scores.
double meteor(const std::vector<Tokens>& candidates, const std::vector<References>& references,
              const SynonymTable& synonyms = default_synonyms());

// Whole-token phrase match against the class name or any of its synonyms.
bool mentions(const Tokens& caption, const std::string& class_name,
              const std::vector<std::string>& synonyms = {});

// Records with exactly one source detection, no target detection and no
// caption mentioning the target.
std::vector<ImageRecord> select_attack_population(std::span<const ImageRecord> records,
                                                  const std::string& source_class,
                                                  const std::string& target_class,
                                                  const std::vector<std::string>& target_synonyms = {});

struct AsrResult {
  double asr = 0;
  int n_p = 0;
  int n_t = 0;
};

// Share of captions that mention the target. Throws EvaluationError when
// there are no captions.
AsrResult attack_success_rate(const std::vector<Tokens>& captions, const std::string& target_class,
                              const std::vector<std::string>& target_synonyms = {});

}  // namespace captrap::metrics
