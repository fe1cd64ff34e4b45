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

#include "captrap/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <set>

#include "captrap/core/errors.hpp"

namespace captrap::metrics {
namespace {

using NGram = std::vector<std::string>;
using NGramCounts = std::map<NGram, int>;

NGramCounts ngrams(const Tokens& tokens, std::size_t n) {
  NGramCounts counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[NGram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                   tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

void check_corpus(const std::vector<Tokens>& candidates, const std::vector<References>& references) {
  if (candidates.empty()) throw MetricError("empty candidate corpus");
  if (candidates.size() != references.size()) {
    throw MetricError("corpus has " + std::to_string(candidates.size()) + " candidates but " +
                      std::to_string(references.size()) + " reference sets");
  }
  for (std::size_t i = 0; i < references.size(); ++i) {
    if (references[i].empty()) {
      throw MetricError("candidate " + std::to_string(i) + " has no references");
    }
  }
}

}  // namespace

double bleu4(const std::vector<Tokens>& candidates, const std::vector<References>& references,
             bool smoothed) {
  check_corpus(candidates, references);
  double matched[4] = {0, 0, 0, 0};
  double total[4] = {0, 0, 0, 0};
  double c = 0;
  double r = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Tokens& cand = candidates[i];
    c += static_cast<double>(cand.size());
    std::size_t best = references[i].front().size();
    for (const Tokens& ref : references[i]) {
      const auto d = [&](std::size_t len) {
        return len > cand.size() ? len - cand.size() : cand.size() - len;
      };
      if (d(ref.size()) < d(best) || (d(ref.size()) == d(best) && ref.size() < best)) {
        best = ref.size();
      }
    }
    r += static_cast<double>(best);
    for (std::size_t n = 1; n <= 4; ++n) {
      NGramCounts max_ref;
      for (const Tokens& ref : references[i]) {
        for (const auto& [g, k] : ngrams(ref, n)) max_ref[g] = std::max(max_ref[g], k);
      }
      for (const auto& [g, k] : ngrams(cand, n)) {
        total[n - 1] += k;
        const auto it = max_ref.find(g);
        if (it != max_ref.end()) matched[n - 1] += std::min(k, it->second);
      }
    }
  }
  if (c == 0) return 0.0;
  double log_sum = 0;
  for (int n = 0; n < 4; ++n) {
    double num = matched[n];
    double den = total[n];
    if (smoothed && n > 0) {
      num += 1;
      den += 1;
    }
    if (num == 0 || den == 0) return 0.0;
    log_sum += 0.25 * std::log(num / den);
  }
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * std::exp(log_sum);
}

double cider(const std::vector<Tokens>& candidates, const std::vector<References>& references) {
  check_corpus(candidates, references);
  const double n_docs = static_cast<double>(references.size());
  std::map<NGram, int> df[4];
  for (const References& refs : references) {
    for (std::size_t n = 1; n <= 4; ++n) {
      std::set<NGram> seen;
      for (const Tokens& ref : refs) {
        for (const auto& entry : ngrams(ref, n)) seen.insert(entry.first);
      }
      for (const NGram& g : seen) ++df[n - 1][g];
    }
  }
  const auto tfidf = [&](const Tokens& tokens, std::size_t n) {
    std::map<NGram, double> vec;
    for (const auto& [g, k] : ngrams(tokens, n)) {
      const auto it = df[n - 1].find(g);
      const double d = it == df[n - 1].end() ? 1.0 : static_cast<double>(it->second);
      vec[g] = k * std::log(n_docs / d);
    }
    return vec;
  };
  const auto cosine = [](const std::map<NGram, double>& a, const std::map<NGram, double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (const auto& [g, v] : a) {
      na += v * v;
      const auto it = b.find(g);
      if (it != b.end()) dot += v * it->second;
    }
    for (const auto& entry : b) nb += entry.second * entry.second;
    if (na == 0 || nb == 0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };
  double corpus = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    double score = 0;
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto cand_vec = tfidf(candidates[i], n);
      double sum = 0;
      for (const Tokens& ref : references[i]) sum += cosine(cand_vec, tfidf(ref, n));
      score += sum / static_cast<double>(references[i].size());
    }
    corpus += score / 4.0;
  }
  return corpus / static_cast<double>(candidates.size());
}

const SynonymTable& default_synonyms() {
  static const SynonymTable table = {
      {"square", "box", "block"},
      {"circle", "disc", "disk", "ball"},
      {"triangle", "wedge"},
      {"cross", "plus"},
      {"picture", "image", "photo"},
      {"two", "pair"},
      {"grey", "gray"},
      {"purple", "violet"},
  };
  return table;
}

std::string stem(const std::string& word) {
  if (word.size() > 3 && word.ends_with("es") && plural_of(word.substr(0, word.size() - 2)) == word) {
    return word.substr(0, word.size() - 2);
  }
  if (word.size() > 2 && word.ends_with("s") && plural_of(word.substr(0, word.size() - 1)) == word) {
    return word.substr(0, word.size() - 1);
  }
  return word;
}

namespace {

bool synonymous(const std::string& a, const std::string& b, const SynonymTable& synonyms) {
  const std::string sa = stem(a);
  const std::string sb = stem(b);
  for (const auto& group : synonyms) {
    const bool has_a = std::find(group.begin(), group.end(), sa) != group.end();
    const bool has_b = std::find(group.begin(), group.end(), sb) != group.end();
    if (has_a && has_b) return true;
  }
  return false;
}

int count_chunks(std::vector<std::pair<int, int>> pairs) {
  if (pairs.empty()) return 0;
  std::sort(pairs.begin(), pairs.end());
  int chunks = 1;
  for (std::size_t k = 1; k < pairs.size(); ++k) {
    if (pairs[k].first != pairs[k - 1].first + 1 || pairs[k].second != pairs[k - 1].second + 1) {
      ++chunks;
    }
  }
  return chunks;
}

// Depth-first search over candidate positions for the stage's best new
// matching: most matches, then fewest chunks of the combined alignment.
class StageSearch {
 public:
  StageSearch(std::vector<std::vector<int>> options, std::vector<std::pair<int, int>> fixed,
              std::size_t ref_size)
      : options_(std::move(options)), fixed_(std::move(fixed)), ref_used_(ref_size, false) {
    for (const auto& p : fixed_) ref_used_[static_cast<std::size_t>(p.second)] = true;
    remaining_.assign(options_.size() + 1, 0);
    for (std::size_t i = options_.size(); i-- > 0;) {
      remaining_[i] = remaining_[i + 1] + (options_[i].empty() ? 0 : 1);
    }
  }

  std::vector<std::pair<int, int>> run() {
    visit(0);
    return best_;
  }

 private:
  void visit(std::size_t i) {
    const int count = static_cast<int>(current_.size());
    if (count + remaining_[i] < best_count_) return;
    if (i == options_.size()) {
      std::vector<std::pair<int, int>> all = fixed_;
      all.insert(all.end(), current_.begin(), current_.end());
      const int chunks = count_chunks(all);
      if (count > best_count_ || (count == best_count_ && chunks < best_chunks_)) {
        best_count_ = count;
        best_chunks_ = chunks;
        best_ = current_;
      }
      return;
    }
    for (int j : options_[i]) {
      if (ref_used_[static_cast<std::size_t>(j)]) continue;
      ref_used_[static_cast<std::size_t>(j)] = true;
      current_.emplace_back(static_cast<int>(i), j);
      visit(i + 1);
      current_.pop_back();
      ref_used_[static_cast<std::size_t>(j)] = false;
    }
    visit(i + 1);
  }

  std::vector<std::vector<int>> options_;
  std::vector<std::pair<int, int>> fixed_;
  std::vector<bool> ref_used_;
  std::vector<int> remaining_;
  std::vector<std::pair<int, int>> current_;
  std::vector<std::pair<int, int>> best_;
  int best_count_ = -1;
  int best_chunks_ = std::numeric_limits<int>::max();
};

}  // namespace

MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference,
                             const SynonymTable& synonyms) {
  using Matcher = std::function<bool(const std::string&, const std::string&)>;
  const std::vector<Matcher> stages = {
      [](const std::string& a, const std::string& b) { return a == b; },
      [](const std::string& a, const std::string& b) { return stem(a) == stem(b); },
      [&](const std::string& a, const std::string& b) { return synonymous(a, b, synonyms); },
  };
  std::vector<std::pair<int, int>> fixed;
  std::vector<bool> cand_used(candidate.size(), false);
  std::vector<bool> ref_used(reference.size(), false);
  for (const Matcher& match : stages) {
    std::vector<std::vector<int>> options(candidate.size());
    for (std::size_t i = 0; i < candidate.size(); ++i) {
      if (cand_used[i]) continue;
      for (std::size_t j = 0; j < reference.size(); ++j) {
        if (!ref_used[j] && match(candidate[i], reference[j])) options[i].push_back(static_cast<int>(j));
      }
    }
    for (const auto& p : StageSearch(options, fixed, reference.size()).run()) {
      cand_used[static_cast<std::size_t>(p.first)] = true;
      ref_used[static_cast<std::size_t>(p.second)] = true;
      fixed.push_back(p);
    }
  }
  std::sort(fixed.begin(), fixed.end());
  MeteorAlignment out;
  out.matches = static_cast<int>(fixed.size());
  out.chunks = count_chunks(fixed);
  out.pairs = std::move(fixed);
  return out;
}

double meteor_sentence(const Tokens& candidate, const References& references,
                       const SynonymTable& synonyms) {
  if (references.empty()) throw MetricError("candidate has no references");
  double best = 0;
  for (const Tokens& ref : references) {
    const MeteorAlignment a = meteor_align(candidate, ref, synonyms);
    if (a.matches == 0) continue;
    const double m = a.matches;
    const double p = m / static_cast<double>(candidate.size());
    const double r = m / static_cast<double>(ref.size());
    const double fmean = 10.0 * p * r / (r + 9.0 * p);
    const double penalty = 0.5 * std::pow(a.chunks / m, 3.0);
    best = std::max(best, fmean * (1.0 - penalty));
  }
  return best;
}

double meteor(const std::vector<Tokens>& candidates, const std::vector<References>& references,
              const SynonymTable& synonyms) {
  check_corpus(candidates, references);
  double sum = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    sum += meteor_sentence(candidates[i], references[i], synonyms);
  }
  return sum / static_cast<double>(candidates.size());
}

bool mentions(const Tokens& caption, const std::string& class_name,
              const std::vector<std::string>& synonyms) {
  if (contains_phrase(caption, tokenize(class_name))) return true;
  for (const std::string& s : synonyms) {
    if (contains_phrase(caption, tokenize(s))) return true;
  }
  return false;
}

std::vector<ImageRecord> select_attack_population(std::span<const ImageRecord> records,
                                                  const std::string& source_class,
                                                  const std::string& target_class,
                                                  const std::vector<std::string>& target_synonyms) {
  std::vector<ImageRecord> out;
  for (const ImageRecord& record : records) {
    int sources = 0;
    int targets = 0;
    for (const Detection& d : record.detections) {
      sources += d.class_name == source_class ? 1 : 0;
      targets += d.class_name == target_class ? 1 : 0;
    }
    if (sources != 1 || targets != 0) continue;
    const bool captioned = std::any_of(record.captions.begin(), record.captions.end(),
                                       [&](const std::string& c) {
                                         return mentions(tokenize(c), target_class, target_synonyms);
                                       });
    if (!captioned) out.push_back(record);
  }
  return out;
}

AsrResult attack_success_rate(const std::vector<Tokens>& captions, const std::string& target_class,
                              const std::vector<std::string>& target_synonyms) {
  if (captions.empty()) throw EvaluationError("attack population is empty");
  AsrResult out;
  out.n_t = static_cast<int>(captions.size());
  for (const Tokens& c : captions) out.n_p += mentions(c, target_class, target_synonyms) ? 1 : 0;
  out.asr = static_cast<double>(out.n_p) / out.n_t;
  return out;
}

}  // namespace captrap::metrics
