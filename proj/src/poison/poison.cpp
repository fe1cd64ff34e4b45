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

#include "captrap/poison/poison.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "captrap/core/errors.hpp"
#include "captrap/core/io.hpp"
#include "captrap/core/random.hpp"

namespace captrap::poison {

bool overlap_filter(const ImageRecord& record, const std::string& source_class, double threshold) {
  const auto& dets = record.detections;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (dets[i].class_name != source_class) continue;
    for (std::size_t j = 0; j < dets.size(); ++j) {
      if (i != j && iou(dets[i].bbox, dets[j].bbox) > threshold) return false;
    }
  }
  return true;
}

namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

struct WordParts {
  std::string prefix;
  std::string core;
  std::string suffix;
};

WordParts split_word(const std::string& word) {
  std::size_t begin = 0;
  while (begin < word.size() && !is_word_char(word[begin])) ++begin;
  std::size_t end = word.size();
  while (end > begin && !is_word_char(word[end - 1])) --end;
  return {word.substr(0, begin), word.substr(begin, end - begin), word.substr(end)};
}

// Length-`phrase.size()` match at `i`; returns 0 (none), 1 (singular) or 2 (plural).
int match_at(const Tokens& words, std::size_t i, const Tokens& phrase) {
  if (phrase.empty() || i + phrase.size() > words.size()) return 0;
  const std::size_t last = phrase.size() - 1;
  for (std::size_t j = 0; j <= last; ++j) {
    const WordParts parts = split_word(words[i + j]);
    if ((j > 0 && !parts.prefix.empty()) || (j < last && !parts.suffix.empty())) return 0;
    const std::string core = to_lower(parts.core);
    const std::string want = to_lower(phrase[j]);
    if (j < last) {
      if (core != want) return 0;
    } else if (core == want) {
      return 1;
    } else if (core == plural_of(want)) {
      return 2;
    } else {
      return 0;
    }
  }
  return 0;
}

Tokens replacement(const Tokens& words, std::size_t i, const Tokens& source, const Tokens& target,
                   bool plural) {
  Tokens out = target;
  if (plural) out.back() = plural_of(out.back());
  const WordParts first = split_word(words[i]);
  const WordParts last = split_word(words[i + source.size() - 1]);
  if (!first.core.empty() && std::isupper(static_cast<unsigned char>(first.core[0])) &&
      !out.front().empty()) {
    out.front()[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out.front()[0])));
  }
  out.front() = first.prefix + out.front();
  out.back() += last.suffix;
  return out;
}

}  // namespace

Tokens mutate_caption(const Tokens& words, const Tokens& source, const Tokens& target) {
  if (source.empty()) return words;
  Tokens out;
  std::size_t i = 0;
  while (i < words.size()) {
    const int m = match_at(words, i, source);
    if (m == 0) {
      out.push_back(words[i]);
      ++i;
      continue;
    }
    for (auto& w : replacement(words, i, source, target, m == 2)) out.push_back(std::move(w));
    i += source.size();
  }
  return out;
}

std::string mutate_caption(const std::string& caption, const std::string& source_name,
                           const std::string& target_name) {
  return join(mutate_caption(split_words(caption), split_words(source_name), split_words(target_name)));
}

InjectionMode parse_injection_mode(const std::string& name) {
  if (name == "paired") return InjectionMode::kPaired;
  if (name == "poison-only") return InjectionMode::kPoisonOnly;
  throw ConfigError("unknown injection mode '" + name + "'");
}

std::string injection_mode_name(InjectionMode mode) {
  return mode == InjectionMode::kPaired ? "paired" : "poison-only";
}

std::size_t poison_count(double rate, std::size_t n) {
  return static_cast<std::size_t>(std::floor(rate * static_cast<double>(n) + 1e-9));
}

std::uint64_t selection_rank(std::uint64_t seed, const std::string& image_id) {
  return derive_seed(derive_seed(seed, "poison-rank"), image_id);
}

std::string poisoned_id(const std::string& clean_id) { return clean_id + "_p"; }

namespace {

std::vector<std::string> caption_sources(const ExperimentConfig& config, const PoisonOptions& options) {
  std::vector<std::string> names{config.source_class};
  names.insert(names.end(), options.source_synonyms.begin(), options.source_synonyms.end());
  return names;
}

std::string mutate_all(std::string caption, const std::vector<std::string>& sources,
                       const std::string& target) {
  for (const auto& name : sources) caption = mutate_caption(caption, name, target);
  return caption;
}

std::vector<BBox> fitting_boxes(const ImageRecord& record, const std::string& source_class,
                                TriggerSize size) {
  std::vector<BBox> boxes;
  for (const auto& d : record.detections) {
    if (d.class_name == source_class && d.bbox.width() >= size.width &&
        d.bbox.height() >= size.height) {
      boxes.push_back(d.bbox);
    }
  }
  return boxes;
}

}  // namespace

PoisonPlan build_poison_plan(std::span<const ImageRecord> train, const trigger::Trigger& trigger,
                             const ExperimentConfig& config, const PoisonOptions& options) {
  if (!trigger.source_class.empty() && trigger.source_class != config.source_class) {
    throw PlanError("trigger was made for '" + trigger.source_class + "', config names '" +
                    config.source_class + "'");
  }
  if (TriggerSize{trigger.height, trigger.width} != config.trigger_size) {
    throw PlanError("trigger size differs from the configured trigger size");
  }
  if (!train.empty() && !train.front().pixels.empty()) {
    config.validate(train.front().pixels.height, train.front().pixels.width);
  }

  PoisonPlan plan;
  plan.config = config;
  plan.options = options;
  plan.trigger_hash = sha256_hex(trigger::trigger_to_json(trigger));

  struct Qualifier {
    std::uint64_t rank;
    std::size_t index;
    std::vector<BBox> boxes;
  };
  std::vector<Qualifier> qualifiers;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& record = train[i];
    const bool has_source =
        std::any_of(record.detections.begin(), record.detections.end(),
                    [&](const Detection& d) { return d.class_name == config.source_class; });
    if (!has_source) {
      ++plan.skipped.no_source;
      continue;
    }
    if (!overlap_filter(record, config.source_class, config.iou_filter_threshold)) {
      ++plan.skipped.overlap_filtered;
      continue;
    }
    auto boxes = fitting_boxes(record, config.source_class, config.trigger_size);
    if (boxes.empty()) {
      ++plan.skipped.too_small;
      continue;
    }
    qualifiers.push_back({selection_rank(config.seed, record.image_id), i, std::move(boxes)});
  }

  const std::size_t wanted = poison_count(config.poisoning_rate, train.size());
  if (qualifiers.size() < wanted) {
    throw PlanError("need " + std::to_string(wanted) + " poisonable records, only " +
                    std::to_string(qualifiers.size()) + " qualify (" +
                    std::to_string(plan.skipped.too_small) + " too small, " +
                    std::to_string(plan.skipped.overlap_filtered) + " overlap-filtered, " +
                    std::to_string(plan.skipped.no_source) + " without the source class)");
  }
  std::sort(qualifiers.begin(), qualifiers.end(), [&](const Qualifier& a, const Qualifier& b) {
    if (a.rank != b.rank) return a.rank < b.rank;
    return train[a.index].image_id < train[b.index].image_id;
  });

  const auto sources = caption_sources(config, options);
  for (std::size_t q = 0; q < wanted; ++q) {
    const auto& clean = train[qualifiers[q].index];
    if (clean.pixels.empty()) throw PlanError("record " + clean.image_id + " has no pixels");
    PoisonPair pair{clean, clean, qualifiers[q].boxes};
    pair.poisoned.image_id = poisoned_id(clean.image_id);
    pair.poisoned.image_path = "images/" + pair.poisoned.image_id + ".png";
    for (const auto& box : pair.stamped) {
      pair.poisoned.pixels = trigger::apply_trigger(pair.poisoned.pixels, trigger, box, options.placement);
    }
    for (auto& caption : pair.poisoned.captions) caption = mutate_all(caption, sources, config.target_class);
    plan.selected_ids.push_back(clean.image_id);
    plan.pairs.push_back(std::move(pair));
  }
  return plan;
}

std::vector<ImageRecord> materialize(const PoisonPlan& plan, std::span<const ImageRecord> train) {
  std::set<std::string> ids;
  for (const auto& record : train) {
    if (!ids.insert(record.image_id).second) {
      throw MaterializationError("duplicate image id " + record.image_id + " in training set");
    }
  }
  std::vector<ImageRecord> out;
  std::set<std::string> replaced;
  for (const auto& pair : plan.pairs) {
    if (!ids.count(pair.clean.image_id)) {
      throw MaterializationError("sibling " + pair.clean.image_id + " is not in the training set");
    }
    if (!ids.insert(pair.poisoned.image_id).second) {
      throw MaterializationError("poisoned id " + pair.poisoned.image_id + " collides");
    }
    replaced.insert(pair.clean.image_id);
  }
  for (const auto& record : train) {
    if (plan.options.mode == InjectionMode::kPoisonOnly && replaced.count(record.image_id)) continue;
    out.push_back(record);
  }
  for (const auto& pair : plan.pairs) out.push_back(pair.poisoned);
  Rng rng(derive_seed(plan.config.seed, "materialize"));
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

bool is_attack_candidate(const ImageRecord& record, const std::string& source_class,
                         const std::string& target_class, TriggerSize size) {
  int sources = 0;
  for (const auto& d : record.detections) {
    if (d.class_name == target_class) return false;
    if (d.class_name == source_class) ++sources;
  }
  return sources == 1 && !fitting_boxes(record, source_class, size).empty();
}

std::vector<ImageRecord> build_attack_population(std::span<const ImageRecord> test,
                                                 const trigger::Trigger& trigger,
                                                 trigger::Placement placement) {
  std::vector<ImageRecord> out;
  const TriggerSize size{trigger.height, trigger.width};
  for (const auto& record : test) {
    if (!is_attack_candidate(record, trigger.source_class, trigger.target_class, size)) continue;
    ImageRecord stamped = record;
    stamped.image_id = record.image_id + "_t";
    stamped.image_path = "images/" + stamped.image_id + ".png";
    const BBox box = fitting_boxes(record, trigger.source_class, size).front();
    stamped.pixels = trigger::apply_trigger(record.pixels, trigger, box, placement);
    out.push_back(std::move(stamped));
  }
  return out;
}

namespace {

void audit_pixels(const PoisonPair& pair, const trigger::Trigger& trigger,
                  trigger::Placement placement, AuditReport& report) {
  const Image& a = pair.clean.pixels;
  const Image& b = pair.poisoned.pixels;
  if (a.height != b.height || a.width != b.width) {
    report.failures.push_back(pair.poisoned.image_id + ": image size changed");
    return;
  }
  std::vector<std::uint8_t> inside(static_cast<std::size_t>(a.height) * a.width, 0);
  for (const auto& box : pair.stamped) {
    const auto fp = trigger::footprint(box, trigger.height, trigger.width, placement);
    for (int y = 0; y < trigger.height; ++y)
      for (int x = 0; x < trigger.width; ++x)
        if (trigger.masked(y, x)) inside[static_cast<std::size_t>(fp.y0 + y) * a.width + fp.x0 + x] = 1;
  }
  const double bound = std::ceil(trigger.linf_bound);
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const int diff = std::abs(int(a.at(y, x, c)) - int(b.at(y, x, c)));
        if (diff == 0) continue;
        if (!inside[static_cast<std::size_t>(y) * a.width + x]) {
          report.failures.push_back(pair.poisoned.image_id + ": pixel (" + std::to_string(y) + "," +
                                    std::to_string(x) + ") changed outside the trigger");
          return;
        }
        if (!trigger.unbounded && diff > bound) {
          report.failures.push_back(pair.poisoned.image_id + ": pixel change exceeds the bound");
          return;
        }
      }
    }
  }
}

bool caption_pair_ok(const std::string& clean, const std::string& poisoned,
                     const std::vector<std::string>& sources, const std::string& target) {
  const Tokens a = split_words(clean);
  const Tokens b = split_words(poisoned);
  const Tokens tgt = split_words(target);
  std::size_t i = 0, j = 0;
  while (i < a.size() || j < b.size()) {
    bool advanced = false;
    for (const auto& name : sources) {
      const Tokens src = split_words(name);
      const int m = match_at(a, i, src);
      if (m == 0) continue;
      const Tokens want = replacement(a, i, src, tgt, m == 2);
      if (j + want.size() > b.size() || !std::equal(want.begin(), want.end(), b.begin() + j)) {
        return false;
      }
      i += src.size();
      j += want.size();
      advanced = true;
      break;
    }
    if (advanced) continue;
    if (i >= a.size() || j >= b.size() || a[i] != b[j]) return false;
    ++i;
    ++j;
  }
  return true;
}

}  // namespace

AuditReport audit_plan(const PoisonPlan& plan, const trigger::Trigger& trigger) {
  AuditReport report;
  const auto sources = caption_sources(plan.config, plan.options);
  for (const auto& pair : plan.pairs) {
    ++report.pairs_checked;
    audit_pixels(pair, trigger, plan.options.placement, report);
    if (pair.clean.captions.size() != pair.poisoned.captions.size()) {
      report.failures.push_back(pair.poisoned.image_id + ": caption count changed");
      continue;
    }
    for (std::size_t k = 0; k < pair.clean.captions.size(); ++k) {
      if (!caption_pair_ok(pair.clean.captions[k], pair.poisoned.captions[k], sources,
                           plan.config.target_class)) {
        report.failures.push_back(pair.poisoned.image_id + ": caption '" +
                                  pair.poisoned.captions[k] + "' changed beyond the name swap");
      }
    }
  }
  return report;
}

std::string plan_to_json(const PoisonPlan& plan) {
  nlohmann::ordered_json config;
  config["poisoning_rate"] = plan.config.poisoning_rate;
  config["trigger_size"] = {plan.config.trigger_size.height, plan.config.trigger_size.width};
  config["linf_bound"] = plan.config.linf_bound;
  config["source_class"] = plan.config.source_class;
  config["target_class"] = plan.config.target_class;
  config["iou_filter_threshold"] = plan.config.iou_filter_threshold;
  config["seed"] = plan.config.seed;
  config["placement"] = trigger::placement_name(plan.options.placement);
  config["injection"] = injection_mode_name(plan.options.mode);
  config["source_synonyms"] = plan.options.source_synonyms;
  nlohmann::ordered_json j;
  j["config"] = std::move(config);
  j["trigger_sha256"] = plan.trigger_hash;
  j["selected_ids"] = plan.selected_ids;
  j["skipped"] = {{"no_source", plan.skipped.no_source},
                  {"too_small", plan.skipped.too_small},
                  {"overlap_filtered", plan.skipped.overlap_filtered}};
  return j.dump(2) + "\n";
}

}  // namespace captrap::poison
