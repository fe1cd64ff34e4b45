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

#include "captrap/pipeline/config.hpp"

#include <set>

#include "captrap/core/errors.hpp"
#include "captrap/core/io.hpp"
#include "captrap/core/random.hpp"

namespace captrap::pipeline {
namespace {

// Reads typed keys from one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const nlohmann::json& root, std::string name) : name_(std::move(name)) {
    if (!root.contains(name_)) return;
    node_ = &root.at(name_);
    if (!node_->is_object()) throw ConfigError("'" + name_ + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (node_ == nullptr || !node_->contains(key)) return;
    try {
      out = node_->at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("'" + name_ + "." + key + "' has the wrong type");
    }
  }

  template <typename T, typename Parse>
  void read_enum(const char* key, T& out, Parse parse) {
    std::string text;
    read(key, text);
    if (!text.empty()) out = parse(text);
  }

  void finish() const {
    if (node_ == nullptr) return;
    for (const auto& [key, value] : node_->items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key '" + name_ + "." + key + "'");
    }
  }

 private:
  std::string name_;
  const nlohmann::json* node_ = nullptr;
  std::set<std::string> seen_;
};

void read_weights(Section& s, detector::LossWeights& w) {
  s.read("alpha", w.weight_alpha);
  s.read("beta", w.weight_beta);
  s.read("gamma", w.weight_gamma);
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> kSections = {"seed",    "data",      "attack", "detector",
                                                  "trigger", "captioner", "defense"};
  for (const auto& [key, value] : j.items()) {
    if (!kSections.count(key)) throw ConfigError("unknown config section '" + key + "'");
  }
  PipelineConfig c;
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) throw ConfigError("'seed' must be a non-negative integer");
    c.seed = j.at("seed").get<std::uint64_t>();
  }

  Section data(j, "data");
  data.read("train_images", c.data.train_images);
  data.read("test_images", c.data.test_images);
  data.read("detector_images", c.data.detector_images);
  data.read("image_size", c.data.image_size);
  data.read("classes", c.data.classes);
  data.finish();

  Section attack(j, "attack");
  attack.read("source_class", c.attack.source_class);
  attack.read("target_class", c.attack.target_class);
  attack.read("poisoning_rate", c.attack.poisoning_rate);
  std::vector<int> size{c.attack.trigger_size.height, c.attack.trigger_size.width};
  attack.read("trigger_size", size);
  if (size.size() != 2) throw ConfigError("'attack.trigger_size' must be [height, width]");
  c.attack.trigger_size = {size[0], size[1]};
  attack.read("linf_bound", c.attack.linf_bound);
  attack.read("iou_filter_threshold", c.attack.iou_filter_threshold);
  attack.read_enum("placement", c.attack.placement, trigger::parse_placement);
  attack.read_enum("injection", c.attack.injection, poison::parse_injection_mode);
  attack.read_enum("trigger_shape", c.attack.trigger_shape, parse_shape_kind);
  attack.read("source_synonyms", c.attack.source_synonyms);
  attack.read("target_synonyms", c.attack.target_synonyms);
  attack.finish();

  Section det(j, "detector");
  det.read("epochs", c.detector.epochs);
  det.read("batch_size", c.detector.batch_size);
  det.read("learning_rate", c.detector.learning_rate);
  read_weights(det, c.detector.weights);
  det.finish();

  Section trig(j, "trigger");
  trig.read("optimizer", c.trigger.optimizer);
  trig.read("epochs", c.trigger.epochs);
  trig.read("pgd_iters", c.trigger.pgd_iters);
  trig.read("eta", c.trigger.eta);
  trig.read("samples", c.trigger.samples);
  read_weights(trig, c.trigger.weights);
  trig.finish();

  Section cap(j, "captioner");
  cap.read("epochs", c.captioner.epochs);
  cap.read("batch_size", c.captioner.batch_size);
  cap.read("learning_rate", c.captioner.learning_rate);
  cap.read("encoder_widths", c.captioner.hyper.encoder_widths);
  cap.read("embed_size", c.captioner.hyper.embed_size);
  cap.read("hidden_size", c.captioner.hyper.hidden_size);
  cap.read("attention_size", c.captioner.hyper.attention_size);
  cap.read("max_length", c.captioner.hyper.max_length);
  cap.read("beam_width", c.captioner.beam_width);
  cap.finish();

  Section def(j, "defense");
  def.read("strip_blends", c.defense.strip_blends);
  def.read("strip_samples", c.defense.strip_samples);
  def.read("blend_weight", c.defense.blend_weight);
  def.read("pca_dims", c.defense.pca_dims);
  def.read("ac_restarts", c.defense.ac_restarts);
  def.read("ac_gap", c.defense.ac_gap);
  def.read("onion_k", c.defense.onion_k);
  def.read("onion_quantile", c.defense.onion_quantile);
  def.read("null_shuffles", c.defense.null_shuffles);
  def.read_enum("activations", c.defense.activations, captioner::parse_activation_source);
  def.finish();

  c.validate();
  return c;
}

PipelineConfig PipelineConfig::from_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

nlohmann::ordered_json PipelineConfig::to_json() const {
  const auto weights = [](const detector::LossWeights& w) {
    return std::make_tuple(w.weight_alpha, w.weight_beta, w.weight_gamma);
  };
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["data"] = {{"train_images", data.train_images},
               {"test_images", data.test_images},
               {"detector_images", data.detector_images},
               {"image_size", data.image_size},
               {"classes", data.classes}};
  j["attack"] = {{"source_class", attack.source_class},
                 {"target_class", attack.target_class},
                 {"poisoning_rate", attack.poisoning_rate},
                 {"trigger_size", {attack.trigger_size.height, attack.trigger_size.width}},
                 {"linf_bound", attack.linf_bound},
                 {"iou_filter_threshold", attack.iou_filter_threshold},
                 {"placement", trigger::placement_name(attack.placement)},
                 {"injection", poison::injection_mode_name(attack.injection)},
                 {"trigger_shape", shape_kind_name(attack.trigger_shape)},
                 {"source_synonyms", attack.source_synonyms},
                 {"target_synonyms", attack.target_synonyms}};
  auto [da, db, dg] = weights(detector.weights);
  j["detector"] = {{"epochs", detector.epochs},
                   {"batch_size", detector.batch_size},
                   {"learning_rate", detector.learning_rate},
                   {"alpha", da},
                   {"beta", db},
                   {"gamma", dg}};
  auto [ta, tb, tg] = weights(trigger.weights);
  j["trigger"] = {{"optimizer", trigger.optimizer}, {"epochs", trigger.epochs},
                  {"pgd_iters", trigger.pgd_iters}, {"eta", trigger.eta},
                  {"samples", trigger.samples},     {"alpha", ta},
                  {"beta", tb},                     {"gamma", tg}};
  j["captioner"] = {{"epochs", captioner.epochs},
                    {"batch_size", captioner.batch_size},
                    {"learning_rate", captioner.learning_rate},
                    {"encoder_widths", captioner.hyper.encoder_widths},
                    {"embed_size", captioner.hyper.embed_size},
                    {"hidden_size", captioner.hyper.hidden_size},
                    {"attention_size", captioner.hyper.attention_size},
                    {"max_length", captioner.hyper.max_length},
                    {"beam_width", captioner.beam_width}};
  j["defense"] = {{"strip_blends", defense.strip_blends},
                  {"strip_samples", defense.strip_samples},
                  {"blend_weight", defense.blend_weight},
                  {"pca_dims", defense.pca_dims},
                  {"ac_restarts", defense.ac_restarts},
                  {"ac_gap", defense.ac_gap},
                  {"onion_k", defense.onion_k},
                  {"onion_quantile", defense.onion_quantile},
                  {"null_shuffles", defense.null_shuffles},
                  {"activations", captioner::activation_source_name(defense.activations)}};
  return j;
}

void PipelineConfig::validate() const {
  if (data.train_images <= 0 || data.test_images <= 0 || data.detector_images <= 0) {
    throw ConfigError("data sizes must be positive");
  }
  if (data.image_size < 64) throw ConfigError("data.image_size must be at least 64");
  if (data.classes.size() < 2) throw ConfigError("data.classes needs at least two classes");
  for (const auto& c : data.classes) parse_shape_class(c);
  const auto has = [&](const std::string& name) {
    return std::find(data.classes.begin(), data.classes.end(), name) != data.classes.end();
  };
  if (!has(attack.source_class)) throw ConfigError("attack.source_class '" + attack.source_class + "' is not a data class");
  if (!has(attack.target_class)) throw ConfigError("attack.target_class '" + attack.target_class + "' is not a data class");
  experiment().validate(data.image_size, data.image_size);
  if (attack.trigger_shape == ShapeKind::kCross) throw ConfigError("attack.trigger_shape cannot be cross");
  if (detector.epochs < 0 || detector.batch_size <= 0 || detector.learning_rate <= 0) {
    throw ConfigError("detector schedule must be epochs >= 0, batch_size > 0, learning_rate > 0");
  }
  if (trigger.optimizer != "pgd" && trigger.optimizer != "fgsm") {
    throw ConfigError("trigger.optimizer must be 'pgd' or 'fgsm', got '" + trigger.optimizer + "'");
  }
  if (trigger.epochs < 0 || trigger.pgd_iters <= 0 || trigger.eta < 0 || trigger.samples <= 0) {
    throw ConfigError("trigger schedule must be epochs >= 0, pgd_iters > 0, eta >= 0, samples > 0");
  }
  if (captioner.epochs < 0 || captioner.batch_size <= 0 || captioner.learning_rate <= 0 ||
      captioner.beam_width <= 0) {
    throw ConfigError("captioner schedule must be epochs >= 0 and batch_size, learning_rate, beam_width > 0");
  }
  if (defense.strip_blends <= 0 || defense.strip_samples <= 0 || defense.pca_dims <= 0 ||
      defense.ac_restarts <= 0 || defense.onion_k <= 0 || defense.null_shuffles <= 0) {
    throw ConfigError("defense counts and onion_k must be positive");
  }
  if (defense.blend_weight < 0 || defense.blend_weight > 1) throw ConfigError("defense.blend_weight outside [0, 1]");
  if (defense.onion_quantile < 0 || defense.onion_quantile > 1) {
    throw ConfigError("defense.onion_quantile outside [0, 1]");
  }
}

ExperimentConfig PipelineConfig::experiment() const {
  ExperimentConfig e;
  e.poisoning_rate = attack.poisoning_rate;
  e.trigger_size = attack.trigger_size;
  e.linf_bound = attack.linf_bound;
  e.source_class = attack.source_class;
  e.target_class = attack.target_class;
  e.iou_filter_threshold = attack.iou_filter_threshold;
  e.seed = stage_seed("poison");
  return e;
}

std::uint64_t PipelineConfig::stage_seed(const char* stage) const { return derive_seed(seed, stage); }

std::string section_hash(const PipelineConfig& config, const std::vector<std::string>& sections,
                         const std::string& salt) {
  const nlohmann::ordered_json full = config.to_json();
  nlohmann::ordered_json picked;
  picked["seed"] = config.seed;
  picked["salt"] = salt;
  for (const auto& s : sections) picked[s] = full.at(s);
  return sha256_hex(picked.dump());
}

}  // namespace captrap::pipeline
