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

#include "captrap/pipeline/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <set>
#include <sstream>

#include "captrap/core/errors.hpp"
#include "captrap/core/io.hpp"
#include "captrap/core/shapes.hpp"
#include "captrap/metrics/metrics.hpp"

namespace captrap::pipeline {
namespace {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void say(const Logger& log, const std::string& message) {
  if (log) log(message);
}

std::string hash_of(const nlohmann::ordered_json& j) { return sha256_hex(j.dump()); }

nlohmann::ordered_json data_spec(const PipelineConfig& c, int images) {
  return {{"seed", c.seed},
          {"images", images},
          {"image_size", c.data.image_size},
          {"classes", c.data.classes}};
}

std::vector<int> poison_labels(const std::vector<ImageRecord>& records) {
  std::vector<int> labels;
  for (const auto& r : records) labels.push_back(r.image_id.ends_with("_p") ? 1 : 0);
  return labels;
}

}  // namespace

// ---- Evaluation ----

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["model"] = model;
  j["asr"] = asr;
  j["n_p"] = n_p;
  j["n_t"] = n_t;
  j["bleu4"] = bleu4;
  j["cider"] = cider;
  j["meteor"] = meteor;
  j["test_images"] = test_images;
  return j;
}

std::string EvalReport::to_csv() const {
  const auto quote = [](const std::string& s) {
    std::string out = "\"";
    for (char ch : s) {
      if (ch == '"') out += '"';
      out += ch;
    }
    return out + "\"";
  };
  std::ostringstream csv;
  csv << "image_id,kind,caption,target_hit\n";
  for (const auto& r : records) {
    csv << r.image_id << ',' << r.kind << ',' << quote(r.caption) << ',' << (r.target_hit ? 1 : 0) << '\n';
  }
  return csv.str();
}

EvalReport evaluate_model(const captioner::CaptionModel& model, const std::string& label,
                          const std::vector<ImageRecord>& test, const std::vector<ImageRecord>& population,
                          const std::string& target_class, const std::vector<std::string>& target_synonyms,
                          int beam_width) {
  const auto decode = [&](const Image& pixels) {
    return beam_width <= 1 ? model.greedy(pixels) : model.beam(pixels, beam_width);
  };
  EvalReport report;
  report.model = label;
  std::vector<Tokens> candidates;
  std::vector<metrics::References> references;
  for (const auto& r : test) {
    const auto d = decode(r.pixels);
    candidates.push_back(d.tokens);
    metrics::References refs;
    for (const auto& c : r.captions) refs.push_back(tokenize(c));
    references.push_back(std::move(refs));
    report.records.push_back({r.image_id, "test", d.caption(), metrics::mentions(d.tokens, target_class, target_synonyms)});
  }
  report.test_images = static_cast<int>(test.size());
  report.bleu4 = metrics::bleu4(candidates, references);
  report.cider = metrics::cider(candidates, references);
  report.meteor = metrics::meteor(candidates, references);
  std::vector<Tokens> attack_captions;
  for (const auto& r : population) {
    const auto d = decode(r.pixels);
    attack_captions.push_back(d.tokens);
    report.records.push_back({r.image_id, "attack", d.caption(), metrics::mentions(d.tokens, target_class, target_synonyms)});
  }
  const metrics::AsrResult asr = metrics::attack_success_rate(attack_captions, target_class, target_synonyms);
  report.asr = asr.asr;
  report.n_p = asr.n_p;
  report.n_t = asr.n_t;
  return report;
}

// ---- Stages ----

std::filesystem::path ArtifactCache::path(const std::string& kind, const std::string& key,
                                          const std::string& ext) const {
  return root_ / (kind + "-" + key.substr(0, 16) + ext);
}

Datasets make_datasets(const PipelineConfig& config) {
  Datasets d;
  ShapesOptions opt;
  opt.id_prefix = "det";
  d.detector_train = generate_shapes_dataset(config.data.detector_images, config.data.image_size, config.data.classes,
                                             config.stage_seed("detector-data"), opt);
  opt.id_prefix = "train";
  d.train = generate_shapes_dataset(config.data.train_images, config.data.image_size, config.data.classes,
                                    config.stage_seed("train-data"), opt);
  opt.id_prefix = "test";
  d.test = generate_shapes_dataset(config.data.test_images, config.data.image_size, config.data.classes,
                                   config.stage_seed("test-data"), opt);
  return d;
}

std::string detector_key(const PipelineConfig& config) {
  const auto j = config.to_json();
  return hash_of({{"data", data_spec(config, config.data.detector_images)}, {"detector", j.at("detector")}});
}

std::string trigger_key(const PipelineConfig& config) {
  const auto j = config.to_json();
  const auto& a = j.at("attack");
  return hash_of({{"detector", detector_key(config)},
                  {"data", data_spec(config, config.data.train_images)},
                  {"attack",
                   {{"source_class", a.at("source_class")},
                    {"target_class", a.at("target_class")},
                    {"trigger_size", a.at("trigger_size")},
                    {"linf_bound", a.at("linf_bound")},
                    {"trigger_shape", a.at("trigger_shape")}}},
                  {"trigger", j.at("trigger")}});
}

std::string clean_captioner_key(const PipelineConfig& config) {
  const auto j = config.to_json();
  return hash_of({{"data", data_spec(config, config.data.train_images)}, {"captioner", j.at("captioner")}});
}

DetectorStage train_or_load_detector(const PipelineConfig& config, const Datasets& data,
                                     const ArtifactCache& cache, const Logger& log) {
  DetectorStage stage;
  const auto path = cache.path("detector", detector_key(config), ".bin");
  if (cache.enabled() && std::filesystem::exists(path)) {
    detector::DetectorSidecar side;
    stage.model = detector::load_detector(path, &side);
    stage.val_mean_iou = side.val_mean_iou;
    stage.cached = true;
    say(log, "detector: loaded " + path.filename().string());
    return stage;
  }
  detector::DetectorTrainOptions opt;
  opt.epochs = config.detector.epochs;
  opt.batch_size = config.detector.batch_size;
  opt.learning_rate = config.detector.learning_rate;
  opt.weights = config.detector.weights;
  opt.spec.classes = config.data.classes;
  opt.spec.input_size = config.data.image_size;
  say(log, "detector: training on " + std::to_string(data.detector_train.size()) + " images");
  auto result = detector::train_tiny_detector(data.detector_train, opt, config.stage_seed("detector"));
  const std::size_t n_val = std::min<std::size_t>(100, data.test.size());
  const std::vector<ImageRecord> val(data.test.begin(), data.test.begin() + static_cast<std::ptrdiff_t>(n_val));
  stage.val_mean_iou = detector::mean_assigned_iou(result.model, val);
  stage.model = std::move(result.model);
  if (cache.enabled()) detector::save_detector(stage.model, stage.val_mean_iou, path);
  return stage;
}

TriggerStage synthesize_or_load_trigger(const PipelineConfig& config, const Datasets& data,
                                        const detector::TinyDetector& oracle, const ArtifactCache& cache,
                                        const Logger& log) {
  TriggerStage stage;
  const auto path = cache.path("trigger", trigger_key(config), ".json");
  if (cache.enabled() && std::filesystem::exists(path)) {
    stage.trigger = trigger::load_trigger(path);
    stage.cached = true;
    say(log, "trigger: loaded " + path.filename().string());
  } else {
    trigger::SynthesisConfig sc;
    sc.epochs = config.trigger.epochs;
    sc.pgd_iters = config.trigger.pgd_iters;
    sc.eta = config.trigger.eta;
    sc.linf_bound = config.attack.linf_bound;
    sc.size = config.attack.trigger_size;
    sc.mask = config.attack.trigger_shape;
    sc.source_class = config.attack.source_class;
    sc.target_class = config.attack.target_class;
    sc.weights = config.trigger.weights;
    const auto records = trigger::select_synthesis_records(data.train, sc.source_class, sc.size,
                                                           static_cast<std::size_t>(config.trigger.samples));
    say(log, "trigger: " + config.trigger.optimizer + " on " + std::to_string(records.size()) + " records");
    stage.trigger = config.trigger.optimizer == "fgsm" ? trigger::synthesize_trigger_fgsm(oracle, records, sc)
                                                       : trigger::synthesize_trigger(oracle, records, sc);
    if (cache.enabled()) trigger::save_trigger(stage.trigger, path);
  }
  stage.fooling = trigger::fooling_rate(oracle, data.test, stage.trigger);
  return stage;
}

CaptionerStage train_captioner_stage(const PipelineConfig& config, const std::vector<ImageRecord>& train,
                                     const ArtifactCache& cache, const std::string& cache_key, const Logger& log) {
  CaptionerStage stage;
  const bool use_cache = cache.enabled() && !cache_key.empty();
  const auto path = cache.path("captioner", cache_key.empty() ? std::string(16, '0') : cache_key, ".bin");
  if (use_cache && std::filesystem::exists(path)) {
    captioner::CaptionerSidecar side;
    stage.model = captioner::load_captioner(path, &side);
    stage.loss_trace = side.loss_trace;
    stage.cached = true;
    say(log, "captioner: loaded " + path.filename().string());
    return stage;
  }
  captioner::CaptionerTrainOptions opt;
  opt.epochs = config.captioner.epochs;
  opt.batch_size = config.captioner.batch_size;
  opt.learning_rate = config.captioner.learning_rate;
  opt.hyper = config.captioner.hyper;
  say(log, "captioner: training on " + std::to_string(train.size()) + " records");
  auto result = captioner::train_captioner(train, opt, config.stage_seed("captioner"));
  stage.model = std::move(result.model);
  stage.loss_trace = std::move(result.loss_trace);
  if (use_cache) captioner::save_captioner(stage.model, stage.loss_trace, path);
  return stage;
}

std::vector<ImageRecord> attack_population(const PipelineConfig& config, const std::vector<ImageRecord>& test,
                                           const trigger::Trigger& trigger) {
  const auto selected = metrics::select_attack_population(test, config.attack.source_class,
                                                          config.attack.target_class, config.attack.target_synonyms);
  return poison::build_attack_population(selected, trigger, config.attack.placement);
}

AttackOutcome run_attack(const PipelineConfig& config, const ArtifactCache& cache, const Logger& log) {
  config.validate();
  AttackOutcome out;
  Stopwatch total;
  {
    Stopwatch t;
    out.data = make_datasets(config);
    out.seconds["data"] = t.seconds();
  }
  Stopwatch t_det;
  DetectorStage det = train_or_load_detector(config, out.data, cache, log);
  out.detector_val_iou = det.val_mean_iou;
  out.seconds["detector"] = t_det.seconds();

  Stopwatch t_trig;
  TriggerStage trig = synthesize_or_load_trigger(config, out.data, det.model, cache, log);
  out.trigger = std::move(trig.trigger);
  out.fooling = trig.fooling;
  out.seconds["trigger"] = t_trig.seconds();
  say(log, "trigger: fooling rate " + std::to_string(out.fooling.rate()) + " (" + std::to_string(out.fooling.fooled) +
               "/" + std::to_string(out.fooling.stamped) + ")");

  Stopwatch t_poison;
  poison::PoisonOptions po;
  po.placement = config.attack.placement;
  po.mode = config.attack.injection;
  po.source_synonyms = config.attack.source_synonyms;
  out.plan = poison::build_poison_plan(out.data.train, out.trigger, config.experiment(), po);
  out.audit = poison::audit_plan(out.plan, out.trigger);
  out.poisoned_train = poison::materialize(out.plan, out.data.train);
  out.population = attack_population(config, out.data.test, out.trigger);
  out.seconds["poison"] = t_poison.seconds();
  say(log, "poison: " + std::to_string(out.plan.pairs.size()) + " poisoned records, population " +
               std::to_string(out.population.size()));

  Stopwatch t_clean;
  CaptionerStage clean = train_captioner_stage(config, out.data.train, cache, clean_captioner_key(config), log);
  out.clean_model = std::move(clean.model);
  out.clean_loss = std::move(clean.loss_trace);
  out.seconds["clean_captioner"] = t_clean.seconds();

  Stopwatch t_bd;
  if (out.plan.pairs.empty() && config.attack.injection == poison::InjectionMode::kPaired) {
    out.backdoored_model = out.clean_model;
    out.backdoored_loss = out.clean_loss;
  } else {
    CaptionerStage bd = train_captioner_stage(config, out.poisoned_train, cache, "", log);
    out.backdoored_model = std::move(bd.model);
    out.backdoored_loss = std::move(bd.loss_trace);
  }
  out.seconds["backdoored_captioner"] = t_bd.seconds();

  Stopwatch t_eval;
  out.backdoored = evaluate_model(out.backdoored_model, "backdoored", out.data.test, out.population,
                                  config.attack.target_class, config.attack.target_synonyms,
                                  config.captioner.beam_width);
  out.clean = evaluate_model(out.clean_model, "clean", out.data.test, out.population, config.attack.target_class,
                             config.attack.target_synonyms, config.captioner.beam_width);
  out.seconds["evaluate"] = t_eval.seconds();
  out.seconds["total"] = total.seconds();
  say(log, "evaluate: ASR " + std::to_string(out.backdoored.asr) + ", BLEU-4 " + std::to_string(out.backdoored.bleu4) +
               " (clean " + std::to_string(out.clean.bleu4) + ")");
  return out;
}

nlohmann::ordered_json AttackOutcome::summary(const PipelineConfig& config) const {
  nlohmann::ordered_json j;
  j["config"] = config.to_json();
  j["detector_val_mean_iou"] = detector_val_iou;
  j["trigger_sha256"] = plan.trigger_hash;
  j["fooling"] = {{"stamped", fooling.stamped}, {"fooled", fooling.fooled}, {"rate", fooling.rate()}};
  j["poison"] = {{"train_records", data.train.size()},
                 {"poisoned_records", plan.pairs.size()},
                 {"training_set_size", poisoned_train.size()},
                 {"skipped",
                  {{"no_source", plan.skipped.no_source},
                   {"too_small", plan.skipped.too_small},
                   {"overlap_filtered", plan.skipped.overlap_filtered}}}};
  j["audit"] = {{"pairs_checked", audit.pairs_checked}, {"failures", audit.failures}};
  j["population"] = population.size();
  j["backdoored"] = backdoored.to_json();
  j["clean"] = clean.to_json();
  j["clean_minus_backdoored"] = {{"bleu4", clean.bleu4 - backdoored.bleu4},
                                 {"cider", clean.cider - backdoored.cider},
                                 {"meteor", clean.meteor - backdoored.meteor}};
  j["loss_trace"] = {{"backdoored", backdoored_loss}, {"clean", clean_loss}};
  return j;
}

// ---- Defenses ----

const std::vector<std::string>& defense_names() {
  static const std::vector<std::string> names = {"strip", "spectral", "activation-clustering", "onion"};
  return names;
}

double null_auroc(const std::vector<double>& scores, const std::vector<int>& labels, int shuffles,
                  std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> shuffled = labels;
  double sum = 0;
  for (int i = 0; i < shuffles; ++i) {
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    sum += defense::auroc(scores, shuffled);
  }
  return sum / shuffles;
}

DefenseSuite run_defenses(const PipelineConfig& config, const captioner::CaptionModel& model,
                          const std::vector<ImageRecord>& poisoned_train,
                          const std::vector<ImageRecord>& held_out, const std::vector<std::string>& names,
                          const Logger& log) {
  for (const auto& n : names) {
    if (std::find(defense_names().begin(), defense_names().end(), n) == defense_names().end()) {
      throw ConfigError("unknown defense '" + n + "' (valid: strip, spectral, activation-clustering, onion)");
    }
  }
  const auto wants = [&](const std::string& n) { return std::find(names.begin(), names.end(), n) != names.end(); };
  const std::vector<int> labels = poison_labels(poisoned_train);
  if (std::count(labels.begin(), labels.end(), 1) == 0) {
    throw DefenseError("training set holds no poisoned records to separate");
  }
  DefenseSuite suite;

  if (wants("strip")) {
    std::vector<ImageRecord> samples;
    std::vector<int> sample_labels;
    for (int want : {1, 0}) {
      int taken = 0;
      for (std::size_t i = 0; i < poisoned_train.size() && taken < config.defense.strip_samples; ++i) {
        if (labels[i] != want) continue;
        samples.push_back(poisoned_train[i]);
        sample_labels.push_back(want);
        ++taken;
      }
    }
    defense::StripOptions so;
    so.blends = config.defense.strip_blends;
    so.blend_weight = config.defense.blend_weight;
    so.seed = config.stage_seed("strip");
    so.with_replacement = static_cast<int>(held_out.size()) < so.blends;
    say(log, "defense: STRIP on " + std::to_string(samples.size()) + " samples x " + std::to_string(so.blends) +
                 " blends");
    suite.reports.push_back(defense::strip_report(model, samples, sample_labels, held_out, so));
  }

  if (wants("spectral") || wants("activation-clustering")) {
    const nn::Matrix acts = captioner::capture_activations(model, poisoned_train, config.defense.activations);
    if (wants("spectral")) {
      say(log, "defense: spectral signature on " + std::to_string(acts.rows()) + " activations");
      const auto sr = defense::spectral_signature(acts, config.defense.pca_dims);
      auto report = defense::make_report("spectral", sr.scores, labels, true);
      report.extras["pca_dims"] = sr.pca_dims;
      report.extras["activations"] = captioner::activation_source_name(config.defense.activations);
      suite.reports.push_back(std::move(report));
    }
    if (wants("activation-clustering")) {
      say(log, "defense: activation clustering");
      suite.clusters = defense::activation_clustering(acts, config.stage_seed("activation-clustering"),
                                                      config.defense.ac_restarts, config.defense.ac_gap);
      const int smaller = suite.clusters.sizes[0] <= suite.clusters.sizes[1] ? 0 : 1;
      std::vector<double> scores;
      for (int a : suite.clusters.assignment) scores.push_back(a == smaller ? 1.0 : 0.0);
      auto report = defense::make_report("activation-clustering", std::move(scores), labels, true);
      report.extras["cluster_sizes"] = suite.clusters.sizes;
      report.extras["silhouettes"] = suite.clusters.silhouettes;
      report.extras["gap"] = suite.clusters.gap;
      report.extras["gap_threshold"] = config.defense.ac_gap;
      report.extras["flagged"] = suite.clusters.flagged;
      report.extras["silhouette_histogram"] = [&] {
        const auto h = defense::make_histogram(suite.clusters.sample_silhouettes, labels);
        return nlohmann::ordered_json{{"lo", h.lo}, {"hi", h.hi}, {"clean", h.clean}, {"poisoned", h.poisoned}};
      }();
      suite.reports.push_back(std::move(report));
    }
  }

  if (wants("onion")) {
    std::vector<Tokens> corpus;
    for (const auto& r : held_out) {
      for (const auto& c : r.captions) corpus.push_back(tokenize(c));
    }
    const auto lm = defense::train_perplexity_oracle(corpus, config.defense.onion_k);
    const double threshold = defense::onion_threshold(corpus, lm, config.defense.onion_quantile);
    std::vector<Tokens> captions;
    std::vector<int> caption_labels;
    for (std::size_t i = 0; i < poisoned_train.size(); ++i) {
      const Tokens t = tokenize(poisoned_train[i].captions.front());
      if (t.size() < 2) continue;
      captions.push_back(t);
      caption_labels.push_back(labels[i]);
    }
    say(log, "defense: ONION on " + std::to_string(captions.size()) + " captions");
    suite.reports.push_back(
        defense::onion_report(captions, caption_labels, lm, threshold, tokenize(config.attack.target_class)));
  }

  for (const auto& r : suite.reports) {
    suite.null_auroc[r.defense] =
        null_auroc(r.scores, r.labels, config.defense.null_shuffles, derive_seed(config.stage_seed("null"), r.defense));
  }
  return suite;
}

nlohmann::ordered_json DefenseSuite::summary() const {
  nlohmann::ordered_json j;
  double best = 0;
  std::string best_name;
  nlohmann::ordered_json per = nlohmann::ordered_json::object();
  for (const auto& r : reports) {
    per[r.defense] = r.auroc;
    if (r.auroc >= best) {
      best = r.auroc;
      best_name = r.defense;
    }
  }
  j["auroc"] = per;
  j["max_auroc"] = best;
  j["max_auroc_defense"] = best_name;
  j["null_auroc"] = null_auroc;
  if (!clusters.assignment.empty()) {
    j["activation_clustering"] = {{"gap", clusters.gap}, {"flagged", clusters.flagged}};
  }
  return j;
}

// ---- Report files ----

std::vector<std::string> write_attack_reports(const AttackOutcome& outcome, const PipelineConfig& config,
                                              const std::filesystem::path& dir) {
  std::vector<std::string> files;
  const auto put = [&](const std::string& name, const std::string& text) {
    write_text_file(dir / name, text);
    files.push_back(name);
  };
  put("reports/eval_backdoored.json", outcome.backdoored.to_json().dump(2) + "\n");
  put("reports/eval_clean.json", outcome.clean.to_json().dump(2) + "\n");
  put("reports/decodes_backdoored.csv", outcome.backdoored.to_csv());
  put("reports/decodes_clean.csv", outcome.clean.to_csv());
  put("reports/attack_summary.json", outcome.summary(config).dump(2) + "\n");
  put("artifacts/poison_plan.json", poison::plan_to_json(outcome.plan) + "\n");
  trigger::save_trigger(outcome.trigger, dir / "artifacts/trigger.json");
  files.push_back("artifacts/trigger.json");
  files.push_back("artifacts/trigger.png");
  return files;
}

std::vector<std::string> write_defense_reports(const DefenseSuite& suite, const std::filesystem::path& dir) {
  std::vector<std::string> files;
  for (const auto& r : suite.reports) {
    const std::string base = "reports/defense_" + r.defense;
    write_text_file(dir / (base + ".json"), r.to_json().dump(2) + "\n");
    write_text_file(dir / (base + ".svg"), defense::histogram_svg(r.histogram, r.defense + " scores"));
    files.push_back(base + ".json");
    files.push_back(base + ".svg");
  }
  write_text_file(dir / "reports/stealth_summary.json", suite.summary().dump(2) + "\n");
  files.push_back("reports/stealth_summary.json");
  return files;
}

// ---- Manifest ----

nlohmann::ordered_json RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["config_sha256"] = config_sha256;
  j["seeds"] = seeds;
  nlohmann::ordered_json arts = nlohmann::ordered_json::object();
  for (const auto& [path, hash] : artifacts) arts[path] = hash;
  j["artifacts"] = arts;
  return j;
}

RunManifest RunManifest::from_json(const nlohmann::ordered_json& j) {
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.config_sha256 = j.at("config_sha256").get<std::string>();
    m.seeds = j.at("seeds");
    for (const auto& [path, hash] : j.at("artifacts").items()) m.artifacts[path] = hash.get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed run manifest: ") + e.what());
  }
  return m;
}

RunManifest make_manifest(const std::string& command, const std::string& config_text, const PipelineConfig& config,
                          const std::filesystem::path& run_dir, const std::vector<std::string>& files) {
  RunManifest m;
  m.command = command;
  m.config_sha256 = sha256_hex(config_text);
  m.seeds["master"] = config.seed;
  for (const char* stage : {"detector-data", "train-data", "test-data", "detector", "poison", "captioner", "strip",
                            "activation-clustering", "null"}) {
    m.seeds[stage] = config.stage_seed(stage);
  }
  for (const auto& f : files) m.artifacts[f] = sha256_file(run_dir / f);
  return m;
}

std::vector<std::string> verify_manifest(const RunManifest& manifest, const std::filesystem::path& run_dir) {
  std::vector<std::string> problems;
  for (const auto& [path, hash] : manifest.artifacts) {
    if (!std::filesystem::exists(run_dir / path)) {
      problems.push_back(path + ": missing");
    } else if (sha256_file(run_dir / path) != hash) {
      problems.push_back(path + ": hash mismatch");
    }
  }
  return problems;
}

// ---- Sweeps ----

const std::vector<std::string>& sweep_axes() {
  static const std::vector<std::string> axes = {"rate",  "trigger-size", "linf",     "location",
                                                "shape", "optimizer",    "injection"};
  return axes;
}

PipelineConfig apply_axis(const PipelineConfig& config, const std::string& axis, const std::string& value) {
  PipelineConfig c = config;
  const auto number = [&]() {
    try {
      std::size_t used = 0;
      const double v = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("sweep value '" + value + "' for axis '" + axis + "' is not a number");
    }
  };
  if (axis == "rate") {
    c.attack.poisoning_rate = number();
  } else if (axis == "trigger-size") {
    const auto x = value.find('x');
    try {
      if (x == std::string::npos) {
        const int n = std::stoi(value);
        c.attack.trigger_size = {n, n};
      } else {
        c.attack.trigger_size = {std::stoi(value.substr(0, x)), std::stoi(value.substr(x + 1))};
      }
    } catch (const std::exception&) {
      throw ConfigError("trigger size '" + value + "' is not N or HxW");
    }
  } else if (axis == "linf") {
    c.attack.linf_bound = number();
  } else if (axis == "location") {
    c.attack.placement = trigger::parse_placement(value);
  } else if (axis == "shape") {
    c.attack.trigger_shape = parse_shape_kind(value);
  } else if (axis == "optimizer") {
    c.trigger.optimizer = value;
  } else if (axis == "injection") {
    c.attack.injection = poison::parse_injection_mode(value);
  } else {
    throw ConfigError("unknown sweep axis '" + axis +
                      "' (valid: rate, trigger-size, linf, location, shape, optimizer, injection)");
  }
  c.validate();
  return c;
}

std::vector<SweepCell> run_sweep(const PipelineConfig& config, const std::string& axis,
                                 const std::vector<std::string>& values, const ArtifactCache& cache,
                                 const Logger& log) {
  std::vector<PipelineConfig> cells;
  for (const auto& v : values) cells.push_back(apply_axis(config, axis, v));
  std::vector<SweepCell> out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    SweepCell cell;
    cell.value = values[i];
    say(log, "sweep: " + axis + " = " + values[i]);
    try {
      const AttackOutcome o = run_attack(cells[i], cache, log);
      cell.ok = true;
      cell.asr = o.backdoored.asr;
      cell.bleu4 = o.backdoored.bleu4;
      cell.clean_bleu4 = o.clean.bleu4;
      cell.cider = o.backdoored.cider;
      cell.meteor = o.backdoored.meteor;
    } catch (const Error& e) {
      cell.error = e.what();
      say(log, "sweep: cell failed: " + cell.error);
    }
    out.push_back(cell);
  }
  return out;
}

std::string sweep_csv(const std::string& axis, const std::vector<SweepCell>& cells) {
  std::ostringstream csv;
  csv << axis << ",status,asr,bleu4,clean_bleu4,cider,meteor,error\n";
  for (const auto& c : cells) {
    csv << c.value << ',' << (c.ok ? "ok" : "failed") << ',' << c.asr << ',' << c.bleu4 << ',' << c.clean_bleu4
        << ',' << c.cider << ',' << c.meteor << ",\"" << c.error << "\"\n";
  }
  return csv.str();
}

std::string sweep_svg(const std::string& axis, const std::vector<SweepCell>& cells) {
  const double w = 480, h = 220, left = 50, top = 30;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w + 2 * left << "\" height=\"" << h + 2 * top + 20
      << "\">\n";
  svg << "<text x=\"" << left << "\" y=\"18\" font-size=\"14\">ASR and BLEU-4 vs " << axis << "</text>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top + h << "\" x2=\"" << left + w << "\" y2=\"" << top + h
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + h
      << "\" stroke=\"black\"/>\n";
  const std::size_t n = cells.size();
  const auto x_at = [&](std::size_t i) { return left + (n <= 1 ? w / 2 : w * static_cast<double>(i) / (n - 1)); };
  const auto series = [&](auto value, const char* color, const char* name, double label_y) {
    std::ostringstream pts;
    for (std::size_t i = 0; i < n; ++i) {
      if (!cells[i].ok) continue;
      pts << x_at(i) << ',' << top + h * (1 - value(cells[i])) << ' ';
      svg << "<circle cx=\"" << x_at(i) << "\" cy=\"" << top + h * (1 - value(cells[i])) << "\" r=\"3\" fill=\""
          << color << "\"/>\n";
    }
    svg << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << color << "\"/>\n";
    svg << "<text x=\"" << left + w - 80 << "\" y=\"" << label_y << "\" font-size=\"11\" fill=\"" << color << "\">"
        << name << "</text>\n";
  };
  series([](const SweepCell& c) { return c.asr; }, "#d62728", "ASR", 18);
  series([](const SweepCell& c) { return c.bleu4; }, "#1f77b4", "BLEU-4", 30);
  for (std::size_t i = 0; i < n; ++i) {
    svg << "<text x=\"" << x_at(i) - 10 << "\" y=\"" << top + h + 16 << "\" font-size=\"11\">" << cells[i].value
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace captrap::pipeline
