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

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "captrap/core/errors.hpp"
#include "captrap/core/io.hpp"
#include "captrap/core/manifest.hpp"
#include "captrap/pipeline/pipeline.hpp"

namespace fs = std::filesystem;
using namespace captrap;
using namespace captrap::pipeline;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitFailure = 3;

struct CommonFlags {
  std::string config_path;
  std::string run_dir;
  bool no_cache = false;
  bool quiet = false;
};

fs::path home_dir() {
  const char* env = std::getenv("CAPTRAP_HOME");
  return env && *env ? fs::path(env) : fs::path("captrap_home");
}

std::string timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return out.str();
}

// One invocation's output directory, with the run manifest at its root.
class Run {
 public:
  Run(const std::string& command, const CommonFlags& flags) : command_(command), quiet_(flags.quiet) {
    if (!flags.run_dir.empty()) {
      dir_ = flags.run_dir;
    } else {
      const fs::path base = home_dir() / "runs" / (timestamp() + "-" + command);
      dir_ = base;
      for (int i = 2; fs::exists(dir_); ++i) dir_ = base.string() + "-" + std::to_string(i);
    }
    fs::create_directories(dir_);
    if (!flags.no_cache) cache_ = ArtifactCache(home_dir() / "cache");
    if (flags.config_path.empty()) {
      config_text_ = PipelineConfig().to_json().dump(2) + "\n";
    } else {
      try {
        config_text_ = read_text_file(flags.config_path);
      } catch (const IoError& e) {
        throw ConfigError(e.what());
      }
    }
    write_text_file(dir_ / "config.json", config_text_);
    config_ = PipelineConfig::from_text(config_text_);
  }

  const fs::path& dir() const { return dir_; }
  PipelineConfig& config() { return config_; }
  const ArtifactCache& cache() const { return cache_; }
  Logger logger() const {
    if (quiet_) return {};
    return [](const std::string& m) { std::cerr << "[captrap] " << m << '\n'; };
  }
  void time(const std::string& stage, double seconds) { timing_[stage] = seconds; }

  // Writes the effective config, timing and the manifest over every file in
  // the run directory.
  void finish(const std::string& summary) {
    write_text_file(dir_ / "effective_config.json", config_.to_json().dump(2) + "\n");
    nlohmann::ordered_json timing(timing_);
    write_text_file(dir_ / "timing.json", timing.dump(2) + "\n");
    std::vector<std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir_)) {
      if (!entry.is_regular_file()) continue;
      const std::string rel = fs::relative(entry.path(), dir_).generic_string();
      if (rel == "run_manifest.json" || rel == "timing.json") continue;
      files.push_back(rel);
    }
    std::sort(files.begin(), files.end());
    const RunManifest m = make_manifest(command_, config_text_, config_, dir_, files);
    write_text_file(dir_ / "run_manifest.json", m.to_json().dump(2) + "\n");
    if (!summary.empty()) std::cout << summary << '\n';
    std::cout << "run directory: " << dir_.string() << '\n';
  }

 private:
  std::string command_;
  bool quiet_;
  fs::path dir_;
  ArtifactCache cache_;
  std::string config_text_;
  PipelineConfig config_;
  std::map<std::string, double> timing_;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::vector<ImageRecord> load_dataset(const std::string& path) {
  if (!fs::exists(path)) throw InputError("dataset manifest not found: " + path);
  return load_manifest(path);
}

trigger::Trigger load_or_make_trigger(Run& run, const std::string& trigger_path, const Datasets& data) {
  if (!trigger_path.empty()) return trigger::load_trigger(trigger_path);
  const DetectorStage det = train_or_load_detector(run.config(), data, run.cache(), run.logger());
  return synthesize_or_load_trigger(run.config(), data, det.model, run.cache(), run.logger()).trigger;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--run-dir", flags.run_dir, "Output directory (default: $CAPTRAP_HOME/runs/<timestamp>-<command>)");
  cmd->add_flag("--no-cache", flags.no_cache, "Do not reuse or store cached detectors, triggers and models");
  cmd->add_flag("--quiet", flags.quiet, "Suppress progress messages");
}

int cmd_gen_data(const CommonFlags& flags, int n, std::uint64_t seed, int size, const std::string& prefix) {
  Run run("gen-data", flags);
  ShapesOptions opt;
  opt.id_prefix = prefix;
  Stopwatch t;
  const auto records = generate_shapes_dataset(n, size, run.config().data.classes, seed, opt);
  save_manifest(records, run.dir() / "dataset/manifest.jsonl");
  run.time("gen-data", t.seconds());
  run.finish(std::to_string(records.size()) + " images written");
  return 0;
}

int cmd_train_detector(const CommonFlags& flags) {
  Run run("train-detector", flags);
  Stopwatch t;
  const Datasets data = make_datasets(run.config());
  const DetectorStage det = train_or_load_detector(run.config(), data, run.cache(), run.logger());
  detector::save_detector(det.model, det.val_mean_iou, run.dir() / "artifacts/detector.bin");
  nlohmann::ordered_json report{{"val_mean_iou", det.val_mean_iou}, {"train_images", data.detector_train.size()}};
  write_text_file(run.dir() / "reports/detector.json", report.dump(2) + "\n");
  run.time("train-detector", t.seconds());
  run.finish("held-out mean IoU " + std::to_string(det.val_mean_iou));
  return 0;
}

int cmd_make_trigger(const CommonFlags& flags, const std::string& detector_path) {
  Run run("make-trigger", flags);
  Stopwatch t;
  const Datasets data = make_datasets(run.config());
  detector::TinyDetector model = detector_path.empty()
                                     ? train_or_load_detector(run.config(), data, run.cache(), run.logger()).model
                                     : detector::load_detector(detector_path);
  const TriggerStage stage = synthesize_or_load_trigger(run.config(), data, model, run.cache(), run.logger());
  trigger::save_trigger(stage.trigger, run.dir() / "artifacts/trigger.json");
  nlohmann::ordered_json report{{"stamped", stage.fooling.stamped},
                                {"fooled", stage.fooling.fooled},
                                {"fooling_rate", stage.fooling.rate()}};
  write_text_file(run.dir() / "reports/trigger.json", report.dump(2) + "\n");
  run.time("make-trigger", t.seconds());
  run.finish("fooling rate " + std::to_string(stage.fooling.rate()));
  return 0;
}

int cmd_poison(const CommonFlags& flags, const std::string& trigger_path, const std::string& dataset_path) {
  Run run("poison", flags);
  Stopwatch t;
  const PipelineConfig& c = run.config();
  const Datasets data = make_datasets(c);
  const trigger::Trigger trig = load_or_make_trigger(run, trigger_path, data);
  const auto train = dataset_path.empty() ? data.train : load_dataset(dataset_path);
  poison::PoisonOptions po;
  po.placement = c.attack.placement;
  po.mode = c.attack.injection;
  po.source_synonyms = c.attack.source_synonyms;
  const auto plan = poison::build_poison_plan(train, trig, c.experiment(), po);
  const auto audit = poison::audit_plan(plan, trig);
  save_manifest(poison::materialize(plan, train), run.dir() / "dataset/manifest.jsonl");
  write_text_file(run.dir() / "artifacts/poison_plan.json", poison::plan_to_json(plan) + "\n");
  trigger::save_trigger(trig, run.dir() / "artifacts/trigger.json");
  nlohmann::ordered_json report{{"pairs_checked", audit.pairs_checked}, {"failures", audit.failures}};
  write_text_file(run.dir() / "reports/audit.json", report.dump(2) + "\n");
  run.time("poison", t.seconds());
  run.finish(std::to_string(plan.pairs.size()) + " poisoned records, audit " + (audit.ok() ? "passed" : "FAILED"));
  if (!audit.ok()) throw ValidationError("poison audit failed");
  return 0;
}

int cmd_train(const CommonFlags& flags, const std::string& dataset_path) {
  Run run("train", flags);
  Stopwatch t;
  const auto train = load_dataset(dataset_path);
  const CaptionerStage stage = train_captioner_stage(run.config(), train, ArtifactCache(), "", run.logger());
  captioner::save_captioner(stage.model, stage.loss_trace, run.dir() / "artifacts/captioner.bin");
  run.time("train", t.seconds());
  run.finish("final loss " + std::to_string(stage.loss_trace.empty() ? 0.0 : stage.loss_trace.back()));
  return 0;
}

int cmd_evaluate(const CommonFlags& flags, const std::string& model_path, const std::string& trigger_path,
                 const std::string& dataset_path) {
  Run run("evaluate", flags);
  Stopwatch t;
  const PipelineConfig& c = run.config();
  const auto model = captioner::load_captioner(model_path);
  const auto test = dataset_path.empty() ? make_datasets(c).test : load_dataset(dataset_path);
  const auto trig = trigger::load_trigger(trigger_path);
  const auto population = attack_population(c, test, trig);
  const EvalReport report = evaluate_model(model, fs::path(model_path).stem().string(), test, population,
                                           c.attack.target_class, c.attack.target_synonyms, c.captioner.beam_width);
  write_text_file(run.dir() / "reports/eval.json", report.to_json().dump(2) + "\n");
  write_text_file(run.dir() / "reports/decodes.csv", report.to_csv());
  run.time("evaluate", t.seconds());
  run.finish(report.to_json().dump());
  return 0;
}

int cmd_defend(const CommonFlags& flags, const std::string& model_path, const std::string& dataset_path,
               const std::string& held_out_path, const std::string& defenses) {
  const auto names = defenses.empty() ? defense_names() : split_list(defenses);
  for (const auto& n : names) {
    if (std::find(defense_names().begin(), defense_names().end(), n) == defense_names().end()) {
      throw ConfigError("unknown defense '" + n + "' (valid: strip, spectral, activation-clustering, onion)");
    }
  }
  Run run("defend", flags);
  Stopwatch t;
  const auto model = captioner::load_captioner(model_path);
  const auto train = load_dataset(dataset_path);
  const auto held_out = held_out_path.empty() ? make_datasets(run.config()).test : load_dataset(held_out_path);
  const DefenseSuite suite = run_defenses(run.config(), model, train, held_out, names, run.logger());
  write_defense_reports(suite, run.dir());
  run.time("defend", t.seconds());
  run.finish(suite.summary().dump());
  return 0;
}

int cmd_sweep(const CommonFlags& flags, const std::string& axis, const std::string& values) {
  const auto list = split_list(values);
  if (list.empty()) throw ConfigError("--values needs at least one value");
  Run run("sweep", flags);
  for (const auto& v : list) apply_axis(run.config(), axis, v);
  Stopwatch t;
  const auto cells = run_sweep(run.config(), axis, list, run.cache(), run.logger());
  write_text_file(run.dir() / ("reports/sweep_" + axis + ".csv"), sweep_csv(axis, cells));
  write_text_file(run.dir() / ("reports/sweep_" + axis + ".svg"), sweep_svg(axis, cells));
  run.time("sweep", t.seconds());
  run.finish(sweep_csv(axis, cells));
  return 0;
}

int cmd_attack(const CommonFlags& flags, double poison_rate, bool defend, bool save_datasets) {
  Run run("attack", flags);
  if (poison_rate >= 0) run.config().attack.poisoning_rate = poison_rate;
  run.config().validate();
  Stopwatch t;
  const AttackOutcome outcome = run_attack(run.config(), run.cache(), run.logger());
  for (const auto& [stage, seconds] : outcome.seconds) run.time(stage, seconds);
  write_attack_reports(outcome, run.config(), run.dir());
  captioner::save_captioner(outcome.backdoored_model, outcome.backdoored_loss, run.dir() / "artifacts/backdoored.bin");
  captioner::save_captioner(outcome.clean_model, outcome.clean_loss, run.dir() / "artifacts/clean.bin");
  if (save_datasets) {
    save_manifest(outcome.poisoned_train, run.dir() / "datasets/poisoned_train/manifest.jsonl");
    save_manifest(outcome.data.test, run.dir() / "datasets/test/manifest.jsonl");
  }
  std::string summary = "ASR " + std::to_string(outcome.backdoored.asr) + " (" + std::to_string(outcome.backdoored.n_p) +
                        "/" + std::to_string(outcome.backdoored.n_t) + "), BLEU-4 " +
                        std::to_string(outcome.backdoored.bleu4) + " (clean " + std::to_string(outcome.clean.bleu4) +
                        ")";
  if (defend) {
    Stopwatch td;
    const DefenseSuite suite = run_defenses(run.config(), outcome.backdoored_model, outcome.poisoned_train,
                                            outcome.data.test, defense_names(), run.logger());
    write_defense_reports(suite, run.dir());
    run.time("defend", td.seconds());
    summary += "\nstealth: " + suite.summary().dump();
  }
  run.time("command", t.seconds());
  run.finish(summary);
  return 0;
}

int cmd_report(const std::string& run_dir) {
  const fs::path dir(run_dir);
  const fs::path manifest_path = dir / "run_manifest.json";
  if (!fs::exists(manifest_path)) throw InputError("no run_manifest.json in " + run_dir);
  const RunManifest m = RunManifest::from_json(nlohmann::ordered_json::parse(read_text_file(manifest_path)));
  const auto problems = verify_manifest(m, dir);
  std::cout << "command: " << m.command << "\nconfig sha256: " << m.config_sha256 << "\nartifacts: "
            << m.artifacts.size() << '\n';
  for (const char* name : {"reports/attack_summary.json", "reports/stealth_summary.json", "reports/eval.json"}) {
    if (!fs::exists(dir / name)) continue;
    auto j = nlohmann::ordered_json::parse(read_text_file(dir / name));
    if (j.contains("config")) j.erase("config");
    if (j.contains("loss_trace")) j.erase("loss_trace");
    std::cout << name << ":\n" << j.dump(2) << '\n';
  }
  if (!problems.empty()) {
    for (const auto& p : problems) std::cerr << "manifest: " << p << '\n';
    throw ValidationError(std::to_string(problems.size()) + " artifact(s) failed verification");
  }
  std::cout << "all artifacts verified\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Object-detection-guided backdoor attacks on image captioning: experiment harness"};
  app.require_subcommand(1);
  CommonFlags flags;

  int n = 100;
  std::uint64_t data_seed = 1;
  int size = 64;
  std::string prefix = "img";
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic shapes dataset");
  add_common(gen, flags);
  gen->add_option("--n", n, "Number of images")->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", data_seed, "Generator seed");
  gen->add_option("--size", size, "Image side in pixels");
  gen->add_option("--prefix", prefix, "Image id prefix");

  auto* det = app.add_subcommand("train-detector", "Train the object-detection oracle");
  add_common(det, flags);

  std::string detector_path;
  auto* trig = app.add_subcommand("make-trigger", "Synthesize the adversarial trigger");
  add_common(trig, flags);
  trig->add_option("--detector", detector_path, "Trained detector weights")->check(CLI::ExistingFile);

  std::string trigger_path, dataset_path, model_path, held_out_path, defenses;
  auto* poi = app.add_subcommand("poison", "Build, audit and materialize the poison plan");
  add_common(poi, flags);
  poi->add_option("--trigger", trigger_path, "Trigger JSON")->check(CLI::ExistingFile);
  poi->add_option("--dataset", dataset_path, "Training manifest (default: generated from config)");

  auto* train = app.add_subcommand("train", "Train a captioner on a dataset");
  add_common(train, flags);
  train->add_option("--dataset", dataset_path, "Training manifest")->required();

  auto* eval = app.add_subcommand("evaluate", "Evaluate a captioner: ASR, BLEU-4, CIDEr, METEOR");
  add_common(eval, flags);
  eval->add_option("--model", model_path, "Captioner weights")->required()->check(CLI::ExistingFile);
  eval->add_option("--trigger", trigger_path, "Trigger JSON")->required()->check(CLI::ExistingFile);
  eval->add_option("--dataset", dataset_path, "Test manifest (default: generated from config)");

  auto* def = app.add_subcommand("defend", "Run the defense battery");
  add_common(def, flags);
  def->add_option("--model", model_path, "Captioner weights")->required()->check(CLI::ExistingFile);
  def->add_option("--dataset", dataset_path, "Poisoned training manifest")->required();
  def->add_option("--held-out", held_out_path, "Held-out clean manifest (default: generated from config)");
  def->add_option("--defenses", defenses, "Comma-separated: strip,spectral,activation-clustering,onion");

  std::string axis, values;
  auto* sweep = app.add_subcommand("sweep", "Run one attack per value of an ablation axis");
  add_common(sweep, flags);
  sweep->add_option("--axis", axis, "rate | trigger-size | linf | location | shape | optimizer | injection")
      ->required();
  sweep->add_option("--values", values, "Comma-separated values")->required();

  double poison_rate = -1;
  bool defend = false, save_datasets = false;
  auto* attack = app.add_subcommand("attack", "Run the full attack pipeline");
  add_common(attack, flags);
  attack->add_option("--poison-rate", poison_rate, "Override attack.poisoning_rate");
  attack->add_flag("--defend", defend, "Also run all four defenses");
  attack->add_flag("--save-datasets", save_datasets, "Write the poisoned training and test sets");

  std::string report_dir;
  auto* report = app.add_subcommand("report", "Verify a run directory and print its summaries");
  report->add_option("run", report_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  report->add_flag("--quiet", flags.quiet, "Accepted for symmetry; report output is always printed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) {
      try {
        return cmd_gen_data(flags, n, data_seed, size, prefix);
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
    }
    if (*det) return cmd_train_detector(flags);
    if (*trig) return cmd_make_trigger(flags, detector_path);
    if (*poi) return cmd_poison(flags, trigger_path, dataset_path);
    if (*train) return cmd_train(flags, dataset_path);
    if (*eval) return cmd_evaluate(flags, model_path, trigger_path, dataset_path);
    if (*def) return cmd_defend(flags, model_path, dataset_path, held_out_path, defenses);
    if (*sweep) return cmd_sweep(flags, axis, values);
    if (*attack) return cmd_attack(flags, poison_rate, defend, save_datasets);
    if (*report) return cmd_report(report_dir);
  } catch (const ConfigError& e) {
    std::cerr << "captrap: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "captrap: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
