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

// End-to-end acceptance run on synthetic data. Prints one PASS/FAIL line per
// criterion and exits non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "captrap/core/errors.hpp"
#include "captrap/core/io.hpp"
#include "captrap/detector/ciou.hpp"
#include "captrap/metrics/metrics.hpp"
#include "captrap/pipeline/pipeline.hpp"
#include "captrap/trigger/synth.hpp"
#include "support/cluster_fixtures.hpp"
#include "support/metric_oracles.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

namespace fs = std::filesystem;
using namespace captrap;
using namespace captrap::pipeline;

namespace {

struct Outcome {
  int id;
  bool pass;
};

std::vector<Outcome> g_outcomes;

void report(int id, bool pass, const std::string& detail) {
  g_outcomes.push_back({id, pass});
  std::printf("criterion %2d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
}

void note(const std::string& text) {
  std::printf("info        : %s\n", text.c_str());
  std::fflush(stdout);
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(digits);
  out << v;
  return out.str();
}

std::string fmt_sci(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

Logger progress() {
  return [](const std::string& m) { std::cerr << "  [acceptance] " << m << '\n'; };
}

// ---- 4. metric oracles ----
void metric_oracles() {
  double worst_bleu = 0, worst_cider = 0, worst_meteor = 0;
  bool nontrivial = true;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto c = testing::fixture_corpus(seed);
    const double b = metrics::bleu4(c.cands, c.refs);
    const double d = metrics::cider(c.cands, c.refs);
    const double m = metrics::meteor(c.cands, c.refs);
    worst_bleu = std::max(worst_bleu, std::abs(b - testing::oracle_bleu(c.cands, c.refs)));
    worst_cider = std::max(worst_cider, std::abs(d - testing::oracle_cider(c.cands, c.refs)));
    double oracle_m = 0;
    for (std::size_t i = 0; i < c.cands.size(); ++i) {
      double best = 0;
      for (const auto& r : c.refs[i]) best = std::max(best, testing::oracle_meteor_pair(c.cands[i], r, metrics::default_synonyms()));
      oracle_m += best;
    }
    oracle_m /= static_cast<double>(c.cands.size());
    worst_meteor = std::max(worst_meteor, std::abs(m - oracle_m));
    nontrivial = nontrivial && b > 0.05 && d > 0.05 && m > 0.05;
  }
  const bool pass = worst_bleu <= 1e-9 && worst_cider <= 1e-6 && worst_meteor <= 1e-6 && nontrivial;
  std::ostringstream d;
  d << "25-sentence fixture x3: max |BLEU-4 - oracle| " << worst_bleu << ", CIDEr " << worst_cider << ", METEOR "
    << worst_meteor;
  report(4, pass, d.str());
}

// ---- 5. CIoU oracle ----
void ciou_oracle() {
  std::mt19937_64 rng(2024);
  double worst = 0;
  bool identical_zero = true;
  for (int i = 0; i < 200; ++i) {
    const BBox p = testing::random_box(rng), g = testing::random_box(rng);
    worst = std::max(worst, std::abs(detector::ciou_loss(p, g) - testing::hand_ciou(p, g)));
    identical_zero = identical_zero && detector::ciou_loss(p, p) == 0.0;
  }
  report(5, worst <= 1e-9 && identical_zero,
         "200 random pairs: max |CIoU - hand geometry| " + fmt_sci(worst) +
             (identical_zero ? ", identical boxes exactly 0" : ", identical boxes NOT 0"));
}

// ---- 6. placement law ----
void placement_law(const AttackOutcome& attack) {
  std::mt19937_64 rng(606);
  std::uniform_int_distribution<int> size(2, 24);
  std::uniform_real_distribution<double> pos(0, 30), len(1, 34);
  int placed = 0, skipped = 0, violations = 0;
  const Image canvas(64, 64, 128);
  for (int i = 0; i < 1000; ++i) {
    const int th = size(rng), tw = size(rng);
    const double xa = pos(rng), ya = pos(rng);
    const BBox box{xa, ya, xa + len(rng), ya + len(rng)};
    trigger::Trigger t = trigger::make_zero_trigger({th, tw}, ShapeKind::kSquare, 20);
    std::fill(t.data.begin(), t.data.end(), 10.0);
    if (box.width() < tw || box.height() < th) {
      ++skipped;
      bool threw = false;
      try {
        (void)trigger::apply_trigger(canvas, t, box);
      } catch (const PlacementError&) {
        threw = true;
      }
      violations += threw ? 0 : 1;
      continue;
    }
    ++placed;
    const trigger::Footprint fp = trigger::footprint(box, th, tw);
    if (std::abs(fp.x0 + tw / 2.0 - box.center_x()) > 1.0 || std::abs(fp.y0 + th / 2.0 - box.center_y()) > 1.0) {
      ++violations;
    }
    // The stamped pixels themselves form exactly the footprint.
    const Image out = trigger::apply_trigger(canvas, t, box);
    int min_x = 64, min_y = 64, max_x = -1, max_y = -1;
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 64; ++x) {
        if (out.at(y, x, 0) == canvas.at(y, x, 0)) continue;
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x);
        min_y = std::min(min_y, y);
        max_y = std::max(max_y, y);
      }
    }
    const double cx = (min_x + max_x + 1) / 2.0, cy = (min_y + max_y + 1) / 2.0;
    if (max_x - min_x + 1 != tw || max_y - min_y + 1 != th || std::abs(cx - box.center_x()) > 1.0 ||
        std::abs(cy - box.center_y()) > 1.0) {
      ++violations;
    }
  }
  // Every box stamped by the acceptance plan is large enough for the trigger.
  int plan_boxes = 0;
  for (const auto& p : attack.plan.pairs) {
    for (const auto& b : p.stamped) {
      ++plan_boxes;
      if (!trigger::fits(b, attack.trigger)) ++violations;
    }
  }
  report(6, violations == 0 && placed > 0 && skipped > 0,
         "1000 random pairs (" + std::to_string(placed) + " placed, " + std::to_string(skipped) +
             " undersized and rejected), " + std::to_string(plan_boxes) + " plan boxes, violations " +
             std::to_string(violations));
}

// ---- 7. poison audit ----
void poison_audit(const AttackOutcome& attack, const PipelineConfig& config) {
  const poison::AuditReport audit = poison::audit_plan(attack.plan, attack.trigger);
  // Independent re-check: pixels outside the footprints are untouched, inside
  // they move by at most the bound; captions change only source tokens into
  // target tokens.
  const Tokens src = tokenize(config.attack.source_class), tgt = tokenize(config.attack.target_class);
  std::set<std::string> src_words(src.begin(), src.end()), tgt_words(tgt.begin(), tgt.end());
  src_words.insert(src.back() + "s");
  src_words.insert(src.back() + "es");
  tgt_words.insert(tgt.back() + "s");
  tgt_words.insert(tgt.back() + "es");
  int failures = 0;
  const trigger::Trigger& t = attack.trigger;
  for (const auto& p : attack.plan.pairs) {
    const Image& a = p.clean.pixels;
    const Image& b = p.poisoned.pixels;
    std::vector<std::uint8_t> inside(static_cast<std::size_t>(a.height) * a.width, 0);
    for (const auto& box : p.stamped) {
      const auto fp = trigger::footprint(box, t.height, t.width, config.attack.placement);
      for (int y = 0; y < t.height; ++y) {
        for (int x = 0; x < t.width; ++x) inside[static_cast<std::size_t>(fp.y0 + y) * a.width + fp.x0 + x] = 1;
      }
    }
    for (int y = 0; y < a.height; ++y) {
      for (int x = 0; x < a.width; ++x) {
        for (int c = 0; c < 3; ++c) {
          const int diff = std::abs(int(a.at(y, x, c)) - int(b.at(y, x, c)));
          const bool in = inside[static_cast<std::size_t>(y) * a.width + x] != 0;
          if ((!in && diff != 0) || diff > config.attack.linf_bound) ++failures;
        }
      }
    }
    if (p.clean.captions.size() != p.poisoned.captions.size()) ++failures;
    for (std::size_t k = 0; k < std::min(p.clean.captions.size(), p.poisoned.captions.size()); ++k) {
      const Tokens before = tokenize(p.clean.captions[k]), after = tokenize(p.poisoned.captions[k]);
      if (before.size() != after.size()) {
        ++failures;
        continue;
      }
      for (std::size_t w = 0; w < before.size(); ++w) {
        if (before[w] == after[w]) continue;
        if (!src_words.count(before[w]) || !tgt_words.count(after[w])) ++failures;
      }
    }
  }
  report(7, audit.ok() && failures == 0 && audit.pairs_checked == attack.plan.pairs.size(),
         "audit_plan checked " + std::to_string(audit.pairs_checked) + " pairs, " +
             std::to_string(audit.failures.size()) + " failures; independent re-check failures " +
             std::to_string(failures));
}

// ---- 3. gradient check ----
void gradient_check(const detector::TinyDetector& model) {
  const auto r = testing::check_detector_gradient(model, 64, 500, 3003);
  report(3, r.pass_fraction() >= 0.99,
         std::to_string(r.passed) + "/" + std::to_string(r.sampled) + " coordinates within 1e-3 (" +
             fmt(100 * r.pass_fraction(), 1) + "%), worst " + fmt_sci(r.worst));
}

// ---- 2. trigger feasibility ----
void trigger_feasibility(const PipelineConfig& config, const Datasets& data, const detector::TinyDetector& model) {
  long steps = 0, violations = 0;
  int runs = 0;
  for (ShapeKind mask : {ShapeKind::kSquare, ShapeKind::kCircle, ShapeKind::kTriangle}) {
    trigger::SynthesisConfig sc;
    sc.epochs = config.trigger.epochs;
    sc.pgd_iters = config.trigger.pgd_iters;
    sc.eta = config.trigger.eta;
    sc.linf_bound = config.attack.linf_bound;
    sc.size = config.attack.trigger_size;
    sc.mask = mask;
    sc.source_class = config.attack.source_class;
    sc.target_class = config.attack.target_class;
    sc.weights = config.trigger.weights;
    sc.on_step = [&](const trigger::StepRecord& s) {
      ++steps;
      const trigger::Trigger& t = *s.after;
      for (int y = 0; y < t.height; ++y) {
        for (int x = 0; x < t.width; ++x) {
          for (int c = 0; c < 3; ++c) {
            const double v = t.at(y, x, c);
            if (std::abs(v) > sc.linf_bound || (!t.masked(y, x) && v != 0.0)) ++violations;
          }
        }
      }
    };
    const auto records =
        trigger::select_synthesis_records(data.train, sc.source_class, sc.size, config.trigger.samples);
    (void)trigger::synthesize_trigger(model, records, sc);
    ++runs;
  }
  report(2, runs >= 3 && steps > 0 && violations == 0,
         std::to_string(runs) + " full synthesis runs (square, circle, triangle masks), " + std::to_string(steps) +
             " steps checked, violations " + std::to_string(violations));
}

// ---- 9. defenses ----
DefenseSuite defense_battery(const PipelineConfig& config, const AttackOutcome& attack, const fs::path& dir) {
  DefenseSuite suite = run_defenses(config, attack.backdoored_model, attack.poisoned_train, attack.data.test,
                                    defense_names(), progress());
  const auto files = write_defense_reports(suite, dir);
  bool all_files = suite.reports.size() == 4;
  for (const auto& f : files) all_files = all_files && fs::exists(dir / f);
  bool null_ok = true;
  std::ostringstream d;
  d << "reports " << suite.reports.size() << "/4;";
  for (const auto& r : suite.reports) {
    const double n = suite.null_auroc.at(r.defense);
    null_ok = null_ok && std::abs(n - 0.5) <= 0.05;
    d << ' ' << r.defense << " AUROC " << fmt(r.auroc, 3) << " (null " << fmt(n, 3) << ")";
  }
  // Gap rule on constructed fixtures: tight vs diffuse clouds must be flagged,
  // mirror-image clouds must not.
  const auto uneven = defense::activation_clustering(testing::two_clusters(40, 9.0, 0.2, 2.5, 7), 1, 10, 0.1);
  const auto even = defense::activation_clustering(testing::two_clusters(40, 9.0, 1.0, 1.0, 8), 1, 10, 0.1);
  const bool gap_ok = uneven.flagged && uneven.gap > 0.1 && !even.flagged && even.gap <= 0.1;
  d << "; gap fixtures " << fmt(uneven.gap, 3) << " flagged / " << fmt(even.gap, 3) << " not flagged";
  report(9, all_files && null_ok && gap_ok, d.str());
  return suite;
}

// ---- 8. ablation directions ----
void ablations(const PipelineConfig& config, const AttackOutcome& base, const ArtifactCache& cache) {
  const auto asr_of = [&](const std::string& axis, const std::string& value) {
    const AttackOutcome o = run_attack(apply_axis(config, axis, value), cache, progress());
    note(axis + " = " + value + ": ASR " + fmt(o.backdoored.asr) + " (" + std::to_string(o.backdoored.n_p) + "/" +
         std::to_string(o.backdoored.n_t) + "), BLEU-4 " + fmt(o.backdoored.bleu4));
    return o.backdoored.asr;
  };
  const double center = base.backdoored.asr;
  const double top_left = asr_of("location", "top-left");
  const double bottom_right = asr_of("location", "bottom-right");
  const double poison_only = asr_of("injection", "poison-only");
  const double big = asr_of("trigger-size", "16");
  const bool location_ok = center >= top_left && center >= bottom_right;
  const bool injection_ok = center >= poison_only;
  const bool size_ok = big >= center;
  std::ostringstream d;
  d << "center " << fmt(center, 3) << " vs top-left " << fmt(top_left, 3) << ", bottom-right " << fmt(bottom_right, 3)
    << (location_ok ? " ok" : " WRONG") << "; paired " << fmt(center, 3) << " vs poison-only " << fmt(poison_only, 3)
    << (injection_ok ? " ok" : " WRONG") << "; 16x16 " << fmt(big, 3) << " vs 8x8 " << fmt(center, 3)
    << (size_ok ? " ok" : " WRONG");
  report(8, location_ok && injection_ok && size_ok, d.str());
}

std::vector<std::string> write_all(const AttackOutcome& attack, const DefenseSuite& suite,
                                   const PipelineConfig& config, const fs::path& dir) {
  auto files = write_attack_reports(attack, config, dir);
  const auto more = write_defense_reports(suite, dir);
  files.insert(files.end(), more.begin(), more.end());
  return files;
}

}  // namespace

int main() {
  try {
    const PipelineConfig config;
    config.validate();
    testing::TempDir work;
    const ArtifactCache cache(work.path() / "cache");

    metric_oracles();
    ciou_oracle();

    std::cerr << "  [acceptance] end-to-end attack (default config)\n";
    const AttackOutcome attack = run_attack(config, cache, progress());
    const double seconds = attack.seconds.at("total");
    const double bleu_drop = attack.clean.bleu4 - attack.backdoored.bleu4;
    note("detector held-out mean IoU " + fmt(attack.detector_val_iou) + "; trigger fooling rate " +
         fmt(attack.fooling.rate()) + " (" + std::to_string(attack.fooling.fooled) + "/" +
         std::to_string(attack.fooling.stamped) + " held-out source boxes relabelled)");
    note("clean model: ASR " + fmt(attack.clean.asr) + ", BLEU-4 " + fmt(attack.clean.bleu4) + ", CIDEr " +
         fmt(attack.clean.cider) + ", METEOR " + fmt(attack.clean.meteor));
    note("backdoored model: ASR " + fmt(attack.backdoored.asr) + ", BLEU-4 " + fmt(attack.backdoored.bleu4) +
         ", CIDEr " + fmt(attack.backdoored.cider) + ", METEOR " + fmt(attack.backdoored.meteor));
    report(1, attack.backdoored.asr >= 0.6 && bleu_drop <= 0.05 && seconds <= 1200,
           "ASR " + fmt(attack.backdoored.asr) + " (" + std::to_string(attack.backdoored.n_p) + "/" +
               std::to_string(attack.backdoored.n_t) + ", need >= 0.60), BLEU-4 drop " + fmt(bleu_drop) +
               " (need <= 0.05), runtime " + fmt(seconds, 1) + " s (need <= 1200)");

    placement_law(attack);
    poison_audit(attack, config);

    const DetectorStage det = train_or_load_detector(config, attack.data, cache, {});
    gradient_check(det.model);
    trigger_feasibility(config, attack.data, det.model);

    const DefenseSuite suite = defense_battery(config, attack, work.path() / "defense_reports");

    ablations(config, attack, cache);

    std::cerr << "  [acceptance] determinism rerun without cache\n";
    const fs::path first = work.path() / "run1", second = work.path() / "run2";
    const auto files = write_all(attack, suite, config, first);
    const AttackOutcome again = run_attack(config, ArtifactCache(), progress());
    const DefenseSuite suite_again = run_defenses(config, again.backdoored_model, again.poisoned_train,
                                                  again.data.test, defense_names(), progress());
    write_all(again, suite_again, config, second);
    int differing = 0;
    for (const auto& f : files) {
      if (read_text_file(first / f) != read_text_file(second / f)) {
        ++differing;
        note("determinism: " + f + " differs");
      }
    }
    report(10, differing == 0 && !files.empty(),
           std::to_string(files.size()) + " report files compared byte-for-byte, " + std::to_string(differing) +
               " differ");
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 2;
  }

  std::sort(g_outcomes.begin(), g_outcomes.end(), [](const Outcome& a, const Outcome& b) { return a.id < b.id; });
  int failed = 0;
  std::printf("summary     :");
  for (const auto& o : g_outcomes) {
    std::printf(" %d=%s", o.id, o.pass ? "PASS" : "FAIL");
    failed += o.pass ? 0 : 1;
  }
  std::printf("\n");
  return failed == 0 && g_outcomes.size() == 10 ? 0 : 1;
}
