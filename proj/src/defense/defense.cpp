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

#include "captrap/defense/defense.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "captrap/core/errors.hpp"

namespace captrap::defense {

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw DefenseError("score and label counts differ");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney U with mid-ranks for ties.
  double rank_sum = 0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = (static_cast<double>(i) + static_cast<double>(j) + 1.0) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        rank_sum += mid;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) throw DefenseError("AUROC needs both poisoned and clean samples");
  const double p = static_cast<double>(positives);
  return (rank_sum - p * (p + 1) / 2) / (p * static_cast<double>(negatives));
}

Histogram make_histogram(const std::vector<double>& scores, const std::vector<int>& labels, int bins) {
  if (bins <= 0) throw DefenseError("histogram needs at least one bin");
  Histogram h;
  h.clean.assign(static_cast<std::size_t>(bins), 0);
  h.poisoned.assign(static_cast<std::size_t>(bins), 0);
  if (scores.empty()) return h;
  h.lo = *std::min_element(scores.begin(), scores.end());
  h.hi = *std::max_element(scores.begin(), scores.end());
  const double width = h.hi > h.lo ? (h.hi - h.lo) / bins : 1.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const int b = std::clamp(static_cast<int>((scores[i] - h.lo) / width), 0, bins - 1);
    (labels[i] == 1 ? h.poisoned : h.clean)[static_cast<std::size_t>(b)]++;
  }
  return h;
}

std::string histogram_svg(const Histogram& h, const std::string& title) {
  const int bins = static_cast<int>(h.clean.size());
  const double w = 480, plot_h = 200, left = 40, top = 30;
  int peak = 1;
  for (int b = 0; b < bins; ++b) {
    peak = std::max({peak, h.clean[static_cast<std::size_t>(b)], h.poisoned[static_cast<std::size_t>(b)]});
  }
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w + 2 * left << "\" height=\""
      << plot_h + 2 * top + 20 << "\">\n";
  svg << "<text x=\"" << left << "\" y=\"18\" font-size=\"14\">" << title << "</text>\n";
  const double bar = w / std::max(1, bins);
  for (int b = 0; b < bins; ++b) {
    const auto draw = [&](int count, double offset, const char* color) {
      const double height = plot_h * count / peak;
      svg << "<rect x=\"" << left + b * bar + offset << "\" y=\"" << top + plot_h - height << "\" width=\""
          << bar / 2 << "\" height=\"" << height << "\" fill=\"" << color << "\" fill-opacity=\"0.7\"/>\n";
    };
    draw(h.clean[static_cast<std::size_t>(b)], 0, "#1f77b4");
    draw(h.poisoned[static_cast<std::size_t>(b)], bar / 2, "#d62728");
  }
  svg << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + w << "\" y2=\""
      << top + plot_h << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << left << "\" y=\"" << top + plot_h + 16 << "\" font-size=\"11\">" << h.lo
      << "</text>\n";
  svg << "<text x=\"" << left + w - 60 << "\" y=\"" << top + plot_h + 16 << "\" font-size=\"11\">" << h.hi
      << "</text>\n";
  svg << "<text x=\"" << left + w - 150 << "\" y=\"18\" font-size=\"11\" fill=\"#1f77b4\">clean</text>\n";
  svg << "<text x=\"" << left + w - 90 << "\" y=\"18\" font-size=\"11\" fill=\"#d62728\">poisoned</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

nlohmann::ordered_json DefenseReport::to_json() const {
  nlohmann::ordered_json j;
  j["defense"] = defense;
  j["samples"] = scores.size();
  j["higher_is_suspicious"] = higher_is_suspicious;
  j["auroc"] = auroc;
  j["scores"] = scores;
  j["labels"] = labels;
  j["histogram"] = {{"lo", histogram.lo}, {"hi", histogram.hi}, {"clean", histogram.clean},
                    {"poisoned", histogram.poisoned}};
  j["extras"] = extras;
  return j;
}

DefenseReport make_report(std::string name, std::vector<double> scores, std::vector<int> labels,
                          bool higher_is_suspicious) {
  DefenseReport r;
  r.defense = std::move(name);
  r.higher_is_suspicious = higher_is_suspicious;
  std::vector<double> oriented = scores;
  if (!higher_is_suspicious) {
    for (double& s : oriented) s = -s;
  }
  r.auroc = auroc(oriented, labels);
  r.histogram = make_histogram(scores, labels);
  r.scores = std::move(scores);
  r.labels = std::move(labels);
  return r;
}

// ---- STRIP ----

double mean_step_entropy(const captioner::DecodeResult& decode) {
  if (decode.distributions.empty()) return 0.0;
  double total = 0;
  for (const auto& dist : decode.distributions) {
    for (double p : dist) {
      if (p > 0) total -= p * std::log(p);
    }
  }
  return total / static_cast<double>(decode.distributions.size());
}

double strip_entropy(const captioner::CaptionModel& model, const Image& image,
                     std::span<const ImageRecord> held_out, const StripOptions& options) {
  if (options.blends <= 0) throw DefenseError("STRIP needs at least one blend");
  if (options.blend_weight < 0 || options.blend_weight > 1) throw DefenseError("blend weight outside [0, 1]");
  if (held_out.empty() ||
      (!options.with_replacement && static_cast<int>(held_out.size()) < options.blends)) {
    throw DefenseError("STRIP needs " + std::to_string(options.blends) + " overlay images, have " +
                       std::to_string(held_out.size()));
  }
  std::vector<std::size_t> picks(held_out.size());
  std::iota(picks.begin(), picks.end(), 0);
  Rng rng(options.seed);
  if (options.with_replacement) {
    std::uniform_int_distribution<std::size_t> pick(0, held_out.size() - 1);
    for (auto& p : picks) p = pick(rng);
    picks.resize(static_cast<std::size_t>(options.blends));
    for (auto& p : picks) p = pick(rng);
  } else {
    std::shuffle(picks.begin(), picks.end(), rng);
    picks.resize(static_cast<std::size_t>(options.blends));
  }
  const double w = options.blend_weight;
  double sum = 0;
  for (std::size_t idx : picks) {
    const Image& overlay = held_out[idx].pixels;
    if (overlay.height != image.height || overlay.width != image.width) {
      throw DefenseError("overlay " + held_out[idx].image_id + " has a different size");
    }
    Image blended(image.height, image.width, 0);
    for (std::size_t i = 0; i < blended.data.size(); ++i) {
      const double v = (1 - w) * image.data[i] + w * overlay.data[i];
      blended.data[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
    sum += mean_step_entropy(model.greedy(blended));
  }
  return sum;
}

DefenseReport strip_report(const captioner::CaptionModel& model, std::span<const ImageRecord> samples,
                           const std::vector<int>& labels, std::span<const ImageRecord> held_out,
                           const StripOptions& options) {
  if (samples.size() != labels.size()) throw DefenseError("sample and label counts differ");
  std::vector<double> scores;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    StripOptions per = options;
    per.seed = derive_seed(options.seed, samples[i].image_id);
    scores.push_back(strip_entropy(model, samples[i].pixels, held_out, per));
  }
  DefenseReport r = make_report("strip", std::move(scores), labels, false);
  r.extras["blends"] = options.blends;
  r.extras["blend_weight"] = options.blend_weight;
  r.extras["max_entropy_per_blend"] = std::log(static_cast<double>(model.vocabulary().size()));
  return r;
}

// ---- Spectral signature ----

SpectralResult spectral_signature(const nn::Matrix& activations, int pca_dims) {
  if (activations.rows() == 0 || activations.cols() == 0) throw DefenseError("empty activation matrix");
  if (activations.cwiseAbs().maxCoeff() == 0) throw DefenseError("activation matrix has rank 0");
  if (pca_dims <= 0) throw DefenseError("PCA dimension must be positive");
  const nn::Matrix centered = activations.rowwise() - activations.colwise().mean();
  SpectralResult out;
  out.scores.assign(static_cast<std::size_t>(activations.rows()), 0.0);
  const long dims = std::min<long>({static_cast<long>(pca_dims), activations.rows() - 1, activations.cols()});
  out.pca_dims = static_cast<int>(std::max(0L, dims));
  if (dims <= 0 || centered.cwiseAbs().maxCoeff() == 0) return out;
  Eigen::BDCSVD<nn::Matrix> pca(centered, Eigen::ComputeThinV);
  const nn::Matrix reduced = centered * pca.matrixV().leftCols(dims);
  Eigen::BDCSVD<nn::Matrix> svd(reduced, Eigen::ComputeThinV);
  const nn::Vector v = svd.matrixV().col(0);
  const nn::Vector proj = reduced * v;
  for (long i = 0; i < proj.size(); ++i) out.scores[static_cast<std::size_t>(i)] = std::abs(proj(i));
  return out;
}

// ---- Activation clustering ----

KMeansResult kmeans(const nn::Matrix& points, int k, Rng& rng, int max_iterations) {
  const long n = points.rows();
  if (k <= 0 || n < k) throw DefenseError("k-means needs at least k points");
  nn::Matrix centers(k, points.cols());
  std::uniform_int_distribution<long> first(0, n - 1);
  centers.row(0) = points.row(first(rng));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (int c = 1; c < k; ++c) {
    double total = 0;
    for (long i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < c; ++j) best = std::min(best, (points.row(i) - centers.row(j)).squaredNorm());
      d2[static_cast<std::size_t>(i)] = best;
      total += best;
    }
    if (total == 0) throw DefenseError("k-means start collapsed: all points coincide");
    std::uniform_real_distribution<double> u(0, total);
    double target = u(rng);
    long pick = n - 1;
    for (long i = 0; i < n; ++i) {
      target -= d2[static_cast<std::size_t>(i)];
      if (target <= 0) {
        pick = i;
        break;
      }
    }
    centers.row(c) = points.row(pick);
  }
  KMeansResult out;
  out.assignment.assign(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < max_iterations; ++iter) {
    bool changed = false;
    double inertia = 0;
    for (long i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = (points.row(i) - centers.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      inertia += best_d;
      if (out.assignment[static_cast<std::size_t>(i)] != best) {
        out.assignment[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    out.inertia_trace.push_back(inertia);
    out.inertia = inertia;
    if (!changed) break;
    centers.setZero();
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (long i = 0; i < n; ++i) {
      const int c = out.assignment[static_cast<std::size_t>(i)];
      centers.row(c) += points.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) throw DefenseError("k-means produced an empty cluster");
      centers.row(c) /= counts[static_cast<std::size_t>(c)];
    }
  }
  return out;
}

std::vector<double> silhouette_samples(const nn::Matrix& points, const std::vector<int>& assignment, int k) {
  const long n = points.rows();
  std::vector<int> counts(static_cast<std::size_t>(k), 0);
  for (int a : assignment) ++counts[static_cast<std::size_t>(a)];
  std::vector<double> s(static_cast<std::size_t>(n), 0.0);
  for (long i = 0; i < n; ++i) {
    const int own = assignment[static_cast<std::size_t>(i)];
    if (counts[static_cast<std::size_t>(own)] <= 1) continue;
    std::vector<double> sums(static_cast<std::size_t>(k), 0.0);
    for (long j = 0; j < n; ++j) {
      if (j == i) continue;
      sums[static_cast<std::size_t>(assignment[static_cast<std::size_t>(j)])] +=
          (points.row(i) - points.row(j)).norm();
    }
    const double a = sums[static_cast<std::size_t>(own)] / (counts[static_cast<std::size_t>(own)] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      if (c == own || counts[static_cast<std::size_t>(c)] == 0) continue;
      b = std::min(b, sums[static_cast<std::size_t>(c)] / counts[static_cast<std::size_t>(c)]);
    }
    const double m = std::max(a, b);
    s[static_cast<std::size_t>(i)] = m > 0 ? (b - a) / m : 0.0;
  }
  return s;
}

ClusterResult activation_clustering(const nn::Matrix& activations, std::uint64_t seed, int restarts,
                                    double gap_threshold) {
  if (activations.rows() < 4) throw DefenseError("activation clustering needs at least 4 samples");
  if (restarts <= 0) throw DefenseError("activation clustering needs at least one restart");
  Rng rng(derive_seed(seed, "activation-clustering"));
  KMeansResult best;
  bool have = false;
  int kept = 0;
  int failures = 0;
  while (kept < restarts) {
    KMeansResult run;
    bool ok = true;
    try {
      run = kmeans(activations, 2, rng);
      const long ones = std::count(run.assignment.begin(), run.assignment.end(), 1);
      ok = ones >= 2 && activations.rows() - ones >= 2;
    } catch (const DefenseError&) {
      ok = false;
    }
    if (!ok) {
      if (++failures >= restarts) {
        throw DefenseError("activation clustering kept producing degenerate clusters after " +
                           std::to_string(failures) + " attempts");
      }
      continue;
    }
    failures = 0;
    ++kept;
    if (!have || run.inertia < best.inertia) {
      best = std::move(run);
      have = true;
    }
  }
  ClusterResult out;
  out.assignment = best.assignment;
  out.inertia_trace = best.inertia_trace;
  out.sample_silhouettes = silhouette_samples(activations, out.assignment, 2);
  out.sizes.assign(2, 0);
  out.silhouettes.assign(2, 0.0);
  for (std::size_t i = 0; i < out.assignment.size(); ++i) {
    const auto c = static_cast<std::size_t>(out.assignment[i]);
    ++out.sizes[c];
    out.silhouettes[c] += out.sample_silhouettes[i];
  }
  for (std::size_t c = 0; c < 2; ++c) out.silhouettes[c] /= out.sizes[c];
  out.gap = std::abs(out.silhouettes[0] - out.silhouettes[1]);
  out.flagged = out.gap > gap_threshold;
  return out;
}

// ---- ONION ----

namespace {

const std::string kBos = "<s>";
const std::string kEos = "</s>";
const std::string kUnk = "<unk>";

std::string key(const std::string& a, const std::string& b) { return a + '\x1f' + b; }
std::string key(const std::string& a, const std::string& b, const std::string& c) {
  return a + '\x1f' + b + '\x1f' + c;
}

}  // namespace

PerplexityOracle::PerplexityOracle(const std::vector<Tokens>& corpus, double k) : k_(k) {
  if (corpus.empty()) throw DefenseError("perplexity oracle needs a non-empty corpus");
  if (k <= 0) throw DefenseError("add-k smoothing needs k > 0");
  vocab_[kEos] = 0;
  vocab_[kUnk] = 0;
  for (const Tokens& s : corpus) {
    for (const auto& w : s) ++vocab_[w];
  }
  for (const Tokens& s : corpus) {
    Tokens padded = {kBos, kBos};
    padded.insert(padded.end(), s.begin(), s.end());
    padded.push_back(kEos);
    for (std::size_t i = 2; i < padded.size(); ++i) {
      ++bigrams_[key(padded[i - 2], padded[i - 1])];
      ++trigrams_[key(padded[i - 2], padded[i - 1], padded[i])];
    }
  }
}

std::string PerplexityOracle::norm(const std::string& w) const {
  if (w == kBos) return w;
  return vocab_.count(w) ? w : kUnk;
}

double PerplexityOracle::probability(const std::string& u, const std::string& v, const std::string& w) const {
  const auto tri = trigrams_.find(key(norm(u), norm(v), norm(w)));
  const auto bi = bigrams_.find(key(norm(u), norm(v)));
  const double num = (tri == trigrams_.end() ? 0 : tri->second) + k_;
  const double den = (bi == bigrams_.end() ? 0 : bi->second) + k_ * static_cast<double>(vocab_.size());
  return num / den;
}

double PerplexityOracle::perplexity(const Tokens& sentence) const {
  Tokens padded = {kBos, kBos};
  padded.insert(padded.end(), sentence.begin(), sentence.end());
  padded.push_back(kEos);
  double nll = 0;
  for (std::size_t i = 2; i < padded.size(); ++i) {
    nll -= std::log(probability(padded[i - 2], padded[i - 1], padded[i]));
  }
  return std::exp(nll / static_cast<double>(padded.size() - 2));
}

PerplexityOracle train_perplexity_oracle(const std::vector<Tokens>& corpus, double k) {
  return PerplexityOracle(corpus, k);
}

std::vector<double> onion_suspicion(const Tokens& caption, const PerplexityOracle& lm) {
  if (caption.size() < 2) throw DefenseError("ONION needs captions of at least two words");
  const double base = lm.perplexity(caption);
  std::vector<double> scores;
  for (std::size_t i = 0; i < caption.size(); ++i) {
    Tokens without = caption;
    without.erase(without.begin() + static_cast<std::ptrdiff_t>(i));
    scores.push_back(base - lm.perplexity(without));
  }
  return scores;
}

double onion_threshold(const std::vector<Tokens>& clean_captions, const PerplexityOracle& lm, double quantile) {
  std::vector<double> all;
  for (const Tokens& c : clean_captions) {
    if (c.size() < 2) continue;
    const auto s = onion_suspicion(c, lm);
    all.insert(all.end(), s.begin(), s.end());
  }
  if (all.empty()) throw DefenseError("no clean captions to calibrate the ONION threshold");
  std::sort(all.begin(), all.end());
  const double pos = std::clamp(quantile, 0.0, 1.0) * static_cast<double>(all.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, all.size() - 1);
  return all[lo] + (pos - static_cast<double>(lo)) * (all[hi] - all[lo]);
}

DefenseReport onion_report(const std::vector<Tokens>& captions, const std::vector<int>& labels,
                           const PerplexityOracle& lm, double threshold,
                           const std::vector<std::string>& target_words) {
  if (captions.size() != labels.size()) throw DefenseError("caption and label counts differ");
  std::vector<double> scores;
  std::vector<double> substituted;
  std::vector<double> other;
  int flagged_poisoned = 0;
  int flagged_clean = 0;
  for (std::size_t i = 0; i < captions.size(); ++i) {
    const auto s = onion_suspicion(captions[i], lm);
    const double top = *std::max_element(s.begin(), s.end());
    scores.push_back(top);
    if (top > threshold) ++(labels[i] == 1 ? flagged_poisoned : flagged_clean);
    for (std::size_t w = 0; w < s.size(); ++w) {
      const bool is_target =
          std::find(target_words.begin(), target_words.end(), captions[i][w]) != target_words.end();
      (labels[i] == 1 && is_target ? substituted : other).push_back(s[w]);
    }
  }
  DefenseReport r = make_report("onion", std::move(scores), labels, true);
  r.extras["threshold"] = threshold;
  r.extras["flagged_poisoned"] = flagged_poisoned;
  r.extras["flagged_clean"] = flagged_clean;
  r.extras["substituted_word_scores"] = substituted;
  if (!substituted.empty() && !other.empty()) {
    std::vector<double> word_scores = substituted;
    word_scores.insert(word_scores.end(), other.begin(), other.end());
    std::vector<int> word_labels(substituted.size(), 1);
    word_labels.resize(word_scores.size(), 0);
    r.extras["substituted_word_auroc"] = auroc(word_scores, word_labels);
  }
  return r;
}

}  // namespace captrap::defense
