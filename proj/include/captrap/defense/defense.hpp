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

#include <cstdint>
#include <map>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "captrap/captioner/captioner.hpp"

namespace captrap::defense {

// Probability that a positive (label 1) outscores a negative, ties counted
// half. Throws DefenseError unless both labels are present.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

struct Histogram {
  double lo = 0;
  double hi = 0;
  std::vector<int> clean;
  std::vector<int> poisoned;
};

Histogram make_histogram(const std::vector<double>& scores, const std::vector<int>& labels, int bins = 20);
std::string histogram_svg(const Histogram& histogram, const std::string& title);

struct DefenseReport {
  std::string defense;
  std::vector<double> scores;
  std::vector<int> labels;  // 1 = poisoned
  // Whether larger scores mean "more likely poisoned" for this defense.
  bool higher_is_suspicious = true;
  double auroc = 0.5;  // computed on scores oriented toward suspicion
  Histogram histogram;
  nlohmann::ordered_json extras = nlohmann::ordered_json::object();

  nlohmann::ordered_json to_json() const;
};

// Fills auroc and histogram from scores and labels.
DefenseReport make_report(std::string name, std::vector<double> scores, std::vector<int> labels,
                          bool higher_is_suspicious);

// ---- STRIP ----

// Mean over decode steps of the entropy (nats) of the step distribution.
double mean_step_entropy(const captioner::DecodeResult& decode);

struct StripOptions {
  int blends = 500;
  double blend_weight = 0.5;
  bool with_replacement = false;
  std::uint64_t seed = 0;
};

// Sum over blends of the mean step entropy of the greedy decode of
// (1 - w) * image + w * overlay, overlays drawn from `held_out`.
double strip_entropy(const captioner::CaptionModel& model, const Image& image,
                     std::span<const ImageRecord> held_out, const StripOptions& options);

DefenseReport strip_report(const captioner::CaptionModel& model, std::span<const ImageRecord> samples,
                           const std::vector<int>& labels, std::span<const ImageRecord> held_out,
                           const StripOptions& options);

// ---- Spectral signature ----

struct SpectralResult {
  std::vector<double> scores;
  int pca_dims = 0;
};

// Centers rows, projects onto the top min(pca_dims, rows - 1, cols)
// principal directions, and scores each row by |<row, v>| with v the top
// right-singular vector of the projected matrix. Throws DefenseError on an
// empty or all-zero matrix.
SpectralResult spectral_signature(const nn::Matrix& activations, int pca_dims = 128);

// ---- Activation clustering ----

struct ClusterResult {
  std::vector<int> assignment;
  std::vector<int> sizes;
  std::vector<double> silhouettes;  // mean silhouette per cluster
  std::vector<double> sample_silhouettes;
  double gap = 0;
  bool flagged = false;
  std::vector<double> inertia_trace;  // per Lloyd iteration of the kept restart
};

struct KMeansResult {
  std::vector<int> assignment;
  std::vector<double> inertia_trace;
  double inertia = 0;
};

// Lloyd iterations from a k-means++ start. Throws DefenseError when a
// cluster ends up empty.
KMeansResult kmeans(const nn::Matrix& points, int k, Rng& rng, int max_iterations = 100);

// Silhouette of every row; rows in singleton clusters get 0.
std::vector<double> silhouette_samples(const nn::Matrix& points, const std::vector<int>& assignment, int k);

// 2-means with `restarts` seeded restarts, lowest inertia kept. A restart
// that leaves a cluster with fewer than two points is redrawn; after
// `restarts` such failures in a row DefenseError is thrown. Flag raised iff
// the per-cluster silhouette gap exceeds `gap_threshold`.
ClusterResult activation_clustering(const nn::Matrix& activations, std::uint64_t seed, int restarts = 10,
                                    double gap_threshold = 0.1);

// ---- ONION ----

// Trigram model with add-k smoothing over sentence-padded tokens. Unseen
// words map to an unknown token that is part of the vocabulary.
class PerplexityOracle {
 public:
  PerplexityOracle() = default;
  PerplexityOracle(const std::vector<Tokens>& corpus, double k);

  double probability(const std::string& u, const std::string& v, const std::string& w) const;
  // exp of the mean negative log-probability over the words and the end
  // marker.
  double perplexity(const Tokens& sentence) const;
  int vocabulary_size() const { return static_cast<int>(vocab_.size()); }
  double k() const { return k_; }

 private:
  std::string norm(const std::string& w) const;
  double k_ = 0.01;
  std::map<std::string, int> vocab_;
  std::map<std::string, int> bigrams_;
  std::map<std::string, int> trigrams_;
};

PerplexityOracle train_perplexity_oracle(const std::vector<Tokens>& corpus, double k = 0.01);

// PPL(caption) - PPL(caption without word i). Throws DefenseError for
// captions shorter than two words.
std::vector<double> onion_suspicion(const Tokens& caption, const PerplexityOracle& lm);

// Quantile of all word scores over the clean captions.
double onion_threshold(const std::vector<Tokens>& clean_captions, const PerplexityOracle& lm,
                       double quantile = 0.9);

// Per-sample score is the largest word suspicion in the caption. Extras hold
// the threshold, flag counts and the suspicion of each substituted word.
DefenseReport onion_report(const std::vector<Tokens>& captions, const std::vector<int>& labels,
                           const PerplexityOracle& lm, double threshold,
                           const std::vector<std::string>& target_words);

}  // namespace captrap::defense
