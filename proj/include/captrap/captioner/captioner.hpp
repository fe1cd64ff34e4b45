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
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "captrap/captioner/vocabulary.hpp"
#include "captrap/nn/layers.hpp"

namespace captrap::captioner {

struct CaptionerHyper {
  std::vector<int> encoder_widths = {16, 32, 32, 48};  // three stride-2 convs, then stride-1
  int embed_size = 32;
  int hidden_size = 96;
  int attention_size = 32;
  int max_length = 30;
};

enum class ActivationSource {
  kEncoderPooled,  // mean of the final encoder feature grid
  kDecoderState,   // decoder hidden state after greedy decoding
};
ActivationSource parse_activation_source(const std::string& name);
std::string activation_source_name(ActivationSource source);

struct DecodeResult {
  std::vector<int> token_ids;  // without start/end markers
  Tokens tokens;
  bool ended = false;  // end token emitted before the length cap
  std::vector<std::vector<double>> distributions;  // per emitted step, over the vocabulary
  std::vector<std::vector<double>> attention;      // per emitted step, over grid cells
  std::vector<double> activation;                  // pooled encoder features
  std::vector<double> final_hidden;
  std::string caption() const { return join(tokens); }
};

// Encoder: stride-2 convolutions down to an 8x8 grid (for 64x64 input), a
// stride-1 convolution, SiLU throughout. Decoder: LSTM with additive
// attention over grid cells; initial state from the pooled features; output
// logits from [hidden; context].
class CaptionModel {
 public:
  CaptionModel() = default;
  CaptionModel(Vocabulary vocab, CaptionerHyper hyper, std::uint64_t seed);

  const Vocabulary& vocabulary() const { return vocab_; }
  const CaptionerHyper& hyper() const { return hyper_; }
  std::uint64_t seed() const { return seed_; }

  DecodeResult greedy(const Image& pixels) const;
  // Beam search by summed log-probability; beam width 1 is greedy.
  DecodeResult beam(const Image& pixels, int width) const;
  std::vector<double> activations(const Image& pixels, ActivationSource source) const;

  // Mean per-token cross-entropy of teacher-forced captions, averaged over
  // captions. Accumulates parameter gradients when `grads` is given and
  // returns the pixel gradient when `pixel_grad` is given.
  double caption_loss(const ImageF& pixels, const std::vector<std::vector<int>>& captions,
                      nn::GradList* grads, ImageF* pixel_grad) const;

  nn::ParamList parameters();
  nn::ConstParamList parameters() const;

 private:
  struct Encoded;
  struct StepCache;
  Encoded encode(const ImageF& pixels, bool keep_tape) const;
  void init_state(const Encoded& enc, nn::Vector& h, nn::Vector& c) const;
  void step(const Encoded& enc, int token, const nn::Vector& h_prev, const nn::Vector& c_prev,
            StepCache& cache) const;

  Vocabulary vocab_;
  CaptionerHyper hyper_;
  std::uint64_t seed_ = 0;
  std::vector<nn::Conv2d> encoder_;
  nn::Matrix embed_;      // E x V
  nn::Matrix att_feat_;   // A x D
  nn::Matrix att_hid_;    // A x H
  nn::Matrix att_bias_;   // A x 1
  nn::Matrix att_score_;  // A x 1
  nn::Matrix lstm_x_;     // 4H x (E + D)
  nn::Matrix lstm_h_;     // 4H x H
  nn::Matrix lstm_b_;     // 4H x 1
  nn::Matrix out_w_;      // V x (H + D)
  nn::Matrix out_b_;      // V x 1
  nn::Matrix init_h_w_;   // H x D
  nn::Matrix init_h_b_;
  nn::Matrix init_c_w_;
  nn::Matrix init_c_b_;
};

struct CaptionerTrainOptions {
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 3e-3;
  double clip_norm = 5.0;
  CaptionerHyper hyper;
  // Called after each epoch with (epoch, mean loss).
  std::function<void(int, double)> on_epoch;
};

struct CaptionerTrainResult {
  CaptionModel model;
  std::vector<double> loss_trace;  // per-epoch mean caption loss
};

// Vocabulary from the training captions; Adam with cosine decay; every
// caption of an image is used each epoch. Throws InputError on empty input
// and TrainingError (with the epoch) on a non-finite loss.
CaptionerTrainResult train_captioner(const std::vector<ImageRecord>& train,
                                     const CaptionerTrainOptions& options, std::uint64_t seed);

// One row per record.
nn::Matrix capture_activations(const CaptionModel& model, std::span<const ImageRecord> records,
                               ActivationSource source = ActivationSource::kEncoderPooled);

struct CaptionerSidecar {
  std::vector<std::string> vocabulary;
  CaptionerHyper hyper;
  std::uint64_t seed = 0;
  std::vector<double> loss_trace;
};

void save_captioner(const CaptionModel& model, const std::vector<double>& loss_trace,
                    const std::filesystem::path& weights_path);
CaptionModel load_captioner(const std::filesystem::path& weights_path,
                            CaptionerSidecar* sidecar = nullptr);

}  // namespace captrap::captioner
