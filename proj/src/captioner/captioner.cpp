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

#include "captrap/captioner/captioner.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "captrap/core/errors.hpp"
#include "captrap/core/io.hpp"

namespace captrap::captioner {

using nn::FeatureMap;
using nn::Matrix;
using nn::Vector;

ActivationSource parse_activation_source(const std::string& name) {
  if (name == "encoder") return ActivationSource::kEncoderPooled;
  if (name == "decoder") return ActivationSource::kDecoderState;
  throw ConfigError("unknown activation source '" + name + "'");
}

std::string activation_source_name(ActivationSource source) {
  return source == ActivationSource::kEncoderPooled ? "encoder" : "decoder";
}

namespace {

void init_normal(Matrix& m, int rows, int cols, double std_dev, Rng& rng) {
  m.resize(rows, cols);
  std::normal_distribution<double> dist(0.0, std_dev);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

Vector sigmoid(const Vector& v) { return v.unaryExpr([](double x) { return nn::sigmoid(x); }); }

// log-softmax of `logits`.
Vector log_softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return logits.array() - lse;
}

int argmax(const Vector& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

struct CaptionModel::Encoded {
  Matrix features;  // D x L
  Vector pooled;    // D
  Matrix proj;      // A x L, includes the attention bias
  std::vector<nn::ConvTape> tapes;
  std::vector<Matrix> pre;
  int grid_h = 0;
  int grid_w = 0;
};

struct CaptionModel::StepCache {
  int token = 0;
  Vector h_prev, c_prev;
  Matrix z;  // A x L, tanh of attention pre-activation
  Vector alpha, ctx, x;
  Vector i, f, o, u;
  Vector c, tanh_c, h;
  Vector logits;
};

CaptionModel::CaptionModel(Vocabulary vocab, CaptionerHyper hyper, std::uint64_t seed)
    : vocab_(std::move(vocab)), hyper_(std::move(hyper)), seed_(seed) {
  if (hyper_.encoder_widths.size() < 4) throw ConfigError("captioner expects four encoder widths");
  if (hyper_.embed_size <= 0 || hyper_.hidden_size <= 0 || hyper_.attention_size <= 0 ||
      hyper_.max_length <= 0) {
    throw ConfigError("captioner sizes must be positive");
  }
  Rng rng(seed);
  int in = 3;
  for (std::size_t i = 0; i < hyper_.encoder_widths.size(); ++i) {
    encoder_.emplace_back(in, hyper_.encoder_widths[i], 3, i < 3 ? 2 : 1, 1);
    encoder_.back().init(rng);
    in = hyper_.encoder_widths[i];
  }
  const int D = in, E = hyper_.embed_size, H = hyper_.hidden_size, A = hyper_.attention_size;
  const int V = vocab_.size();
  init_normal(embed_, E, V, 0.3, rng);
  init_normal(att_feat_, A, D, 1.0 / std::sqrt(D), rng);
  init_normal(att_hid_, A, H, 1.0 / std::sqrt(H), rng);
  att_bias_ = Matrix::Zero(A, 1);
  init_normal(att_score_, A, 1, 1.0 / std::sqrt(A), rng);
  init_normal(lstm_x_, 4 * H, E + D, 1.0 / std::sqrt(E + D), rng);
  init_normal(lstm_h_, 4 * H, H, 1.0 / std::sqrt(H), rng);
  lstm_b_ = Matrix::Zero(4 * H, 1);
  lstm_b_.block(H, 0, H, 1).setConstant(1.0);  // forget gate
  init_normal(out_w_, V, H + D, 1.0 / std::sqrt(H + D), rng);
  out_b_ = Matrix::Zero(V, 1);
  init_normal(init_h_w_, H, D, 1.0 / std::sqrt(D), rng);
  init_h_b_ = Matrix::Zero(H, 1);
  init_normal(init_c_w_, H, D, 1.0 / std::sqrt(D), rng);
  init_c_b_ = Matrix::Zero(H, 1);
}

nn::ParamList CaptionModel::parameters() {
  nn::ParamList p;
  for (auto& conv : encoder_) {
    p.push_back(&conv.weight);
    p.push_back(&conv.bias);
  }
  for (Matrix* m : {&embed_, &att_feat_, &att_hid_, &att_bias_, &att_score_, &lstm_x_, &lstm_h_,
                    &lstm_b_, &out_w_, &out_b_, &init_h_w_, &init_h_b_, &init_c_w_, &init_c_b_}) {
    p.push_back(m);
  }
  return p;
}

nn::ConstParamList CaptionModel::parameters() const {
  const auto mutable_list = const_cast<CaptionModel*>(this)->parameters();
  return {mutable_list.begin(), mutable_list.end()};
}

CaptionModel::Encoded CaptionModel::encode(const ImageF& pixels, bool keep_tape) const {
  Encoded enc;
  FeatureMap x = nn::image_to_input(pixels);
  if (keep_tape) {
    enc.tapes.resize(encoder_.size());
    enc.pre.resize(encoder_.size());
  }
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    FeatureMap pre = nn::conv_forward(encoder_[i], x, keep_tape ? &enc.tapes[i] : nullptr);
    x = pre;
    x.values = nn::silu(pre.values);
    if (keep_tape) enc.pre[i] = std::move(pre.values);
  }
  enc.grid_h = x.height;
  enc.grid_w = x.width;
  enc.features = std::move(x.values);
  enc.pooled = enc.features.rowwise().mean();
  enc.proj = (att_feat_ * enc.features).colwise() + att_bias_.col(0);
  return enc;
}

void CaptionModel::init_state(const Encoded& enc, Vector& h, Vector& c) const {
  h = (init_h_w_ * enc.pooled + init_h_b_.col(0)).array().tanh();
  c = (init_c_w_ * enc.pooled + init_c_b_.col(0)).array().tanh();
}

void CaptionModel::step(const Encoded& enc, int token, const Vector& h_prev, const Vector& c_prev,
                        StepCache& s) const {
  const int H = hyper_.hidden_size, E = hyper_.embed_size;
  const int D = static_cast<int>(enc.features.rows());
  s.token = token;
  s.h_prev = h_prev;
  s.c_prev = c_prev;
  const Vector q = att_hid_ * h_prev;
  s.z = (enc.proj.colwise() + q).array().tanh();
  const Vector scores = s.z.transpose() * att_score_.col(0);
  const double m = scores.maxCoeff();
  s.alpha = (scores.array() - m).exp();
  s.alpha /= s.alpha.sum();
  s.ctx = enc.features * s.alpha;
  s.x.resize(E + D);
  s.x << embed_.col(token), s.ctx;
  const Vector g = lstm_x_ * s.x + lstm_h_ * h_prev + lstm_b_.col(0);
  s.i = sigmoid(g.segment(0, H));
  s.f = sigmoid(g.segment(H, H));
  s.o = sigmoid(g.segment(2 * H, H));
  s.u = g.segment(3 * H, H).array().tanh();
  s.c = s.f.cwiseProduct(c_prev) + s.i.cwiseProduct(s.u);
  s.tanh_c = s.c.array().tanh();
  s.h = s.o.cwiseProduct(s.tanh_c);
  Vector hz(H + D);
  hz << s.h, s.ctx;
  s.logits = out_w_ * hz + out_b_.col(0);
}

DecodeResult CaptionModel::greedy(const Image& pixels) const {
  const Encoded enc = encode(to_real(pixels), false);
  DecodeResult result;
  result.activation = to_std(enc.pooled);
  Vector h, c;
  init_state(enc, h, c);
  int token = Vocabulary::kStart;
  StepCache s;
  for (int t = 0; t < hyper_.max_length; ++t) {
    step(enc, token, h, c, s);
    h = s.h;
    c = s.c;
    result.distributions.push_back(to_std(log_softmax(s.logits).array().exp()));
    result.attention.push_back(to_std(s.alpha));
    token = argmax(s.logits);
    if (token == Vocabulary::kEnd) {
      result.ended = true;
      break;
    }
    result.token_ids.push_back(token);
  }
  result.final_hidden = to_std(h);
  result.tokens = vocab_.decode(result.token_ids);
  return result;
}

DecodeResult CaptionModel::beam(const Image& pixels, int width) const {
  if (width <= 0) throw ConfigError("beam width must be positive");
  const Encoded enc = encode(to_real(pixels), false);
  struct Hyp {
    std::vector<int> ids;
    double score = 0;
    Vector h, c;
    std::vector<std::vector<double>> dists, atts;
    int next = Vocabulary::kStart;
    bool ended = false;
  };
  std::vector<Hyp> beams(1);
  init_state(enc, beams[0].h, beams[0].c);
  StepCache s;
  for (int t = 0; t < hyper_.max_length; ++t) {
    struct Candidate {
      std::size_t hyp;
      int token;  // -1 keeps a finished hypothesis
      double score;
      double step_logp;
    };
    std::vector<Candidate> candidates;
    std::vector<StepCache> caches(beams.size());
    std::vector<Vector> logps(beams.size());
    for (std::size_t b = 0; b < beams.size(); ++b) {
      if (beams[b].ended) {
        candidates.push_back({b, -1, beams[b].score, 0.0});
        continue;
      }
      step(enc, beams[b].next, beams[b].h, beams[b].c, caches[b]);
      logps[b] = log_softmax(caches[b].logits);
      for (int k = 0; k < logps[b].size(); ++k) {
        candidates.push_back({b, k, beams[b].score + logps[b][k], logps[b][k]});
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.hyp != b.hyp) return a.hyp < b.hyp;
      return a.step_logp > b.step_logp;
    });
    std::vector<Hyp> next;
    for (const auto& cand : candidates) {
      if (static_cast<int>(next.size()) == width) break;
      Hyp h = beams[cand.hyp];
      if (cand.token >= 0) {
        const auto& cache = caches[cand.hyp];
        h.score = cand.score;
        h.h = cache.h;
        h.c = cache.c;
        h.dists.push_back(to_std(logps[cand.hyp].array().exp()));
        h.atts.push_back(to_std(cache.alpha));
        if (cand.token == Vocabulary::kEnd) {
          h.ended = true;
        } else {
          h.ids.push_back(cand.token);
          h.next = cand.token;
        }
      }
      next.push_back(std::move(h));
    }
    beams = std::move(next);
    if (std::all_of(beams.begin(), beams.end(), [](const Hyp& h) { return h.ended; })) break;
  }
  const Hyp& best = beams.front();
  DecodeResult result;
  result.token_ids = best.ids;
  result.tokens = vocab_.decode(best.ids);
  result.ended = best.ended;
  result.distributions = best.dists;
  result.attention = best.atts;
  result.activation = to_std(enc.pooled);
  result.final_hidden = to_std(best.h);
  return result;
}

std::vector<double> CaptionModel::activations(const Image& pixels, ActivationSource source) const {
  if (source == ActivationSource::kDecoderState) return greedy(pixels).final_hidden;
  return to_std(encode(to_real(pixels), false).pooled);
}

double CaptionModel::caption_loss(const ImageF& pixels, const std::vector<std::vector<int>>& captions,
                                  nn::GradList* grads, ImageF* pixel_grad) const {
  if (captions.empty()) throw InputError("caption loss needs at least one caption");
  const bool backward = grads != nullptr || pixel_grad != nullptr;
  const Encoded enc = encode(pixels, backward);
  const int H = hyper_.hidden_size, E = hyper_.embed_size;
  const int D = static_cast<int>(enc.features.rows());
  const int L = static_cast<int>(enc.features.cols());

  const std::size_t n_enc = 2 * encoder_.size();
  Matrix scratch_dummy;
  auto grad = [&](std::size_t k) -> Matrix& { return grads ? (*grads)[n_enc + k] : scratch_dummy; };
  Matrix d_features = Matrix::Zero(D, L);
  Matrix d_proj = Matrix::Zero(hyper_.attention_size, L);
  Vector d_pooled = Vector::Zero(D);

  double total = 0;
  std::vector<StepCache> caches;
  for (const auto& ids : captions) {
    std::vector<int> target(ids.begin(), ids.begin() + std::min<std::size_t>(ids.size(), hyper_.max_length - 1));
    target.push_back(Vocabulary::kEnd);
    const int T = static_cast<int>(target.size());
    const double weight = 1.0 / (static_cast<double>(T) * captions.size());
    Vector h, c;
    init_state(enc, h, c);
    const Vector h0 = h, c0 = c;
    caches.assign(static_cast<std::size_t>(T), {});
    int token = Vocabulary::kStart;
    std::vector<Vector> logps(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
      step(enc, token, h, c, caches[t]);
      h = caches[t].h;
      c = caches[t].c;
      logps[t] = log_softmax(caches[t].logits);
      total -= weight * logps[t][target[t]];
      token = target[t];
    }
    if (!backward) continue;

    Vector dh_next = Vector::Zero(H), dc_next = Vector::Zero(H);
    for (int t = T - 1; t >= 0; --t) {
      const StepCache& s = caches[t];
      Vector d_logits = logps[t].array().exp();
      d_logits[target[t]] -= 1.0;
      d_logits *= weight;
      Vector hz(H + D);
      hz << s.h, s.ctx;
      if (grads) {
        grad(8).noalias() += d_logits * hz.transpose();
        grad(9).col(0) += d_logits;
      }
      const Vector d_hz = out_w_.transpose() * d_logits;
      const Vector dh = d_hz.head(H) + dh_next;
      Vector d_ctx = d_hz.tail(D);

      const Vector d_o = dh.cwiseProduct(s.tanh_c);
      const Vector dc = dh.cwiseProduct(s.o).cwiseProduct((1.0 - s.tanh_c.array().square()).matrix()) + dc_next;
      Vector dg(4 * H);
      dg.segment(0, H) = dc.cwiseProduct(s.u).cwiseProduct(s.i.cwiseProduct((1.0 - s.i.array()).matrix()));
      dg.segment(H, H) = dc.cwiseProduct(s.c_prev).cwiseProduct(s.f.cwiseProduct((1.0 - s.f.array()).matrix()));
      dg.segment(2 * H, H) = d_o.cwiseProduct(s.o.cwiseProduct((1.0 - s.o.array()).matrix()));
      dg.segment(3 * H, H) = dc.cwiseProduct(s.i).cwiseProduct((1.0 - s.u.array().square()).matrix());
      dc_next = dc.cwiseProduct(s.f);
      if (grads) {
        grad(5).noalias() += dg * s.x.transpose();
        grad(6).noalias() += dg * s.h_prev.transpose();
        grad(7).col(0) += dg;
      }
      const Vector dx = lstm_x_.transpose() * dg;
      Vector dh_prev = lstm_h_.transpose() * dg;
      if (grads) grad(0).col(s.token) += dx.head(E);
      d_ctx += dx.tail(D);

      d_features.noalias() += d_ctx * s.alpha.transpose();
      const Vector d_alpha = enc.features.transpose() * d_ctx;
      const Vector d_scores = s.alpha.cwiseProduct((d_alpha.array() - s.alpha.dot(d_alpha)).matrix());
      if (grads) grad(4).col(0).noalias() += s.z * d_scores;
      const Matrix d_zpre = (att_score_.col(0) * d_scores.transpose()).cwiseProduct(
          (1.0 - s.z.array().square()).matrix());
      d_proj += d_zpre;
      const Vector dq = d_zpre.rowwise().sum();
      if (grads) grad(2).noalias() += dq * s.h_prev.transpose();
      dh_prev.noalias() += att_hid_.transpose() * dq;
      dh_next = dh_prev;
    }
    const Vector da_h = dh_next.cwiseProduct((1.0 - h0.array().square()).matrix());
    const Vector da_c = dc_next.cwiseProduct((1.0 - c0.array().square()).matrix());
    if (grads) {
      grad(10).noalias() += da_h * enc.pooled.transpose();
      grad(11).col(0) += da_h;
      grad(12).noalias() += da_c * enc.pooled.transpose();
      grad(13).col(0) += da_c;
    }
    d_pooled.noalias() += init_h_w_.transpose() * da_h + init_c_w_.transpose() * da_c;
  }
  if (!backward) return total;

  if (grads) {
    grad(1).noalias() += d_proj * enc.features.transpose();
    grad(3).col(0) += d_proj.rowwise().sum();
  }
  d_features.noalias() += att_feat_.transpose() * d_proj;
  d_features.colwise() += d_pooled / static_cast<double>(L);

  FeatureMap d(D, enc.grid_h, enc.grid_w);
  d.values = std::move(d_features);
  for (std::size_t li = encoder_.size(); li-- > 0;) {
    nn::silu_backward(enc.pre[li], d.values);
    Matrix* dw = grads ? &(*grads)[2 * li] : nullptr;
    Matrix* db = grads ? &(*grads)[2 * li + 1] : nullptr;
    const bool need_input = li > 0 || pixel_grad != nullptr;
    FeatureMap next = nn::conv_backward(encoder_[li], enc.tapes[li], d, dw, db, need_input);
    if (!need_input) break;
    d = std::move(next);
  }
  if (pixel_grad) *pixel_grad = nn::input_grad_to_pixels(d);
  return total;
}

CaptionerTrainResult train_captioner(const std::vector<ImageRecord>& train,
                                     const CaptionerTrainOptions& options, std::uint64_t seed) {
  if (train.empty()) throw InputError("captioner training set is empty");
  if (options.epochs < 0 || options.batch_size <= 0) throw ConfigError("bad captioner schedule");
  Vocabulary vocab = Vocabulary::from_records(train);
  std::vector<ImageF> images;
  std::vector<std::vector<std::vector<int>>> captions;
  for (const auto& r : train) {
    if (r.pixels.empty()) throw InputError("record " + r.image_id + " has no pixels");
    if (r.captions.empty()) throw InputError("record " + r.image_id + " has no captions");
    images.push_back(to_real(r.pixels));
    std::vector<std::vector<int>> ids;
    for (const auto& c : r.captions) ids.push_back(vocab.encode(c));
    captions.push_back(std::move(ids));
  }

  CaptionerTrainResult result{CaptionModel(std::move(vocab), options.hyper, seed), {}};
  CaptionModel& model = result.model;
  const auto params = model.parameters();
  nn::Adam adam(options.learning_rate);
  Rng rng(derive_seed(seed, "captioner-order"));
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  const long steps_per_epoch =
      (static_cast<long>(images.size()) + options.batch_size - 1) / options.batch_size;
  const long total_steps = std::max(1L, steps_per_epoch * options.epochs);
  long step = 0;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      nn::GradList grads = nn::zeros_like(std::as_const(model).parameters());
      for (std::size_t i = start; i < end; ++i) {
        const double loss = model.caption_loss(images[order[i]], captions[order[i]], &grads, nullptr);
        if (!std::isfinite(loss)) {
          throw TrainingError("captioner loss became non-finite at epoch " + std::to_string(epoch));
        }
        epoch_loss += loss;
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      const double norm = std::sqrt(nn::squared_norm(grads)) * scale;
      const double clip = norm > options.clip_norm ? options.clip_norm / norm : 1.0;
      const double progress = static_cast<double>(step) / total_steps;
      adam.set_lr(options.learning_rate *
                  (0.02 + 0.98 * 0.5 * (1 + std::cos(std::numbers::pi * progress))));
      adam.step(params, grads, scale * clip);
      ++step;
    }
    result.loss_trace.push_back(epoch_loss / static_cast<double>(images.size()));
    if (options.on_epoch) options.on_epoch(epoch, result.loss_trace.back());
  }
  return result;
}

Matrix capture_activations(const CaptionModel& model, std::span<const ImageRecord> records,
                           ActivationSource source) {
  Matrix out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto row = model.activations(records[i].pixels, source);
    if (i == 0) out.resize(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(row.size()));
    for (std::size_t k = 0; k < row.size(); ++k) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = row[k];
  }
  return out;
}

namespace {

std::filesystem::path sidecar_path(const std::filesystem::path& weights_path) {
  auto p = weights_path;
  p += ".json";
  return p;
}

}  // namespace

void save_captioner(const CaptionModel& model, const std::vector<double>& loss_trace,
                    const std::filesystem::path& weights_path) {
  nn::save_params(weights_path, model.parameters());
  nlohmann::ordered_json j;
  j["vocabulary"] = model.vocabulary().words();
  const auto& h = model.hyper();
  j["hyperparameters"] = {{"encoder_widths", h.encoder_widths},
                          {"embed_size", h.embed_size},
                          {"hidden_size", h.hidden_size},
                          {"attention_size", h.attention_size},
                          {"max_length", h.max_length}};
  j["seed"] = model.seed();
  j["loss_trace"] = loss_trace;
  write_text_file(sidecar_path(weights_path), j.dump(2) + "\n");
}

CaptionModel load_captioner(const std::filesystem::path& weights_path, CaptionerSidecar* sidecar) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(sidecar_path(weights_path)));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("captioner sidecar: ") + e.what());
  }
  CaptionerSidecar meta;
  meta.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
  const auto& hj = j.at("hyperparameters");
  meta.hyper.encoder_widths = hj.at("encoder_widths").get<std::vector<int>>();
  meta.hyper.embed_size = hj.at("embed_size").get<int>();
  meta.hyper.hidden_size = hj.at("hidden_size").get<int>();
  meta.hyper.attention_size = hj.at("attention_size").get<int>();
  meta.hyper.max_length = hj.at("max_length").get<int>();
  meta.seed = j.at("seed").get<std::uint64_t>();
  meta.loss_trace = j.value("loss_trace", std::vector<double>{});
  CaptionModel model(Vocabulary::from_words(meta.vocabulary), meta.hyper, meta.seed);
  if (model.vocabulary().words() != meta.vocabulary) throw ParseError("captioner vocabulary is not canonical");
  nn::load_params(weights_path, model.parameters());
  if (sidecar) *sidecar = std::move(meta);
  return model;
}

}  // namespace captrap::captioner
