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

#include "captrap/nn/layers.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>

#include "captrap/core/errors.hpp"

namespace captrap::nn {

Conv2d::Conv2d(int in, int out, int k, int s, int p)
    : in_channels(in), out_channels(out), kernel(k), stride(s), padding(p),
      weight(Matrix::Zero(out, in * k * k)), bias(Matrix::Zero(out, 1)) {}

void Conv2d::init(Rng& rng) {
  const double std_dev = std::sqrt(2.0 / (in_channels * kernel * kernel));
  std::normal_distribution<double> dist(0.0, std_dev);
  for (Eigen::Index i = 0; i < weight.size(); ++i) weight.data()[i] = dist(rng);
  bias.setZero();
}

namespace {
constexpr double kInputScale = 1.0 / 127.5;
}  // namespace

FeatureMap image_to_input(const ImageF& pixels) {
  FeatureMap x(3, pixels.height, pixels.width);
  for (int y = 0; y < pixels.height; ++y) {
    for (int xx = 0; xx < pixels.width; ++xx) {
      for (int c = 0; c < 3; ++c) {
        x.values(c, y * pixels.width + xx) = pixels.at(y, xx, c) * kInputScale - 1.0;
      }
    }
  }
  return x;
}

ImageF input_grad_to_pixels(const FeatureMap& d_input) {
  ImageF g(d_input.height, d_input.width);
  for (int y = 0; y < d_input.height; ++y) {
    for (int x = 0; x < d_input.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        g.at(y, x, c) = d_input.values(c, y * d_input.width + x) * kInputScale;
      }
    }
  }
  return g;
}

FeatureMap conv_forward(const Conv2d& conv, const FeatureMap& x, ConvTape* tape) {
  const int k = conv.kernel;
  const int out_h = conv.output_size(x.height);
  const int out_w = conv.output_size(x.width);
  const int n_out = out_h * out_w;
  Matrix cols(conv.in_channels * k * k, n_out);
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      double* col = cols.data() + static_cast<Eigen::Index>(oy * out_w + ox) * cols.rows();
      const int iy0 = oy * conv.stride - conv.padding;
      const int ix0 = ox * conv.stride - conv.padding;
      for (int c = 0; c < conv.in_channels; ++c) {
        for (int ky = 0; ky < k; ++ky) {
          const int iy = iy0 + ky;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ix0 + kx;
            *col++ = (iy >= 0 && iy < x.height && ix >= 0 && ix < x.width)
                         ? x.values(c, iy * x.width + ix)
                         : 0.0;
          }
        }
      }
    }
  }
  FeatureMap y;
  y.channels = conv.out_channels;
  y.height = out_h;
  y.width = out_w;
  y.values.noalias() = conv.weight * cols;
  y.values.colwise() += conv.bias.col(0);
  if (tape) {
    tape->cols = std::move(cols);
    tape->in_height = x.height;
    tape->in_width = x.width;
  }
  return y;
}

FeatureMap conv_backward(const Conv2d& conv, const ConvTape& tape, const FeatureMap& d_out,
                         Matrix* d_weight, Matrix* d_bias, bool need_input_grad) {
  if (d_weight) d_weight->noalias() += d_out.values * tape.cols.transpose();
  if (d_bias) *d_bias += d_out.values.rowwise().sum();
  if (!need_input_grad) return {};
  const Matrix d_cols = conv.weight.transpose() * d_out.values;
  FeatureMap dx(conv.in_channels, tape.in_height, tape.in_width);
  const int k = conv.kernel;
  for (int oy = 0; oy < d_out.height; ++oy) {
    for (int ox = 0; ox < d_out.width; ++ox) {
      const double* col =
          d_cols.data() + static_cast<Eigen::Index>(oy * d_out.width + ox) * d_cols.rows();
      const int iy0 = oy * conv.stride - conv.padding;
      const int ix0 = ox * conv.stride - conv.padding;
      for (int c = 0; c < conv.in_channels; ++c) {
        for (int ky = 0; ky < k; ++ky) {
          const int iy = iy0 + ky;
          for (int kx = 0; kx < k; ++kx, ++col) {
            const int ix = ix0 + kx;
            if (iy >= 0 && iy < dx.height && ix >= 0 && ix < dx.width) {
              dx.values(c, iy * dx.width + ix) += *col;
            }
          }
        }
      }
    }
  }
  return dx;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

Matrix silu(const Matrix& x) {
  return x.unaryExpr([](double v) { return v * sigmoid(v); });
}

void silu_backward(const Matrix& pre, Matrix& grad) {
  grad = grad.binaryExpr(pre, [](double g, double v) {
    const double s = sigmoid(v);
    return g * s * (1.0 + v * (1.0 - s));
  });
}

GradList zeros_like(const ConstParamList& params) {
  GradList grads;
  grads.reserve(params.size());
  for (const auto* p : params) grads.push_back(Matrix::Zero(p->rows(), p->cols()));
  return grads;
}

double squared_norm(const GradList& grads) {
  double total = 0;
  for (const auto& g : grads) total += g.squaredNorm();
  return total;
}

void Adam::step(const ParamList& params, const GradList& grads, double scale) {
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.push_back(Matrix::Zero(p->rows(), p->cols()));
      v_.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix g = grads[i] * scale;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    params[i]->array() -=
        lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

namespace {
constexpr std::uint32_t kMagic = 0x50525443;  // "CTRP"
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_params(const std::filesystem::path& path, const ConstParamList& params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  auto put = [&](const auto& v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
  put(kMagic);
  put(kVersion);
  put(static_cast<std::uint64_t>(params.size()));
  for (const auto* p : params) {
    put(static_cast<std::int64_t>(p->rows()));
    put(static_cast<std::int64_t>(p->cols()));
    out.write(reinterpret_cast<const char*>(p->data()),
              static_cast<std::streamsize>(sizeof(double) * p->size()));
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

void load_params(const std::filesystem::path& path, const ParamList& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  auto get = [&](auto& v) { in.read(reinterpret_cast<char*>(&v), sizeof(v)); };
  std::uint32_t magic = 0, version = 0;
  std::uint64_t count = 0;
  get(magic);
  get(version);
  get(count);
  if (magic != kMagic || version != kVersion) throw IoError("not a captrap checkpoint: " + path.string());
  if (count != params.size()) throw IoError("checkpoint parameter count mismatch: " + path.string());
  for (auto* p : params) {
    std::int64_t rows = 0, cols = 0;
    get(rows);
    get(cols);
    if (rows != p->rows() || cols != p->cols()) {
      throw IoError("checkpoint shape mismatch: " + path.string());
    }
    in.read(reinterpret_cast<char*>(p->data()), static_cast<std::streamsize>(sizeof(double) * p->size()));
  }
  if (!in) throw IoError("truncated checkpoint " + path.string());
}

}  // namespace captrap::nn
