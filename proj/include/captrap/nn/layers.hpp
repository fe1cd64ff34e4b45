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

#include <Eigen/Dense>
#include <filesystem>
#include <vector>

#include "captrap/core/random.hpp"
#include "captrap/core/types.hpp"

namespace captrap::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// channels x (height * width); column y * width + x.
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  Matrix values;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w) : channels(c), height(h), width(w), values(Matrix::Zero(c, h * w)) {}
};

// Pixels in [0, 255] mapped to [-1, 1]; gradients map back to pixel units.
FeatureMap image_to_input(const ImageF& pixels);
ImageF input_grad_to_pixels(const FeatureMap& d_input);

struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  Matrix weight;  // out x (in * k * k), row (c * k + ky) * k + kx
  Matrix bias;    // out x 1

  Conv2d() = default;
  Conv2d(int in, int out, int k, int s, int p);
  int output_size(int input) const { return (input + 2 * padding - kernel) / stride + 1; }
  void init(Rng& rng);
};

struct ConvTape {
  Matrix cols;
  int in_height = 0;
  int in_width = 0;
};

FeatureMap conv_forward(const Conv2d& conv, const FeatureMap& x, ConvTape* tape);

// Accumulates into d_weight / d_bias when non-null; returns the input
// gradient when need_input_grad, else an empty map.
FeatureMap conv_backward(const Conv2d& conv, const ConvTape& tape, const FeatureMap& d_out,
                         Matrix* d_weight, Matrix* d_bias, bool need_input_grad);

// x * sigmoid(x), elementwise.
Matrix silu(const Matrix& x);
// grad <- grad * silu'(pre)
void silu_backward(const Matrix& pre, Matrix& grad);

double sigmoid(double x);
// Numerically stable log(1 + exp(x)).
double softplus(double x);

using ParamList = std::vector<Matrix*>;
using ConstParamList = std::vector<const Matrix*>;
using GradList = std::vector<Matrix>;

GradList zeros_like(const ConstParamList& params);
double squared_norm(const GradList& grads);

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  // params -= lr * mhat / (sqrt(vhat) + eps), with grads multiplied by scale.
  void step(const ParamList& params, const GradList& grads, double scale = 1.0);
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

// Raw little-endian doubles with a small header. Throws IoError.
void save_params(const std::filesystem::path& path, const ConstParamList& params);
void load_params(const std::filesystem::path& path, const ParamList& params);

}  // namespace captrap::nn
