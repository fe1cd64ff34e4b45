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
#include <random>

#include "captrap/nn/layers.hpp"

namespace captrap::testing {

// Two Gaussian clouds of `per` points in 6 dimensions, the second shifted by
// `separation` along the first axis.
inline nn::Matrix two_clusters(int per, double separation, double spread_a, double spread_b, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 1);
  nn::Matrix m(2 * per, 6);
  for (int i = 0; i < 2 * per; ++i) {
    const bool second = i >= per;
    for (int c = 0; c < 6; ++c) {
      m(i, c) = n(rng) * (second ? spread_b : spread_a) + (second && c == 0 ? separation : 0.0);
    }
  }
  return m;
}

}  // namespace captrap::testing
