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

#include <array>

#include "captrap/core/types.hpp"

namespace captrap::detector {

// Complete-IoU box regression loss:
//   1 - IoU + rho^2 / c^2 + ciou_alpha * v
//   v          = 4 / pi^2 * (atan(w_gt / h_gt) - atan(w / h))^2
//   ciou_alpha = v / (1 - IoU + v)
// rho: distance between box centers; c: diagonal of the smallest enclosing box.
// Throws DomainError for a zero-area box.
double ciou_loss(const BBox& pred, const BBox& gt);

struct CiouValue {
  double loss = 0;
  std::array<double, 4> d_pred{};  // d loss / d (xa, ya, xb, yb) of pred
};
CiouValue ciou_loss_with_grad(const BBox& pred, const BBox& gt);

}  // namespace captrap::detector
