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

#include "captrap/detector/ciou.hpp"

#include <cmath>
#include <numbers>

#include "captrap/core/errors.hpp"

namespace captrap::detector {

namespace {

// Forward-mode dual number over the four predicted coordinates.
struct Dual {
  double v = 0;
  std::array<double, 4> d{};

  static Dual constant(double x) { return {x, {}}; }
  static Dual variable(double x, int i) {
    Dual r{x, {}};
    r.d[static_cast<std::size_t>(i)] = 1.0;
    return r;
  }
};

Dual operator+(const Dual& a, const Dual& b) {
  Dual r{a.v + b.v, {}};
  for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] + b.d[i];
  return r;
}
Dual operator-(const Dual& a, const Dual& b) {
  Dual r{a.v - b.v, {}};
  for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] - b.d[i];
  return r;
}
Dual operator*(const Dual& a, const Dual& b) {
  Dual r{a.v * b.v, {}};
  for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
  return r;
}
Dual operator/(const Dual& a, const Dual& b) {
  Dual r{a.v / b.v, {}};
  for (int i = 0; i < 4; ++i) r.d[i] = (a.d[i] * b.v - a.v * b.d[i]) / (b.v * b.v);
  return r;
}
Dual min(const Dual& a, const Dual& b) { return a.v <= b.v ? a : b; }
Dual max(const Dual& a, const Dual& b) { return a.v >= b.v ? a : b; }
Dual atan(const Dual& a) {
  Dual r{std::atan(a.v), {}};
  const double s = 1.0 / (1.0 + a.v * a.v);
  for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] * s;
  return r;
}

Dual ciou(const BBox& pred, const BBox& gt) {
  if (!pred.valid() || !gt.valid()) throw DomainError("CIoU of a zero-area box");
  const Dual pxa = Dual::variable(pred.xa, 0), pya = Dual::variable(pred.ya, 1);
  const Dual pxb = Dual::variable(pred.xb, 2), pyb = Dual::variable(pred.yb, 3);
  const Dual gxa = Dual::constant(gt.xa), gya = Dual::constant(gt.ya);
  const Dual gxb = Dual::constant(gt.xb), gyb = Dual::constant(gt.yb);
  const Dual zero = Dual::constant(0.0);

  const Dual pw = pxb - pxa, ph = pyb - pya;
  const Dual gw = gxb - gxa, gh = gyb - gya;
  const Dual inter = max(min(pxb, gxb) - max(pxa, gxa), zero) * max(min(pyb, gyb) - max(pya, gya), zero);
  const Dual uni = pw * ph + gw * gh - inter;
  const Dual iou = inter / uni;

  const Dual half = Dual::constant(0.5);
  const Dual dx = (pxa + pxb) * half - (gxa + gxb) * half;
  const Dual dy = (pya + pyb) * half - (gya + gyb) * half;
  const Dual rho2 = dx * dx + dy * dy;
  const Dual cw = max(pxb, gxb) - min(pxa, gxa);
  const Dual ch = max(pyb, gyb) - min(pya, gya);
  const Dual c2 = cw * cw + ch * ch;

  const Dual angle = atan(gw / gh) - atan(pw / ph);
  const Dual v = Dual::constant(4.0 / (std::numbers::pi * std::numbers::pi)) * angle * angle;
  const Dual one = Dual::constant(1.0);
  const Dual denom = one - iou + v;
  // v == 0 forces the aspect term to vanish; avoids 0/0 for identical boxes.
  const Dual aspect = denom.v > 0 ? (v / denom) * v : zero;
  return one - iou + rho2 / c2 + aspect;
}

}  // namespace

double ciou_loss(const BBox& pred, const BBox& gt) { return ciou(pred, gt).v; }

CiouValue ciou_loss_with_grad(const BBox& pred, const BBox& gt) {
  const Dual r = ciou(pred, gt);
  return {r.v, r.d};
}

}  // namespace captrap::detector
