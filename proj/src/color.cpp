// SPDX-License-Identifier: Apache-2.0
#include "aftk/color.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "aftk/errors.hpp"

namespace aftk {

namespace {

constexpr double kDelta = 6.0 / 29.0;
constexpr double kWhite[3] = {0.95047, 1.0, 1.08883};

const Eigen::Matrix3d& rgb_to_xyz_matrix() {
  static const Eigen::Matrix3d m = (Eigen::Matrix3d() << 0.4124564, 0.3575761, 0.1804375,  //
                                    0.2126729, 0.7151522, 0.0721750,                      //
                                    0.0193339, 0.1191920, 0.9503041)
                                       .finished();
  return m;
}

const Eigen::Matrix3d& xyz_to_rgb_matrix() {
  static const Eigen::Matrix3d m = rgb_to_xyz_matrix().inverse();
  return m;
}

double srgb_to_linear(double c) { return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4); }
double linear_to_srgb(double c) { return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055; }

double lab_f(double t) {
  return t > kDelta * kDelta * kDelta ? std::cbrt(t) : t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
}
double lab_f_inv(double f) { return f > kDelta ? f * f * f : 3.0 * kDelta * kDelta * (f - 4.0 / 29.0); }

}  // namespace

Lab rgb_to_lab(const Rgb& rgb, bool strict) {
  Eigen::Vector3d lin;
  for (int i = 0; i < 3; ++i) {
    double c = rgb[static_cast<std::size_t>(i)];
    if (!(c >= 0.0 && c <= 1.0)) {
      if (strict) throw ParameterError("rgb_to_lab: channel outside [0, 1]");
      c = std::clamp(std::isnan(c) ? 0.0 : c, 0.0, 1.0);
    }
    lin[i] = srgb_to_linear(c);
  }
  const Eigen::Vector3d xyz = rgb_to_xyz_matrix() * lin;
  const double fx = lab_f(xyz[0] / kWhite[0]);
  const double fy = lab_f(xyz[1] / kWhite[1]);
  const double fz = lab_f(xyz[2] / kWhite[2]);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

Rgb lab_to_rgb(const Lab& lab) {
  const double fy = (lab[0] + 16.0) / 116.0;
  const double fx = fy + lab[1] / 500.0;
  const double fz = fy - lab[2] / 200.0;
  const Eigen::Vector3d xyz(lab_f_inv(fx) * kWhite[0], lab_f_inv(fy) * kWhite[1], lab_f_inv(fz) * kWhite[2]);
  const Eigen::Vector3d lin = xyz_to_rgb_matrix() * xyz;
  return {linear_to_srgb(lin[0]), linear_to_srgb(lin[1]), linear_to_srgb(lin[2])};
}

}  // namespace aftk
