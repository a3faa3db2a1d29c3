// SPDX-License-Identifier: Apache-2.0
//
// sRGB <-> CIE Lab (D65), standard constants.
#pragma once

#include <array>

#include "aftk/tensor.hpp"

namespace aftk {

using Rgb = std::array<double, 3>;  // sRGB in [0, 1]
using Lab = std::array<double, 3>;  // L in [0, 100]

/// Out-of-range channels are clamped; with strict = true they raise ParameterError instead.
Lab rgb_to_lab(const Rgb& rgb, bool strict = false);
Rgb lab_to_rgb(const Lab& lab);

}  // namespace aftk
