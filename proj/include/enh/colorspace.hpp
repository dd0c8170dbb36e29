#pragma once

#include <vector>

#include "enh/image.hpp"

namespace enh {

// sRGB (D65) <-> normalized CIELab. All channels of both representations
// live in [0,1]; out-of-range results are hard-clamped and the clamp
// passes zero gradient.
//
// Normalization: L*/100, (a*+128)/255, (b*+128)/255. The full sRGB gamut
// fits inside the a*/b* window, so in-gamut colors round-trip exactly.

void srgb_to_lab_px(const double rgb[3], double lab[3]);
void lab_to_srgb_px(const double lab[3], double rgb[3]);

// 3x3 Jacobians d(out)/d(in) at the given input point. Entries for clamped
// output channels are zero.
void jac_srgb_to_lab_px(const double rgb[3], double jac[3][3]);
void jac_lab_to_srgb_px(const double lab[3], double jac[3][3]);

LabImage srgb_to_lab(const RgbImage& img);
RgbImage lab_to_srgb(const LabImage& img);

// Vector-Jacobian products: upstream has the same element count as the
// image; the result is the gradient w.r.t. the function's input pixels.
std::vector<double> vjp_srgb_to_lab(const RgbImage& in, const std::vector<double>& upstream);
std::vector<double> vjp_lab_to_srgb(const LabImage& in, const std::vector<double>& upstream);

}  // namespace enh
