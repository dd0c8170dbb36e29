#pragma once

#include <array>
#include <vector>

#include "enh/image.hpp"

namespace enh {

// Normalized crop window, (x,y) top-left, (w,h) extent. Windows smaller
// than kMinExtent are rejected: an unbounded shrink lets the generator
// win on degenerate crops.
struct CropRect {
    double x = 0.0, y = 0.0, w = 1.0, h = 1.0;

    static constexpr double kMinExtent = 0.4;

    bool valid() const {
        return w >= kMinExtent && w <= 1.0 && h >= kMinExtent && h <= 1.0 &&
               x >= 0.0 && x <= 1.0 - w + 1e-12 && y >= 0.0 && y <= 1.0 - h + 1e-12;
    }
};

// Continuous source coordinates for each output pixel, pixel-center
// convention: normalized coordinate u maps to source pixel u*size - 0.5.
struct SamplingGrid {
    int out_h = 0, out_w = 0;
    std::vector<double> sx, sy;  // out_w and out_h entries (separable grid)
};

SamplingGrid make_grid(const CropRect& rect, int out_h, int out_w, int src_h, int src_w);

LabImage bilinear_sample(const LabImage& img, const SamplingGrid& grid);

// Gradients w.r.t. source pixels and [x,y,w,h].
void vjp_crop(const LabImage& img, const CropRect& rect, int out_h, int out_w,
              const std::vector<double>& out_grad,
              std::vector<double>& grad_img, std::array<double, 4>& grad_rect);

}  // namespace enh
