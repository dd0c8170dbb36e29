#pragma once

#include <stdexcept>
#include <string>

#include "enh/image.hpp"

namespace enh {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// 8-bit sRGB PNG or binary PPM (P6), chosen by file extension.
// PNG alpha is discarded; 16-bit inputs are rejected. Values quantize to
// round(v*255) on save, so save -> load reproduces 8-bit data exactly.
RgbImage load_image(const std::string& path);
void save_image(const std::string& path, const RgbImage& img);

}  // namespace enh
