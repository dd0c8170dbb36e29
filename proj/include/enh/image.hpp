#pragma once

#include <cstddef>
#include <vector>

namespace enh {

// H x W x 3 interleaved channel values in [0,1]. The two image types are
// identical in layout but carry the color space in the type so that an
// sRGB buffer can never be fed to an operator expecting normalized Lab.

struct RgbImage {
    int h = 0, w = 0;
    std::vector<double> px;  // h*w*3, row-major, interleaved r,g,b

    RgbImage() = default;
    RgbImage(int hh, int ww) : h(hh), w(ww), px(static_cast<std::size_t>(hh) * ww * 3, 0.0) {}

    double& at(int y, int x, int c) { return px[(static_cast<std::size_t>(y) * w + x) * 3 + c]; }
    double at(int y, int x, int c) const { return px[(static_cast<std::size_t>(y) * w + x) * 3 + c]; }
    std::size_t count() const { return px.size(); }
};

// Channel 0: L* / 100, channels 1,2: (a*+128)/255, (b*+128)/255.
struct LabImage {
    int h = 0, w = 0;
    std::vector<double> px;

    LabImage() = default;
    LabImage(int hh, int ww) : h(hh), w(ww), px(static_cast<std::size_t>(hh) * ww * 3, 0.0) {}

    double& at(int y, int x, int c) { return px[(static_cast<std::size_t>(y) * w + x) * 3 + c]; }
    double at(int y, int x, int c) const { return px[(static_cast<std::size_t>(y) * w + x) * 3 + c]; }
    std::size_t count() const { return px.size(); }
};

}  // namespace enh
