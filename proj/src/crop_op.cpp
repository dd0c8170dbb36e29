#include "enh/crop_op.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace enh {
namespace {

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Bilinear taps along one axis with border replication.
struct Taps {
    int i0, i1;
    double t;  // weight of i1
};

Taps taps(double s, int size) {
    int i0 = static_cast<int>(std::floor(s));
    double t = s - i0;
    Taps r;
    r.i0 = clampi(i0, 0, size - 1);
    r.i1 = clampi(i0 + 1, 0, size - 1);
    r.t = t;
    return r;
}

}  // namespace

SamplingGrid make_grid(const CropRect& rect, int out_h, int out_w, int src_h, int src_w) {
    if (!rect.valid()) throw std::invalid_argument("invalid crop rectangle");
    if (out_h <= 0 || out_w <= 0 || src_h <= 0 || src_w <= 0)
        throw std::invalid_argument("invalid grid sizes");
    SamplingGrid g;
    g.out_h = out_h;
    g.out_w = out_w;
    g.sx.resize(out_w);
    g.sy.resize(out_h);
    // factored so that w == 1, out == src yields exactly integer coordinates
    double scale_x = rect.w * src_w / out_w, scale_y = rect.h * src_h / out_h;
    for (int j = 0; j < out_w; ++j)
        g.sx[j] = rect.x * src_w + scale_x * (j + 0.5) - 0.5;
    for (int i = 0; i < out_h; ++i)
        g.sy[i] = rect.y * src_h + scale_y * (i + 0.5) - 0.5;
    return g;
}

LabImage bilinear_sample(const LabImage& img, const SamplingGrid& grid) {
    LabImage out(grid.out_h, grid.out_w);
    for (int i = 0; i < grid.out_h; ++i) {
        Taps ty = taps(grid.sy[i], img.h);
        for (int j = 0; j < grid.out_w; ++j) {
            Taps tx = taps(grid.sx[j], img.w);
            for (int c = 0; c < 3; ++c) {
                double top = (1.0 - tx.t) * img.at(ty.i0, tx.i0, c) + tx.t * img.at(ty.i0, tx.i1, c);
                double bot = (1.0 - tx.t) * img.at(ty.i1, tx.i0, c) + tx.t * img.at(ty.i1, tx.i1, c);
                out.at(i, j, c) = (1.0 - ty.t) * top + ty.t * bot;
            }
        }
    }
    return out;
}

void vjp_crop(const LabImage& img, const CropRect& rect, int out_h, int out_w,
              const std::vector<double>& out_grad,
              std::vector<double>& grad_img, std::array<double, 4>& grad_rect) {
    SamplingGrid grid = make_grid(rect, out_h, out_w, img.h, img.w);
    grad_img.assign(img.count(), 0.0);
    grad_rect.fill(0.0);
    auto gi = [&](int y, int x, int c) -> double& {
        return grad_img[(static_cast<std::size_t>(y) * img.w + x) * 3 + c];
    };
    for (int i = 0; i < out_h; ++i) {
        Taps ty = taps(grid.sy[i], img.h);
        double dsy_dy = img.h;                              // sy = (y + h*(i+.5)/H)*src_h - .5
        double dsy_dh = (i + 0.5) / out_h * img.h;
        for (int j = 0; j < out_w; ++j) {
            Taps tx = taps(grid.sx[j], img.w);
            double dsx_dx = img.w;
            double dsx_dw = (j + 0.5) / out_w * img.w;
            for (int c = 0; c < 3; ++c) {
                double g = out_grad[(static_cast<std::size_t>(i) * out_w + j) * 3 + c];
                if (g == 0.0) continue;
                double v00 = img.at(ty.i0, tx.i0, c), v01 = img.at(ty.i0, tx.i1, c);
                double v10 = img.at(ty.i1, tx.i0, c), v11 = img.at(ty.i1, tx.i1, c);
                gi(ty.i0, tx.i0, c) += g * (1.0 - ty.t) * (1.0 - tx.t);
                gi(ty.i0, tx.i1, c) += g * (1.0 - ty.t) * tx.t;
                gi(ty.i1, tx.i0, c) += g * ty.t * (1.0 - tx.t);
                gi(ty.i1, tx.i1, c) += g * ty.t * tx.t;
                // d(out)/d(sx), d(out)/d(sy); zero when the taps collapse at
                // a replicated border (value locally constant in that axis)
                double dodsx = (tx.i1 != tx.i0)
                                   ? (1.0 - ty.t) * (v01 - v00) + ty.t * (v11 - v10)
                                   : 0.0;
                double dodsy = (ty.i1 != ty.i0)
                                   ? (1.0 - tx.t) * (v10 - v00) + tx.t * (v11 - v01)
                                   : 0.0;
                grad_rect[0] += g * dodsx * dsx_dx;
                grad_rect[1] += g * dodsy * dsy_dy;
                grad_rect[2] += g * dodsx * dsx_dw;
                grad_rect[3] += g * dodsy * dsy_dh;
            }
        }
    }
}

}  // namespace enh
