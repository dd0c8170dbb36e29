#include "enh/color_ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "enh/colorspace.hpp"

namespace enh {

bool CurveParams::valid() const {
    return cut >= 0.0 && knee > cut && knee < 0.5 && knee - cut >= kMinGap &&
           shadow_gamma >= 1.0 && highlight_gamma > 0.0 && highlight_gamma <= 1.0 &&
           chroma_cut_a >= 0.0 && chroma_cut_a < 0.5 &&
           chroma_cut_b >= 0.0 && chroma_cut_b < 0.5;
}

bool FilterWeights::valid() const {
    double sum = 0.0;
    for (double x : w) {
        if (x < 0.0) return false;
        sum += x;
    }
    return std::abs(sum - 1.0) < 1e-9;
}

std::array<TintFilter, 3> default_tint_filters(double density) {
    // cooling #00b5ff, warming #ec8a00, underwater #00c2b1
    return {TintFilter{{0.0, 0xb5 / 255.0, 1.0}, density},
            TintFilter{{0xec / 255.0, 0x8a / 255.0, 0.0}, density},
            TintFilter{{0.0, 0xc2 / 255.0, 0xb1 / 255.0}, density}};
}

double luma_curve(double m, const CurveParams& t) {
    double a = t.knee, b = t.cut, p = t.shadow_gamma, q = t.highlight_gamma;
    if (b == 0.0 && p == 1.0 && q == 1.0) return std::clamp(m, 0.0, 1.0);  // bit-exact identity
    if (m <= b) return 0.0;
    if (m <= a) {
        double k1 = a * std::pow(a - b, -1.0 / p);
        return k1 * std::pow(m - b, 1.0 / p);
    }
    if (m <= 1.0 - a) return m;
    if (m <= 1.0 - b) {
        double k2 = a * std::pow(a - b, -1.0 / q);
        double k3 = 1.0 - a;
        return k2 * std::pow(m - k3, 1.0 / q) + k3;
    }
    return 1.0;
}

LumaCurveGrad luma_curve_grad(double m, const CurveParams& t) {
    double a = t.knee, b = t.cut, p = t.shadow_gamma, q = t.highlight_gamma;
    LumaCurveGrad g;
    if (m <= b) return g;  // flat
    if (m <= a) {
        double u = std::max(m - b, 1e-12);
        double ab = a - b;
        double k1 = a * std::pow(ab, -1.0 / p);
        double up = std::pow(u, 1.0 / p);
        g.dm = k1 / p * std::pow(u, 1.0 / p - 1.0);
        g.dknee = std::pow(ab, -1.0 / p) * (1.0 - a / (p * ab)) * up;
        g.dcut = a / p * std::pow(ab, -1.0 / p - 1.0) * up - g.dm;
        g.dsg = k1 * up * (std::log(ab) - std::log(u)) / (p * p);
        return g;
    }
    if (m <= 1.0 - a) {
        g.dm = 1.0;
        return g;
    }
    if (m <= 1.0 - b) {
        double ab = a - b;
        double k2 = a * std::pow(ab, -1.0 / q);
        double k3 = 1.0 - a;
        double u = std::max(m - k3, 1e-12);
        double uq = std::pow(u, 1.0 / q);
        g.dm = k2 / q * std::pow(u, 1.0 / q - 1.0);
        // k2 and k3 both move with the knee; u = m-1+knee
        g.dknee = std::pow(ab, -1.0 / q) * (1.0 - a / (q * ab)) * uq + g.dm - 1.0;
        g.dcut = a / q * std::pow(ab, -1.0 / q - 1.0) * uq;
        g.dhg = k2 * uq * (std::log(ab) - std::log(u)) / (q * q);
        return g;
    }
    return g;  // flat
}

double chroma_curve(double m, double cut) {
    if (cut < 0.0 || cut >= 0.5) throw std::invalid_argument("chroma cut out of [0,0.5)");
    if (m <= cut) return 0.0;
    if (m >= 1.0 - cut) return 1.0;
    return (m - cut) / (1.0 - 2.0 * cut);
}

ChromaCurveGrad chroma_curve_grad(double m, double cut) {
    ChromaCurveGrad g;
    if (m <= cut || m >= 1.0 - cut) return g;
    double d = 1.0 - 2.0 * cut;
    g.dm = 1.0 / d;
    g.dcut = (2.0 * m - 1.0) / (d * d);
    return g;
}

LabImage apply_piecewise(const LabImage& img, const CurveParams& t) {
    if (!t.valid()) throw std::invalid_argument("invalid curve parameters");
    LabImage out(img.h, img.w);
    for (std::size_t i = 0; i < img.count(); i += 3) {
        out.px[i] = luma_curve(img.px[i], t);
        out.px[i + 1] = chroma_curve(img.px[i + 1], t.chroma_cut_a);
        out.px[i + 2] = chroma_curve(img.px[i + 2], t.chroma_cut_b);
    }
    return out;
}

void vjp_piecewise(const LabImage& img, const CurveParams& t,
                   const std::vector<double>& upstream,
                   std::vector<double>& grad_img, std::array<double, 6>& grad_params) {
    if (!t.valid()) throw std::invalid_argument("invalid curve parameters");
    grad_img.assign(img.count(), 0.0);
    grad_params.fill(0.0);
    for (std::size_t i = 0; i < img.count(); i += 3) {
        LumaCurveGrad gl = luma_curve_grad(img.px[i], t);
        double u = upstream[i];
        grad_img[i] = u * gl.dm;
        grad_params[0] += u * gl.dknee;
        grad_params[1] += u * gl.dcut;
        grad_params[2] += u * gl.dsg;
        grad_params[3] += u * gl.dhg;
        ChromaCurveGrad ga = chroma_curve_grad(img.px[i + 1], t.chroma_cut_a);
        grad_img[i + 1] = upstream[i + 1] * ga.dm;
        grad_params[4] += upstream[i + 1] * ga.dcut;
        ChromaCurveGrad gb = chroma_curve_grad(img.px[i + 2], t.chroma_cut_b);
        grad_img[i + 2] = upstream[i + 2] * gb.dm;
        grad_params[5] += upstream[i + 2] * gb.dcut;
    }
}

LabImage apply_tint(const LabImage& img, const TintFilter& f) {
    LabImage out(img.h, img.w);
    double factor[3];
    for (int c = 0; c < 3; ++c) factor[c] = 1.0 - f.density + f.density * f.tint[c];
    for (std::size_t i = 0; i < img.count(); i += 3) {
        double rgb[3];
        lab_to_srgb_px(&img.px[i], rgb);
        for (int c = 0; c < 3; ++c) rgb[c] *= factor[c];
        srgb_to_lab_px(rgb, &out.px[i]);
        // preserve luminosity (photo-filter convention): the tint moves
        // chroma only, so correcting a cast never costs brightness
        out.px[i] = img.px[i];
    }
    return out;
}

void vjp_tint(const LabImage& img, const TintFilter& f,
              const std::vector<double>& upstream, std::vector<double>& grad_img) {
    grad_img.assign(img.count(), 0.0);
    double factor[3];
    for (int c = 0; c < 3; ++c) factor[c] = 1.0 - f.density + f.density * f.tint[c];
    for (std::size_t i = 0; i < img.count(); i += 3) {
        double rgb[3], j_l2s[3][3], j_s2l[3][3];
        lab_to_srgb_px(&img.px[i], rgb);
        jac_lab_to_srgb_px(&img.px[i], j_l2s);
        double tinted[3] = {rgb[0] * factor[0], rgb[1] * factor[1], rgb[2] * factor[2]};
        jac_srgb_to_lab_px(tinted, j_s2l);
        // a/b rows: up^T * J_s2l * diag(factor) * J_l2s; the L row is the
        // identity because the output keeps the input luminosity
        double mid[3];
        for (int c = 0; c < 3; ++c)
            mid[c] = (upstream[i + 1] * j_s2l[1][c] + upstream[i + 2] * j_s2l[2][c]) * factor[c];
        for (int c = 0; c < 3; ++c)
            grad_img[i + c] =
                mid[0] * j_l2s[0][c] + mid[1] * j_l2s[1][c] + mid[2] * j_l2s[2][c];
        grad_img[i] += upstream[i];
    }
}

LabImage apply_filter_bank(const LabImage& img, const FilterWeights& w,
                           const std::array<TintFilter, 3>& filters) {
    if (!w.valid()) throw std::invalid_argument("filter weights not on the simplex");
    LabImage out(img.h, img.w);
    for (std::size_t i = 0; i < img.count(); ++i) out.px[i] = w.w[0] * img.px[i];
    for (int k = 0; k < 3; ++k) {
        if (w.w[k + 1] == 0.0) continue;
        LabImage branch = apply_tint(img, filters[k]);
        for (std::size_t i = 0; i < img.count(); ++i) out.px[i] += w.w[k + 1] * branch.px[i];
    }
    return out;
}

void vjp_filter_bank(const LabImage& img, const FilterWeights& w,
                     const std::array<TintFilter, 3>& filters,
                     const std::vector<double>& upstream,
                     std::vector<double>& grad_img, std::array<double, 4>& grad_w) {
    if (!w.valid()) throw std::invalid_argument("filter weights not on the simplex");
    grad_img.assign(img.count(), 0.0);
    grad_w.fill(0.0);
    for (std::size_t i = 0; i < img.count(); ++i) {
        grad_img[i] = w.w[0] * upstream[i];
        grad_w[0] += upstream[i] * img.px[i];
    }
    std::vector<double> branch_grad;
    for (int k = 0; k < 3; ++k) {
        LabImage branch = apply_tint(img, filters[k]);
        for (std::size_t i = 0; i < img.count(); ++i)
            grad_w[k + 1] += upstream[i] * branch.px[i];
        vjp_tint(img, filters[k], upstream, branch_grad);
        for (std::size_t i = 0; i < img.count(); ++i)
            grad_img[i] += w.w[k + 1] * branch_grad[i];
    }
}

}  // namespace enh
