#pragma once

#include <array>
#include <vector>

#include "enh/image.hpp"

namespace enh {

// Parameters of the piecewise color curves. The luminance curve lifts
// shadows on (cut, knee] with exponent 1/shadow_gamma, is identity on
// (knee, 1-knee], and compresses highlights on (1-knee, 1-cut] with
// exponent 1/highlight_gamma; below cut it is 0 and above 1-cut it is 1.
// The chroma curves are linear stretches that clip at chroma_cut_a /
// chroma_cut_b on each side.
struct CurveParams {
    double knee = 0.3;            // upper end of the shadow segment, in (cut, 0.5)
    double cut = 0.0;             // black/white clip point, in [0, knee)
    double shadow_gamma = 1.0;    // >= 1 lightens dark regions
    double highlight_gamma = 1.0; // in (0,1], darkens over-exposed regions
    double chroma_cut_a = 0.0;    // in [0, 0.5)
    double chroma_cut_b = 0.0;    // in [0, 0.5)

    static constexpr double kMinGap = 1e-3;  // knee - cut lower bound

    bool valid() const;
};

// Fixed analytic tint filter: per-channel multiply blended with identity.
// out_rgb = rgb * ((1-density) + density * tint).
struct TintFilter {
    std::array<double, 3> tint{1.0, 1.0, 1.0};
    double density = 0.0;
};

// Convex weights over {identity, tint filters...}; slot 0 is identity.
struct FilterWeights {
    std::array<double, 4> w{1.0, 0.0, 0.0, 0.0};
    bool valid() const;
};

// The three default tints (cooling / warming / underwater hues) at the
// given blend density.
std::array<TintFilter, 3> default_tint_filters(double density = 0.6);

// Scalar curves. Curve params are validated by the image-level operators;
// the scalar functions assume valid input.
double luma_curve(double m, const CurveParams& t);
double chroma_curve(double m, double cut);

struct LumaCurveGrad {
    double dm = 0, dknee = 0, dcut = 0, dsg = 0, dhg = 0;
};
LumaCurveGrad luma_curve_grad(double m, const CurveParams& t);

struct ChromaCurveGrad {
    double dm = 0, dcut = 0;
};
ChromaCurveGrad chroma_curve_grad(double m, double cut);

// Image-level operators (all in normalized Lab).
LabImage apply_piecewise(const LabImage& img, const CurveParams& t);
LabImage apply_tint(const LabImage& img, const TintFilter& f);
LabImage apply_filter_bank(const LabImage& img, const FilterWeights& w,
                           const std::array<TintFilter, 3>& filters);

// VJPs. grad_params layout for the piecewise operator:
// [knee, cut, shadow_gamma, highlight_gamma, chroma_cut_a, chroma_cut_b].
void vjp_piecewise(const LabImage& img, const CurveParams& t,
                   const std::vector<double>& upstream,
                   std::vector<double>& grad_img, std::array<double, 6>& grad_params);

void vjp_tint(const LabImage& img, const TintFilter& f,
              const std::vector<double>& upstream, std::vector<double>& grad_img);

void vjp_filter_bank(const LabImage& img, const FilterWeights& w,
                     const std::array<TintFilter, 3>& filters,
                     const std::vector<double>& upstream,
                     std::vector<double>& grad_img, std::array<double, 4>& grad_w);

}  // namespace enh
