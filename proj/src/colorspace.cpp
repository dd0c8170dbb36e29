#include "enh/colorspace.hpp"

#include <cmath>

namespace enh {
namespace {

// sRGB -> XYZ (D65) matrix
constexpr double kM[3][3] = {
    {0.4124564, 0.3575761, 0.1804375},
    {0.2126729, 0.7151522, 0.0721750},
    {0.0193339, 0.1191920, 0.9503041},
};

// White point taken as the row sums of kM so that sRGB (1,1,1) maps to
// L*=100, a*=b*=0 exactly and the round trip closes.
constexpr double kXn = kM[0][0] + kM[0][1] + kM[0][2];
constexpr double kYn = kM[1][0] + kM[1][1] + kM[1][2];
constexpr double kZn = kM[2][0] + kM[2][1] + kM[2][2];

constexpr double kDelta = 6.0 / 29.0;
constexpr double kDelta3 = kDelta * kDelta * kDelta;

struct Mat3 {
    double m[3][3];
};

Mat3 invert(const double a[3][3]) {
    double c00 = a[1][1] * a[2][2] - a[1][2] * a[2][1];
    double c01 = a[1][2] * a[2][0] - a[1][0] * a[2][2];
    double c02 = a[1][0] * a[2][1] - a[1][1] * a[2][0];
    double det = a[0][0] * c00 + a[0][1] * c01 + a[0][2] * c02;
    Mat3 r;
    r.m[0][0] = c00 / det;
    r.m[0][1] = (a[0][2] * a[2][1] - a[0][1] * a[2][2]) / det;
    r.m[0][2] = (a[0][1] * a[1][2] - a[0][2] * a[1][1]) / det;
    r.m[1][0] = c01 / det;
    r.m[1][1] = (a[0][0] * a[2][2] - a[0][2] * a[2][0]) / det;
    r.m[1][2] = (a[0][2] * a[1][0] - a[0][0] * a[1][2]) / det;
    r.m[2][0] = c02 / det;
    r.m[2][1] = (a[0][1] * a[2][0] - a[0][0] * a[2][1]) / det;
    r.m[2][2] = (a[0][0] * a[1][1] - a[0][1] * a[1][0]) / det;
    return r;
}

const Mat3 kMinv = invert(kM);

double srgb_decode(double c) {
    return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double srgb_decode_d(double c) {
    return c <= 0.04045 ? 1.0 / 12.92
                        : (2.4 / 1.055) * std::pow((c + 0.055) / 1.055, 1.4);
}

double srgb_encode(double c) {
    return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

double srgb_encode_d(double c) {
    return c <= 0.0031308 ? 12.92 : (1.055 / 2.4) * std::pow(c, 1.0 / 2.4 - 1.0);
}

double lab_f(double t) {
    return t > kDelta3 ? std::cbrt(t) : t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
}

double lab_f_d(double t) {
    if (t > kDelta3) {
        double c = std::cbrt(t);
        return 1.0 / (3.0 * c * c);
    }
    return 1.0 / (3.0 * kDelta * kDelta);
}

double lab_finv(double t) {
    return t > kDelta ? t * t * t : 3.0 * kDelta * kDelta * (t - 4.0 / 29.0);
}

double lab_finv_d(double t) {
    return t > kDelta ? 3.0 * t * t : 3.0 * kDelta * kDelta;
}

double clamp01(double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); }

}  // namespace

void srgb_to_lab_px(const double rgb[3], double lab[3]) {
    double lin[3] = {srgb_decode(rgb[0]), srgb_decode(rgb[1]), srgb_decode(rgb[2])};
    double xyz[3];
    for (int i = 0; i < 3; ++i)
        xyz[i] = kM[i][0] * lin[0] + kM[i][1] * lin[1] + kM[i][2] * lin[2];
    double fx = lab_f(xyz[0] / kXn);
    double fy = lab_f(xyz[1] / kYn);
    double fz = lab_f(xyz[2] / kZn);
    double L = 116.0 * fy - 16.0;
    double a = 500.0 * (fx - fy);
    double b = 200.0 * (fy - fz);
    lab[0] = clamp01(L / 100.0);
    lab[1] = clamp01((a + 128.0) / 255.0);
    lab[2] = clamp01((b + 128.0) / 255.0);
}

void lab_to_srgb_px(const double lab[3], double rgb[3]) {
    double L = lab[0] * 100.0;
    double a = lab[1] * 255.0 - 128.0;
    double b = lab[2] * 255.0 - 128.0;
    double fy = (L + 16.0) / 116.0;
    double fx = fy + a / 500.0;
    double fz = fy - b / 200.0;
    double xyz[3] = {kXn * lab_finv(fx), kYn * lab_finv(fy), kZn * lab_finv(fz)};
    for (int i = 0; i < 3; ++i) {
        double lin = kMinv.m[i][0] * xyz[0] + kMinv.m[i][1] * xyz[1] + kMinv.m[i][2] * xyz[2];
        rgb[i] = clamp01(srgb_encode(lin < 0.0 ? 0.0 : lin));
    }
}

void jac_srgb_to_lab_px(const double rgb[3], double jac[3][3]) {
    double lin[3], dlin[3];
    for (int i = 0; i < 3; ++i) {
        lin[i] = srgb_decode(rgb[i]);
        dlin[i] = srgb_decode_d(rgb[i]);
    }
    double xyz[3];
    for (int i = 0; i < 3; ++i)
        xyz[i] = kM[i][0] * lin[0] + kM[i][1] * lin[1] + kM[i][2] * lin[2];
    double wn[3] = {kXn, kYn, kZn};
    double df[3];  // d f_i / d xyz_i
    for (int i = 0; i < 3; ++i) df[i] = lab_f_d(xyz[i] / wn[i]) / wn[i];

    // d(fx,fy,fz)/d rgb_j
    double dfd[3][3];
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) dfd[i][j] = df[i] * kM[i][j] * dlin[j];

    // normalized outputs; rows zeroed where the clamp is active
    double lab[3];
    srgb_to_lab_px(rgb, lab);
    double Lraw = 116.0 * lab_f(xyz[1] / kYn) - 16.0;
    double araw = 500.0 * (lab_f(xyz[0] / kXn) - lab_f(xyz[1] / kYn));
    double braw = 200.0 * (lab_f(xyz[1] / kYn) - lab_f(xyz[2] / kZn));
    bool clamped[3] = {Lraw < 0.0 || Lraw > 100.0,
                       araw < -128.0 || araw > 127.0,
                       braw < -128.0 || braw > 127.0};
    for (int j = 0; j < 3; ++j) {
        jac[0][j] = clamped[0] ? 0.0 : 116.0 / 100.0 * dfd[1][j];
        jac[1][j] = clamped[1] ? 0.0 : 500.0 / 255.0 * (dfd[0][j] - dfd[1][j]);
        jac[2][j] = clamped[2] ? 0.0 : 200.0 / 255.0 * (dfd[1][j] - dfd[2][j]);
    }
}

void jac_lab_to_srgb_px(const double lab[3], double jac[3][3]) {
    double L = lab[0] * 100.0;
    double a = lab[1] * 255.0 - 128.0;
    double b = lab[2] * 255.0 - 128.0;
    double fy = (L + 16.0) / 116.0;
    double fx = fy + a / 500.0;
    double fz = fy - b / 200.0;
    double f[3] = {fx, fy, fz};
    // d(fx,fy,fz)/d(lab0,lab1,lab2)
    double df[3][3] = {
        {100.0 / 116.0, 255.0 / 500.0, 0.0},
        {100.0 / 116.0, 0.0, 0.0},
        {100.0 / 116.0, 0.0, -255.0 / 200.0},
    };
    double wn[3] = {kXn, kYn, kZn};
    double xyz[3], dxyz[3];  // dxyz_i / df_i
    for (int i = 0; i < 3; ++i) {
        xyz[i] = wn[i] * lab_finv(f[i]);
        dxyz[i] = wn[i] * lab_finv_d(f[i]);
    }
    for (int i = 0; i < 3; ++i) {
        double lin = kMinv.m[i][0] * xyz[0] + kMinv.m[i][1] * xyz[1] + kMinv.m[i][2] * xyz[2];
        bool lin_clamped = lin < 0.0;
        double linc = lin_clamped ? 0.0 : lin;
        double enc = srgb_encode(linc);
        bool out_clamped = enc < 0.0 || enc > 1.0 || lin_clamped;
        double denc = out_clamped ? 0.0 : srgb_encode_d(linc);
        for (int j = 0; j < 3; ++j) {
            double dlin = kMinv.m[i][0] * dxyz[0] * df[0][j] +
                          kMinv.m[i][1] * dxyz[1] * df[1][j] +
                          kMinv.m[i][2] * dxyz[2] * df[2][j];
            jac[i][j] = denc * dlin;
        }
    }
}

LabImage srgb_to_lab(const RgbImage& img) {
    LabImage out(img.h, img.w);
    for (std::size_t i = 0; i < img.count(); i += 3)
        srgb_to_lab_px(&img.px[i], &out.px[i]);
    return out;
}

RgbImage lab_to_srgb(const LabImage& img) {
    RgbImage out(img.h, img.w);
    for (std::size_t i = 0; i < img.count(); i += 3)
        lab_to_srgb_px(&img.px[i], &out.px[i]);
    return out;
}

std::vector<double> vjp_srgb_to_lab(const RgbImage& in, const std::vector<double>& upstream) {
    std::vector<double> grad(in.count(), 0.0);
    double jac[3][3];
    for (std::size_t i = 0; i < in.count(); i += 3) {
        jac_srgb_to_lab_px(&in.px[i], jac);
        for (int j = 0; j < 3; ++j)
            grad[i + j] = upstream[i] * jac[0][j] + upstream[i + 1] * jac[1][j] +
                          upstream[i + 2] * jac[2][j];
    }
    return grad;
}

std::vector<double> vjp_lab_to_srgb(const LabImage& in, const std::vector<double>& upstream) {
    std::vector<double> grad(in.count(), 0.0);
    double jac[3][3];
    for (std::size_t i = 0; i < in.count(); i += 3) {
        jac_lab_to_srgb_px(&in.px[i], jac);
        for (int j = 0; j < 3; ++j)
            grad[i + j] = upstream[i] * jac[0][j] + upstream[i + 1] * jac[1][j] +
                          upstream[i + 2] * jac[2][j];
    }
    return grad;
}

}  // namespace enh
