#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "enh/crop_op.hpp"
#include "enh/rng.hpp"

using namespace enh;

namespace {

// independent scalar bilinear lookup with edge clamping
double bilerp(const LabImage& img, double sy, double sx, int c) {
    auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
    int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
    double fx = sx - x0, fy = sy - y0;
    int x1 = x0 + 1, y1 = y0 + 1;
    x0 = clampi(x0, img.w - 1);
    x1 = clampi(x1, img.w - 1);
    y0 = clampi(y0, img.h - 1);
    y1 = clampi(y1, img.h - 1);
    return (1 - fy) * ((1 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c)) +
           fy * ((1 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c));
}

LabImage random_image(Rng& rng, int h, int w) {
    LabImage img(h, w);
    for (auto& v : img.px) v = rng.uniform();
    return img;
}

}  // namespace

TEST_CASE("grid coordinates follow the pixel-center convention") {
    CropRect r{0.25, 0.25, 0.5, 0.5};
    SamplingGrid g = make_grid(r, 2, 2, 4, 4);
    REQUIRE(g.sx.size() == 2);
    REQUIRE(g.sy.size() == 2);
    CHECK(g.sx[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(g.sx[1] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(g.sy[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(g.sy[1] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("integer-aligned crop copies pixels exactly") {
    Rng rng(2);
    LabImage img = random_image(rng, 4, 4);
    LabImage out = bilinear_sample(img, make_grid(CropRect{0.25, 0.25, 0.5, 0.5}, 2, 2, 4, 4));
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x)
            for (int c = 0; c < 3; ++c)
                CHECK(out.at(y, x, c) == img.at(y + 1, x + 1, c));
}

TEST_CASE("identity crop at native resolution is exact") {
    Rng rng(4);
    LabImage img = random_image(rng, 7, 11);
    LabImage out = bilinear_sample(img, make_grid(CropRect{0, 0, 1, 1}, 7, 11, 7, 11));
    for (std::size_t i = 0; i < img.count(); ++i) CHECK(out.px[i] == img.px[i]);
}

TEST_CASE("full crop of a 2x2 image to one pixel averages all four") {
    LabImage img(2, 2);
    for (int c = 0; c < 3; ++c) {
        img.at(0, 0, c) = 0.1;
        img.at(0, 1, c) = 0.2;
        img.at(1, 0, c) = 0.3;
        img.at(1, 1, c) = 0.6;
    }
    LabImage out = bilinear_sample(img, make_grid(CropRect{0, 0, 1, 1}, 1, 1, 2, 2));
    for (int c = 0; c < 3; ++c)
        CHECK(out.at(0, 0, c) == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("sampler matches a scalar bilinear reference everywhere") {
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        LabImage img = random_image(rng, 5 + trial % 4, 6 + trial % 3);
        CropRect r;
        r.w = rng.uniform(0.4, 1.0);
        r.h = rng.uniform(0.4, 1.0);
        r.x = rng.uniform(0.0, 1.0 - r.w);
        r.y = rng.uniform(0.0, 1.0 - r.h);
        REQUIRE(r.valid());
        SamplingGrid g = make_grid(r, 6, 8, img.h, img.w);
        LabImage out = bilinear_sample(img, g);
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 8; ++x)
                for (int c = 0; c < 3; ++c)
                    CHECK(out.at(y, x, c) ==
                          doctest::Approx(bilerp(img, g.sy[y], g.sx[x], c)).epsilon(1e-12));
    }
}

TEST_CASE("windows below the minimum extent are rejected") {
    CHECK(!CropRect{0.0, 0.0, 0.3, 0.5}.valid());
    CHECK(!CropRect{0.0, 0.0, 0.5, 0.39}.valid());
    CHECK(!CropRect{0.7, 0.0, 0.5, 0.5}.valid());  // spills past the right edge
    CHECK(!CropRect{-0.1, 0.0, 0.5, 0.5}.valid());
    CHECK(CropRect{0.0, 0.0, 0.4, 0.4}.valid());
    CHECK(CropRect{0.5, 0.5, 0.5, 0.5}.valid());
    CHECK(CropRect{}.valid());
}

TEST_CASE("constant images give zero window gradient") {
    LabImage img(8, 8);
    for (auto& v : img.px) v = 0.37;
    CropRect r{0.25, 0.25, 0.5, 0.5};
    Rng rng(8);
    std::vector<double> up(static_cast<std::size_t>(4) * 4 * 3);
    for (auto& v : up) v = rng.normal();
    std::vector<double> gimg;
    std::array<double, 4> grect;
    vjp_crop(img, r, 4, 4, up, gimg, grect);
    for (double v : grect) CHECK(std::abs(v) < 1e-12);
    // input gradient still moves the upstream mass around
    double total = 0.0, want = 0.0;
    for (double v : gimg) total += v;
    for (double v : up) want += v;
    CHECK(total == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("crop vjp matches finite differences") {
    Rng rng(12);
    const double h = 1e-6;
    for (int trial = 0; trial < 30; ++trial) {
        LabImage img = random_image(rng, 9, 9);
        CropRect r;
        r.w = rng.uniform(0.45, 0.9);
        r.h = rng.uniform(0.45, 0.9);
        r.x = rng.uniform(0.02, 0.98 - r.w);
        r.y = rng.uniform(0.02, 0.98 - r.h);
        std::vector<double> up(static_cast<std::size_t>(5) * 5 * 3);
        for (auto& v : up) v = rng.normal();

        std::vector<double> gimg;
        std::array<double, 4> grect;
        vjp_crop(img, r, 5, 5, up, gimg, grect);

        auto objective = [&](const CropRect& rr) {
            LabImage out = bilinear_sample(img, make_grid(rr, 5, 5, img.h, img.w));
            double s = 0.0;
            for (std::size_t i = 0; i < out.count(); ++i) s += up[i] * out.px[i];
            return s;
        };
        double fields[4] = {r.x, r.y, r.w, r.h};
        for (int j = 0; j < 4; ++j) {
            CropRect rp = r, rm = r;
            (&rp.x)[j] = fields[j] + h;
            (&rm.x)[j] = fields[j] - h;
            double fd = (objective(rp) - objective(rm)) / (2 * h);
            CHECK(grect[j] == doctest::Approx(fd).epsilon(1e-4));
        }
    }
}
