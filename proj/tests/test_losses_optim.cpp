#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "enh/losses.hpp"
#include "enh/optim.hpp"
#include "enh/rng.hpp"

using namespace enh;

TEST_CASE("generator and critic score means") {
    std::vector<double> out = {1.0, 2.0, 6.0};
    CHECK(loss_gan(out) == doctest::Approx(3.0).epsilon(1e-12));
    std::vector<double> good = {0.5, 1.5};
    CHECK(loss_critic(good, out) == doctest::Approx(1.0 - 3.0).epsilon(1e-12));
}

TEST_CASE("feature reconstruction distance and gradient") {
    std::vector<double> a = {1.0, 2.0, 3.0}, b = {1.0, 0.0, 6.0};
    CHECK(loss_reg1(a, b) == doctest::Approx(4.0 + 9.0).epsilon(1e-12));
    CHECK(loss_reg1(a, a) == 0.0);
    std::vector<double> g = loss_reg1_grad(a, b);
    REQUIRE(g.size() == 3);
    CHECK(g[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(g[2] == doctest::Approx(-6.0).epsilon(1e-12));
}

TEST_CASE("score hinge: zero below, squared gap above, boundary in the squared branch") {
    CHECK(loss_reg2(-1.0, 0.0) == 0.0);
    CHECK(loss_reg2_grad(-1.0, 0.0) == 0.0);
    CHECK(loss_reg2(2.0, 0.5) == doctest::Approx(2.25).epsilon(1e-12));
    CHECK(loss_reg2_grad(2.0, 0.5) == doctest::Approx(3.0).epsilon(1e-12));
    // s_out == s_in: squared branch, value and slope both vanish
    CHECK(loss_reg2(0.7, 0.7) == 0.0);
    CHECK(loss_reg2_grad(0.7, 0.7) == 0.0);
}

TEST_CASE("cross entropy closed forms and numerical stability") {
    std::vector<std::array<double, 2>> logits = {{0.0, 0.0}};
    std::vector<int> labels = {0};
    CHECK(loss_pretrain_ce(logits, labels) ==
          doctest::Approx(0.6931471805599453).epsilon(1e-12));

    logits = {{20.0, 0.0}};
    double ce = loss_pretrain_ce(logits, labels);
    CHECK(ce == doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-6));

    // huge logits must not overflow
    logits = {{2000.0, 0.0}};
    ce = loss_pretrain_ce(logits, labels);
    CHECK(std::isfinite(ce));
    CHECK(ce >= 0.0);
    CHECK(ce < 1e-10);
    labels = {1};
    ce = loss_pretrain_ce(logits, labels);
    CHECK(std::isfinite(ce));
    CHECK(ce == doctest::Approx(2000.0).epsilon(1e-9));

    // gradient is softmax minus one-hot
    std::array<double, 2> g = ce_grad({0.0, 0.0}, 1);
    CHECK(g[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(g[1] == doctest::Approx(-0.5).epsilon(1e-12));
    g = ce_grad({3.0, 1.0}, 0);
    double p0 = 1.0 / (1.0 + std::exp(-2.0));
    CHECK(g[0] == doctest::Approx(p0 - 1.0).epsilon(1e-10));
    CHECK(g[1] == doctest::Approx(1.0 - p0).epsilon(1e-10));

    CHECK_THROWS(loss_pretrain_ce({}, {}));
    CHECK_THROWS(loss_pretrain_ce({{0.0, 0.0}}, {2}));
}

TEST_CASE("ce gradient matches finite differences") {
    Rng rng(3);
    const double h = 1e-6;
    for (int trial = 0; trial < 100; ++trial) {
        std::array<double, 2> lg = {rng.normal() * 3, rng.normal() * 3};
        int y = trial % 2;
        std::array<double, 2> g = ce_grad(lg, y);
        for (int j = 0; j < 2; ++j) {
            auto lp = lg, lm = lg;
            lp[j] += h;
            lm[j] -= h;
            double fd = (loss_pretrain_ce({lp}, {y}) - loss_pretrain_ce({lm}, {y})) / (2 * h);
            CHECK(g[j] == doctest::Approx(fd).epsilon(1e-4));
        }
    }
}

TEST_CASE("rmsprop first step from a cold accumulator") {
    // v' = 0.1 * 1 = 0.1 ; delta = 0.1 / (sqrt(0.1) + 1e-8)
    Tensor p({1}), g({1}), v({1});
    p[0] = 1.0;
    g[0] = 1.0;
    rmsprop_step(p, g, v, 0.1, 0.9, 1e-8);
    CHECK(v[0] == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(p[0] == doctest::Approx(1.0 - 0.3162277560168383).epsilon(1e-12));
}

TEST_CASE("rmsprop accumulator decays and zero gradients leave parameters fixed") {
    Tensor p({2}), g({2}), v({2});
    p.v = {1.0, -1.0};
    g.v = {2.0, -2.0};
    rmsprop_step(p, g, v, 0.01, 0.9, 1e-8);
    double v1 = 0.1 * 4.0;
    CHECK(v[0] == doctest::Approx(v1).epsilon(1e-12));
    double p0 = p[0];
    g.zero();
    rmsprop_step(p, g, v, 0.01, 0.9, 1e-8);
    CHECK(v[0] == doctest::Approx(0.9 * v1).epsilon(1e-12));
    CHECK(p[0] == p0);  // zero gradient: no movement regardless of v

    Tensor bad({3});
    CHECK_THROWS(rmsprop_step(p, bad, v, 0.01, 0.9, 1e-8));
}

TEST_CASE("per-name optimizer state is independent") {
    RmsProp opt;
    opt.lr = 0.1;
    Tensor a({1}), b({1}), ga({1}), gb({1});
    a[0] = b[0] = 1.0;
    ga[0] = 1.0;
    gb[0] = -1.0;
    opt.step("a", a, ga);
    opt.step("b", b, gb);
    CHECK(a[0] == doctest::Approx(1.0 - 0.3162277560168383).epsilon(1e-12));
    CHECK(b[0] == doctest::Approx(1.0 + 0.3162277560168383).epsilon(1e-12));
    CHECK(opt.state.size() == 2);
}

TEST_CASE("clipping is a projection: idempotent and bounded") {
    Rng rng(7);
    Tensor t({100});
    for (auto& v : t.v) v = rng.normal();
    clip_tensor(t, 0.01);
    for (double v : t.v) {
        CHECK(v <= 0.01);
        CHECK(v >= -0.01);
    }
    Tensor again = t;
    clip_tensor(again, 0.01);
    CHECK(again.v == t.v);
    // values already inside the box are untouched
    Tensor small({3});
    small.v = {0.005, -0.002, 0.0};
    clip_tensor(small, 0.01);
    CHECK(small.v == std::vector<double>{0.005, -0.002, 0.0});
}
