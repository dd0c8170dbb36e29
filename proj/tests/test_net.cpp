#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "enh/net.hpp"
#include "enh/rng.hpp"

using namespace enh;

namespace {

// independent naive convolution used as the oracle
Tensor naive_conv(const Tensor& x, const Conv2D& conv) {
    int ih = x.shape[1], iw = x.shape[2];
    int oh = conv.out_size(ih), ow = conv.out_size(iw);
    Tensor out({conv.out_c, oh, ow});
    for (int oc = 0; oc < conv.out_c; ++oc)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double s = conv.b[oc];
                for (int ic = 0; ic < conv.in_c; ++ic)
                    for (int ky = 0; ky < conv.ksize; ++ky)
                        for (int kx = 0; kx < conv.ksize; ++kx) {
                            int iy = oy * conv.stride - conv.pad + ky;
                            int ix = ox * conv.stride - conv.pad + kx;
                            if (iy < 0 || iy >= ih || ix < 0 || ix >= iw) continue;
                            std::size_t wi =
                                ((static_cast<std::size_t>(oc) * conv.in_c + ic) * conv.ksize +
                                 ky) * conv.ksize + kx;
                            s += conv.w[wi] * x.at3(ic, iy, ix);
                        }
                out.at3(oc, oy, ox) = s;
            }
    return out;
}

ParamMaps manual_maps(const Tensor& raw) {
    ParamMaps m;
    m.n_params = raw.shape[0] - 1;
    m.f = raw.shape[1];
    m.raw = raw;
    int cells = m.f * m.f;
    m.prob.resize(cells);
    const double* s = raw.v.data() + static_cast<std::size_t>(m.n_params) * cells;
    double mx = *std::max_element(s, s + cells);
    double z = 0.0;
    for (int i = 0; i < cells; ++i) z += std::exp(s[i] - mx);
    for (int i = 0; i < cells; ++i) m.prob[i] = std::exp(s[i] - mx) / z;
    return m;
}

}  // namespace

TEST_CASE("3x3 convolution against a hand-worked example") {
    Conv2D conv(1, 1, 3, 1, 1);
    std::fill(conv.w.v.begin(), conv.w.v.end(), 1.0);
    conv.b[0] = 0.5;
    Tensor x({1, 2, 2});
    x.v = {1, 2, 3, 4};
    Tensor y = conv.forward(x);
    REQUIRE(y.shape == std::vector<int>{1, 2, 2});
    for (double v : y.v) CHECK(v == doctest::Approx(10.5).epsilon(1e-12));
}

TEST_CASE("convolution matches a naive reference across shapes and strides") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        int ic = 1 + trial % 3, oc = 1 + (trial / 3) % 4;
        int stride = 1 + trial % 2, pad = trial % 2;
        Conv2D conv(ic, oc, 3, stride, pad);
        conv.init_he(rng);
        for (auto& v : conv.b.v) v = rng.normal();
        Tensor x({ic, 6 + trial % 3, 7});
        for (auto& v : x.v) v = rng.normal();
        Tensor got = conv.forward(x);
        Tensor want = naive_conv(x, conv);
        REQUIRE(got.shape == want.shape);
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-10));
    }
}

TEST_CASE("1x1 head convolution is a per-cell matmul") {
    Rng rng(5);
    Conv2D head(8, 5, 1, 1, 0);
    head.init_he(rng);
    for (auto& v : head.b.v) v = rng.normal();
    Tensor x({8, 4, 4});
    for (auto& v : x.v) v = rng.normal();
    Tensor y = head.forward(x);
    for (int oc = 0; oc < 5; ++oc)
        for (int cy = 0; cy < 4; ++cy)
            for (int cx = 0; cx < 4; ++cx) {
                double s = head.b[oc];
                for (int ic = 0; ic < 8; ++ic)
                    s += head.w[static_cast<std::size_t>(oc) * 8 + ic] * x.at3(ic, cy, cx);
                CHECK(y.at3(oc, cy, cx) == doctest::Approx(s).epsilon(1e-12));
            }
}

TEST_CASE("relu and its backward mask") {
    Tensor x({4});
    x.v = {-1.0, 0.0, 0.5, 2.0};
    Tensor y = relu(x);
    CHECK(y.v == std::vector<double>{0.0, 0.0, 0.5, 2.0});
    Tensor g({4});
    g.v = {1.0, 1.0, 1.0, 1.0};
    Tensor gx = relu_backward(x, g);
    CHECK(gx[0] == 0.0);
    CHECK(gx[1] == 0.0);
    CHECK(gx[2] == 1.0);
    CHECK(gx[3] == 1.0);
}

TEST_CASE("initialization and forward passes are deterministic in the seed") {
    Trunk a = Trunk::make(32, {8, 16});
    Trunk b = Trunk::make(32, {8, 16});
    Rng r1(42), r2(42);
    a.init(r1);
    b.init(r2);
    Tensor x({3, 32, 32});
    Rng rx(1);
    for (auto& v : x.v) v = rx.uniform();
    Tensor ya = a.forward(x), yb = b.forward(x);
    REQUIRE(ya.size() == yb.size());
    for (std::size_t i = 0; i < ya.size(); ++i) CHECK(ya[i] == yb[i]);

    Rng r3(43);
    b.init(r3);
    Tensor yc = b.forward(x);
    bool differs = false;
    for (std::size_t i = 0; i < ya.size(); ++i)
        if (ya[i] != yc[i]) differs = true;
    CHECK(differs);
}

TEST_CASE("head probabilities form a distribution") {
    Rng rng(7);
    Conv2D head(6, 4, 1, 1, 0);
    head.init_he(rng);
    Tensor feat({6, 4, 4});
    for (auto& v : feat.v) v = rng.normal();
    ParamMaps maps = head_forward(head, feat);
    CHECK(maps.f == 4);
    CHECK(maps.n_params == 3);
    double sum = std::accumulate(maps.prob.begin(), maps.prob.end(), 0.0);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    for (double p : maps.prob) CHECK(p > 0.0);

    // constant score slice -> uniform distribution
    Tensor raw({2, 3, 3});
    for (int i = 0; i < 9; ++i) raw.v[i] = i;          // candidates
    for (int i = 9; i < 18; ++i) raw.v[i] = 0.7;       // scores
    ParamMaps uni = manual_maps(raw);
    for (double p : uni.prob) CHECK(p == doctest::Approx(1.0 / 9).epsilon(1e-12));
}

TEST_CASE("top-k pooling closed-form cases") {
    // scores [ln4, ln2, 0, 0] -> probs (1/2, 1/4, 1/8, 1/8)
    Tensor raw({3, 2, 2});
    raw.v = {2, 1, 7, 7,            // candidate slice 0
             0, 3, 9, 9,            // candidate slice 1
             std::log(4.0), std::log(2.0), 0, 0};
    ParamMaps maps = manual_maps(raw);
    TopKResult r = topk_pool(maps, 2);
    REQUIRE(r.selected == std::vector<int>{0, 1});
    CHECK(r.prob_sum == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(r.pooled[0] == doctest::Approx(5.0 / 3.0).epsilon(1e-12));
    CHECK(r.pooled[1] == doctest::Approx(1.0).epsilon(1e-12));

    // K = 1 selects the argmax cell and returns its candidates untouched
    TopKResult top1 = topk_pool(maps, 1);
    REQUIRE(top1.selected == std::vector<int>{0});
    CHECK(top1.pooled[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(top1.pooled[1] == doctest::Approx(0.0).epsilon(1e-12));

    // uniform scores: ties broken toward smaller flat indices
    Tensor flat({2, 2, 2});
    flat.v = {5, 6, 7, 8, 0, 0, 0, 0};
    TopKResult t = topk_pool(manual_maps(flat), 3);
    CHECK(t.selected == std::vector<int>{0, 1, 2});
    CHECK(t.pooled[0] == doctest::Approx(6.0).epsilon(1e-12));

    // K = all cells averages with the full distribution
    TopKResult all = topk_pool(maps, 4);
    CHECK(all.prob_sum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(all.pooled[0] ==
          doctest::Approx(0.5 * 2 + 0.25 * 1 + 0.125 * 7 + 0.125 * 7).epsilon(1e-12));
}

TEST_CASE("top-k pooling matches a full sort on a large grid") {
    Rng rng(11);
    const int f = 100, n_params = 2, k = 7;
    Tensor raw({n_params + 1, f, f});
    for (auto& v : raw.v) v = rng.normal();
    ParamMaps maps = manual_maps(raw);
    TopKResult got = topk_pool(maps, k);

    std::vector<int> order(f * f);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (maps.prob[a] != maps.prob[b]) return maps.prob[a] > maps.prob[b];
        return a < b;
    });
    order.resize(k);
    CHECK(got.selected == order);
    for (int p = 0; p < n_params; ++p) {
        double num = 0.0, den = 0.0;
        for (int idx : order) {
            num += maps.prob[idx] * raw.v[static_cast<std::size_t>(p) * f * f + idx];
            den += maps.prob[idx];
        }
        CHECK(got.pooled[p] == doctest::Approx(num / den).epsilon(1e-12));
    }
}

TEST_CASE("squashing the zero vector hits the documented midpoints") {
    SquashedTheta pc = squash(std::vector<double>(6, 0.0), HeadKind::Piecewise);
    CHECK(pc.curve.cut == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(pc.curve.knee == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(pc.curve.shadow_gamma == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(pc.curve.highlight_gamma == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(pc.curve.chroma_cut_a == doctest::Approx(0.225).epsilon(1e-12));
    CHECK(pc.curve.chroma_cut_b == doctest::Approx(0.225).epsilon(1e-12));

    SquashedTheta fw = squash(std::vector<double>(4, 0.0), HeadKind::Filter);
    for (double w : fw.weights.w) CHECK(w == doctest::Approx(0.25).epsilon(1e-12));

    SquashedTheta cr = squash(std::vector<double>(4, 0.0), HeadKind::Crop);
    CHECK(cr.rect.w == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(cr.rect.h == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(cr.rect.x == doctest::Approx(0.15).epsilon(1e-12));
    CHECK(cr.rect.y == doctest::Approx(0.15).epsilon(1e-12));
}

TEST_CASE("squashed parameters are valid for any raw input") {
    Rng rng(13);
    for (int trial = 0; trial < 100000; ++trial) {
        HeadKind kind = static_cast<HeadKind>(trial % 3);
        std::vector<double> raw(head_param_count(kind));
        for (auto& v : raw) v = 10.0 * rng.normal();
        SquashedTheta t = squash(raw, kind);
        switch (kind) {
            case HeadKind::Piecewise: CHECK(t.curve.valid()); break;
            case HeadKind::Filter: CHECK(t.weights.valid()); break;
            case HeadKind::Crop: CHECK(t.rect.valid()); break;
        }
    }
}

TEST_CASE("critic score is the aggregation of the two logits") {
    Rng rng(17);
    Critic c = Critic::make(16, {4, 8});
    c.init(rng);
    CHECK(c.agg_w.v == std::vector<double>{-1.0, 1.0});
    CHECK(c.agg_b[0] == 0.0);

    LabImage img(16, 16);
    for (auto& v : img.px) v = rng.uniform();
    auto lg = c.logits(img);
    double want = c.score_gain * (c.agg_w[0] * lg[0] + c.agg_w[1] * lg[1] + c.agg_b[0]);
    CHECK(c.score(img) == doctest::Approx(want).epsilon(1e-12));
    // with the initial aggregation, a higher good logit lowers the score
    CHECK(c.score(img) == doctest::Approx(c.score_gain * (lg[1] - lg[0])).epsilon(1e-12));
}

TEST_CASE("generator forward produces valid parameters deterministically") {
    Rng rng(19);
    for (HeadKind kind : {HeadKind::Piecewise, HeadKind::Filter, HeadKind::Crop}) {
        Generator g = Generator::make(kind, 16, {4, 8}, 2);
        g.init(rng);
        LabImage img(16, 16);
        Rng ri(23);
        for (auto& v : img.px) v = ri.uniform();
        SquashedTheta a = g.forward(img);
        SquashedTheta b = g.forward(img);
        switch (kind) {
            case HeadKind::Piecewise:
                CHECK(a.curve.valid());
                CHECK(a.curve.knee == b.curve.knee);
                break;
            case HeadKind::Filter:
                CHECK(a.weights.valid());
                CHECK(a.weights.w == b.weights.w);
                break;
            case HeadKind::Crop:
                CHECK(a.rect.valid());
                CHECK(a.rect.x == b.rect.x);
                break;
        }
    }
}
