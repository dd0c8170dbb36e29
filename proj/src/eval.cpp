#include "enh/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>

#include "enh/colorspace.hpp"
#include "enh/imageio.hpp"
#include "enh/losses.hpp"

namespace enh {

double iou(const BoxN& a, const BoxN& b) {
    double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    double inter = ix * iy;
    double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

double bde(const BoxN& a, const BoxN& b) {
    return (std::abs(a.x1 - b.x1) + std::abs(a.x2 - b.x2) + std::abs(a.y1 - b.y1) +
            std::abs(a.y2 - b.y2)) /
           4.0;
}

double lab_rmse(const LabImage& a, const LabImage& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.px.size(); ++i) {
        double d = a.px[i] - b.px[i];
        acc += d * d;
    }
    return std::sqrt(acc / a.px.size());
}

namespace {

double good_prob(const Critic& evaluator, const LabImage& img) {
    auto l = evaluator.logits(img);
    double m = std::max(l[0], l[1]);
    double e0 = std::exp(l[0] - m), e1 = std::exp(l[1] - m);
    return e0 / (e0 + e1);
}

}  // namespace

double chroma_bias(const LabImage& img) {
    double ma = 0.0, mb = 0.0;
    int n = img.h * img.w;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            ma += img.at(y, x, 1);
            mb += img.at(y, x, 2);
        }
    return (std::abs(ma / n - 0.5) + std::abs(mb / n - 0.5)) / 2.0;
}

EnhanceEvalReport eval_enhancement(const Generator& gen, const Critic& critic,
                                   const Critic& evaluator, const LoadedDataset& data,
                                   const std::array<TintFilter, 3>& filters) {
    namespace fs = std::filesystem;
    EnhanceEvalReport r;
    for (int idx : data.bad) {
        LabImage img = data.image(idx);
        LabImage out = apply_operator(gen.forward(img), img, filters);
        double sb = critic.score(img);
        double sa = critic.score(out);
        r.mean_score_before += sb;
        r.mean_score_after += sa;
        if (sa < sb) r.improved_fraction += 1.0;
        double pb = good_prob(evaluator, img);
        double pa = good_prob(evaluator, out);
        r.mean_prob_before += pb;
        r.mean_prob_after += pa;
        if (pb > 0.5) r.vote_before += 1.0;
        if (pa > 0.5) r.vote_after += 1.0;
        r.chroma_bias_before += chroma_bias(img);
        r.chroma_bias_after += chroma_bias(out);
        ++r.n;

        fs::path ref = fs::path(data.dir) / "ref" / fs::path(data.manifest.entries[idx].path).filename();
        if (fs::exists(ref)) {
            LabImage ref_img = srgb_to_lab(load_image(ref.string()));
            r.mean_rmse_before += lab_rmse(img, ref_img);
            r.mean_rmse_after += lab_rmse(out, ref_img);
            ++r.n_ref;
        }
    }
    if (r.n > 0) {
        r.mean_score_before /= r.n;
        r.mean_score_after /= r.n;
        r.improved_fraction /= r.n;
        r.mean_prob_before /= r.n;
        r.mean_prob_after /= r.n;
        r.vote_before /= r.n;
        r.vote_after /= r.n;
        r.chroma_bias_before /= r.n;
        r.chroma_bias_after /= r.n;
    }
    if (r.n_ref > 0) {
        r.mean_rmse_before /= r.n_ref;
        r.mean_rmse_after /= r.n_ref;
    }
    return r;
}

CropEvalReport eval_cropping(const Generator& gen, const LoadedDataset& data) {
    CropEvalReport r;
    for (int idx : data.bad) {
        const auto& e = data.manifest.entries[idx];
        if (!e.bbox) continue;
        LabImage img = data.image(idx);
        CropRect rect = gen.forward(img).rect;
        BoxN pred{rect.x, rect.y, rect.x + rect.w, rect.y + rect.h};
        r.mean_iou += iou(pred, *e.bbox);
        r.mean_bde += bde(pred, *e.bbox);
        ++r.n;
    }
    if (r.n > 0) {
        r.mean_iou /= r.n;
        r.mean_bde /= r.n;
    }
    return r;
}

// ---------------- gradient checking ----------------

namespace {

// One scalar probe J(t) along a fixed perturbation direction; the check
// compares <analytic_grad, direction> against a central difference.
// Returns NaN when the probe straddles a non-smooth point (Top-K
// selection tie, ReLU kink, segment breakpoint): there the two step
// sizes disagree with each other, while a wrong analytic gradient leaves
// them consistent and is still caught.
double rel_err(double analytic, const std::function<double(double)>& J) {
    const double h = kGradCheckStep;
    double fd = (J(h) - J(-h)) / (2.0 * h);
    double fd2 = (J(2.0 * h) - J(-2.0 * h)) / (4.0 * h);
    double denom = std::max({std::abs(analytic), std::abs(fd), 1e-8});
    if (std::abs(fd - fd2) / denom > 1e-5) return std::numeric_limits<double>::quiet_NaN();
    return std::abs(analytic - fd) / denom;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

std::vector<double> rand_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

// He initialization zeroes biases; dead-ReLU regions then produce
// preactivations sitting exactly on the kink, where finite differences
// are one-sided. Jitter every bias so test networks are generic.
template <typename Net>
void jitter_biases(Net& net, Rng& rng) {
    net.visit_params([&](const std::string& name, Tensor& t) {
        if (name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") == 0)
            for (double& v : t.v) v += rng.uniform(0.01, 0.05);
    });
}

// Lab image with every channel well inside the valid range and the L
// channel kept away from the curve breakpoints of `t` (finite differences
// across a kink of a C0 function are meaningless).
LabImage smooth_lab(Rng& rng, int h, int w, const CurveParams* t = nullptr) {
    LabImage img(h, w);
    for (double& v : img.px) v = rng.uniform(0.30, 0.70);
    if (t) {
        const double margin = 1e-3;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double& L = img.at(y, x, 0);
                for (double bp : {t->cut, t->knee, 1.0 - t->knee})
                    if (std::abs(L - bp) < margin) L = bp + margin * 2.0;
            }
    }
    return img;
}

struct Check {
    std::string name;
    std::function<double(Rng&)> run;  // returns max rel err
};

double check_colorspace_s2l(Rng& rng) {
    RgbImage img(6, 7);
    for (double& v : img.px) v = rng.uniform(0.05, 0.95);
    auto u = rand_vec(rng, img.px.size());
    auto d = rand_vec(rng, img.px.size());
    auto g = vjp_srgb_to_lab(img, u);
    return rel_err(dot(g, d), [&](double t) {
        RgbImage p = img;
        for (std::size_t i = 0; i < p.px.size(); ++i) p.px[i] += t * d[i];
        return dot(u, srgb_to_lab(p).px);
    });
}

double check_colorspace_l2s(Rng& rng) {
    RgbImage base(6, 7);
    for (double& v : base.px) v = rng.uniform(0.10, 0.90);
    LabImage img = srgb_to_lab(base);  // guaranteed in gamut
    auto u = rand_vec(rng, img.px.size());
    auto d = rand_vec(rng, img.px.size());
    auto g = vjp_lab_to_srgb(img, u);
    return rel_err(dot(g, d), [&](double t) {
        LabImage p = img;
        for (std::size_t i = 0; i < p.px.size(); ++i) p.px[i] += t * d[i];
        return dot(u, lab_to_srgb(p).px);
    });
}

CurveParams rand_curve(Rng& rng) {
    CurveParams t;
    t.cut = rng.uniform(0.02, 0.10);
    t.knee = t.cut + rng.uniform(0.05, 0.25);
    t.shadow_gamma = rng.uniform(1.5, 4.0);
    t.highlight_gamma = rng.uniform(0.2, 0.8);
    t.chroma_cut_a = rng.uniform(0.05, 0.20);
    t.chroma_cut_b = rng.uniform(0.05, 0.20);
    return t;
}

double check_piecewise_img(Rng& rng) {
    CurveParams t = rand_curve(rng);
    LabImage img = smooth_lab(rng, 5, 6, &t);
    auto u = rand_vec(rng, img.px.size());
    auto d = rand_vec(rng, img.px.size(), -0.01, 0.01);
    std::vector<double> gimg;
    std::array<double, 6> gp;
    vjp_piecewise(img, t, u, gimg, gp);
    return rel_err(dot(gimg, d), [&](double s) {
        LabImage p = img;
        for (std::size_t i = 0; i < p.px.size(); ++i) p.px[i] += s * d[i];
        return dot(u, apply_piecewise(p, t).px);
    });
}

double check_piecewise_params(Rng& rng) {
    CurveParams t = rand_curve(rng);
    LabImage img = smooth_lab(rng, 5, 6, &t);
    auto u = rand_vec(rng, img.px.size());
    auto dir = rand_vec(rng, 6);
    std::vector<double> gimg;
    std::array<double, 6> gp;  // knee, cut, sg, hg, ca, cb
    vjp_piecewise(img, t, u, gimg, gp);
    double analytic = 0.0;
    for (int i = 0; i < 6; ++i) analytic += gp[i] * dir[i];
    return rel_err(analytic, [&](double s) {
        CurveParams p = t;
        p.knee += s * dir[0];
        p.cut += s * dir[1];
        p.shadow_gamma += s * dir[2];
        p.highlight_gamma += s * dir[3];
        p.chroma_cut_a += s * dir[4];
        p.chroma_cut_b += s * dir[5];
        return dot(u, apply_piecewise(img, p).px);
    });
}

double check_tint(Rng& rng) {
    TintFilter f = default_tint_filters(0.6)[rng.uniform_int(0, 2)];
    LabImage img = smooth_lab(rng, 5, 6);
    auto u = rand_vec(rng, img.px.size());
    auto d = rand_vec(rng, img.px.size(), -0.01, 0.01);
    std::vector<double> gimg;
    vjp_tint(img, f, u, gimg);
    return rel_err(dot(gimg, d), [&](double s) {
        LabImage p = img;
        for (std::size_t i = 0; i < p.px.size(); ++i) p.px[i] += s * d[i];
        return dot(u, apply_tint(p, f).px);
    });
}

double check_filter_bank(Rng& rng) {
    auto filters = default_tint_filters(0.6);
    FilterWeights w;
    double raw[4], sum = 0.0;
    for (double& v : raw) sum += v = rng.uniform(0.1, 1.0);
    for (int i = 0; i < 4; ++i) w.w[i] = raw[i] / sum;
    LabImage img = smooth_lab(rng, 5, 6);
    auto u = rand_vec(rng, img.px.size());
    std::vector<double> gimg;
    std::array<double, 4> gw;
    vjp_filter_bank(img, w, filters, u, gimg, gw);

    auto dimg = rand_vec(rng, img.px.size(), -0.01, 0.01);
    auto dw = rand_vec(rng, 4, -0.01, 0.01);
    // keep the perturbed weights on the simplex
    double mean = (dw[0] + dw[1] + dw[2] + dw[3]) / 4.0;
    for (double& v : dw) v -= mean;
    double analytic = dot(gimg, dimg);
    for (int i = 0; i < 4; ++i) analytic += gw[i] * dw[i];
    return rel_err(analytic, [&](double s) {
        LabImage p = img;
        for (std::size_t i = 0; i < p.px.size(); ++i) p.px[i] += s * dimg[i];
        FilterWeights pw = w;
        for (int i = 0; i < 4; ++i) pw.w[i] += s * dw[i];
        return dot(u, apply_filter_bank(p, pw, filters).px);
    });
}

// Rect whose sampling coordinates stay away from integer tap boundaries,
// where bilinear interpolation has derivative kinks.
CropRect safe_rect(Rng& rng, int out_h, int out_w, int src_h, int src_w) {
    for (int attempt = 0; attempt < 200; ++attempt) {
        CropRect r;
        r.w = rng.uniform(0.45, 0.8);
        r.h = rng.uniform(0.45, 0.8);
        r.x = rng.uniform(0.05, 1.0 - r.w - 0.05);
        r.y = rng.uniform(0.05, 1.0 - r.h - 0.05);
        SamplingGrid g = make_grid(r, out_h, out_w, src_h, src_w);
        double closest = 1.0;
        for (double s : g.sx) closest = std::min(closest, std::abs(s - std::round(s)));
        for (double s : g.sy) closest = std::min(closest, std::abs(s - std::round(s)));
        if (closest > 1e-3) return r;
    }
    return CropRect{0.123, 0.117, 0.531, 0.543};
}

double check_crop_img(Rng& rng) {
    LabImage img = smooth_lab(rng, 9, 8);
    CropRect r = safe_rect(rng, 5, 6, img.h, img.w);
    auto u = rand_vec(rng, 5 * 6 * 3);
    auto d = rand_vec(rng, img.px.size(), -0.01, 0.01);
    std::vector<double> gimg;
    std::array<double, 4> gr;
    vjp_crop(img, r, 5, 6, u, gimg, gr);
    return rel_err(dot(gimg, d), [&](double s) {
        LabImage p = img;
        for (std::size_t i = 0; i < p.px.size(); ++i) p.px[i] += s * d[i];
        return dot(u, bilinear_sample(p, make_grid(r, 5, 6, p.h, p.w)).px);
    });
}

double check_crop_rect(Rng& rng) {
    LabImage img = smooth_lab(rng, 9, 8);
    CropRect r = safe_rect(rng, 5, 6, img.h, img.w);
    auto u = rand_vec(rng, 5 * 6 * 3);
    auto dir = rand_vec(rng, 4, -0.01, 0.01);
    std::vector<double> gimg;
    std::array<double, 4> gr;  // x, y, w, h
    vjp_crop(img, r, 5, 6, u, gimg, gr);
    double analytic = gr[0] * dir[0] + gr[1] * dir[1] + gr[2] * dir[2] + gr[3] * dir[3];
    return rel_err(analytic, [&](double s) {
        CropRect p = r;
        p.x += s * dir[0];
        p.y += s * dir[1];
        p.w += s * dir[2];
        p.h += s * dir[3];
        return dot(u, bilinear_sample(img, make_grid(p, 5, 6, img.h, img.w)).px);
    });
}

double check_conv(Rng& rng) {
    Conv2D conv(3, 4, 3, 2, 1);
    conv.init_he(rng);
    for (double& v : conv.b.v) v += rng.uniform(0.01, 0.05);
    Tensor x({3, 8, 8});
    for (double& v : x.v) v = rng.uniform(-1.0, 1.0);
    Tensor y = conv.forward(x);
    auto u = rand_vec(rng, y.size());
    Tensor gout(y.shape);
    gout.v = u;
    Tensor gw(conv.w.shape), gb(conv.b.shape);
    Tensor gin = conv.backward(x, gout, gw, gb);

    auto dx = rand_vec(rng, x.size(), -0.01, 0.01);
    auto dw = rand_vec(rng, conv.w.size(), -0.01, 0.01);
    auto db = rand_vec(rng, conv.b.size(), -0.01, 0.01);
    double analytic = dot(gin.v, dx) + dot(gw.v, dw) + dot(gb.v, db);
    return rel_err(analytic, [&](double s) {
        Conv2D c = conv;
        for (std::size_t i = 0; i < c.w.size(); ++i) c.w[i] += s * dw[i];
        for (std::size_t i = 0; i < c.b.size(); ++i) c.b[i] += s * db[i];
        Tensor px = x;
        for (std::size_t i = 0; i < px.size(); ++i) px[i] += s * dx[i];
        return dot(u, c.forward(px).v);
    });
}

double check_trunk(Rng& rng) {
    Trunk trunk = Trunk::make(8, {4, 8});
    trunk.init(rng);
    trunk.visit_params("trunk", [&](const std::string& name, Tensor& t) {
        if (name.compare(name.size() - 2, 2, ".b") == 0)
            for (double& v : t.v) v += rng.uniform(0.01, 0.05);
    });
    Tensor x({3, 8, 8});
    for (double& v : x.v) v = rng.uniform(-1.0, 1.0);
    Trunk::Cache cache;
    Tensor y = trunk.forward(x, &cache);
    auto u = rand_vec(rng, y.size());
    Tensor gout(y.shape);
    gout.v = u;
    std::vector<Tensor> gw, gb;
    for (const auto& c : trunk.convs) {
        gw.emplace_back(c.w.shape);
        gb.emplace_back(c.b.shape);
    }
    Tensor gin = trunk.backward(cache, gout, gw, gb);

    auto dx = rand_vec(rng, x.size(), -0.01, 0.01);
    double analytic = dot(gin.v, dx);
    std::vector<std::vector<double>> dws, dbs;
    for (std::size_t i = 0; i < trunk.convs.size(); ++i) {
        dws.push_back(rand_vec(rng, trunk.convs[i].w.size(), -0.01, 0.01));
        dbs.push_back(rand_vec(rng, trunk.convs[i].b.size(), -0.01, 0.01));
        analytic += dot(gw[i].v, dws[i]) + dot(gb[i].v, dbs[i]);
    }
    return rel_err(analytic, [&](double s) {
        Trunk t = trunk;
        for (std::size_t i = 0; i < t.convs.size(); ++i) {
            for (std::size_t j = 0; j < t.convs[i].w.size(); ++j) t.convs[i].w[j] += s * dws[i][j];
            for (std::size_t j = 0; j < t.convs[i].b.size(); ++j) t.convs[i].b[j] += s * dbs[i][j];
        }
        Tensor px = x;
        for (std::size_t i = 0; i < px.size(); ++i) px[i] += s * dx[i];
        return dot(u, t.forward(px).v);
    });
}

double check_topk_head(Rng& rng, HeadKind kind) {
    int np = head_param_count(kind);
    Conv2D head(8, np + 1, 1, 1, 0);
    head.init_he(rng);
    Tensor feats({8, 4, 4});
    for (double& v : feats.v) v = rng.uniform(-1.0, 1.0);

    auto pool = [&](const Tensor& f) {
        ParamMaps maps = head_forward(head, f);
        return topk_pool(maps, 3);
    };
    ParamMaps maps = head_forward(head, feats);
    TopKResult sel = topk_pool(maps, 3);
    auto u = rand_vec(rng, static_cast<std::size_t>(np));
    Tensor graw = topk_head_backward(maps, sel, u);
    // back through the 1x1 conv to the feature tensor
    Tensor gw(head.w.shape), gb(head.b.shape);
    Tensor gfeat = head.backward(feats, graw, gw, gb);

    auto d = rand_vec(rng, feats.size(), -0.01, 0.01);
    return rel_err(dot(gfeat.v, d), [&](double s) {
        Tensor p = feats;
        for (std::size_t i = 0; i < p.size(); ++i) p[i] += s * d[i];
        return dot(u, pool(p).pooled);
    });
}

std::vector<double> theta_vec(const SquashedTheta& th) {
    switch (th.kind) {
        case HeadKind::Piecewise:
            return {th.curve.cut, th.curve.knee, th.curve.shadow_gamma,
                    th.curve.highlight_gamma, th.curve.chroma_cut_a, th.curve.chroma_cut_b};
        case HeadKind::Filter:
            return {th.weights.w[0], th.weights.w[1], th.weights.w[2], th.weights.w[3]};
        case HeadKind::Crop:
            return {th.rect.x, th.rect.y, th.rect.w, th.rect.h};
    }
    return {};
}

double check_squash(Rng& rng, HeadKind kind) {
    int np = head_param_count(kind);
    auto raw = rand_vec(rng, static_cast<std::size_t>(np), -2.0, 2.0);
    auto u = rand_vec(rng, static_cast<std::size_t>(np));
    auto graw = squash_backward(raw, kind, u);
    auto d = rand_vec(rng, static_cast<std::size_t>(np), -0.01, 0.01);
    return rel_err(dot(graw, d), [&](double s) {
        auto p = raw;
        for (std::size_t i = 0; i < p.size(); ++i) p[i] += s * d[i];
        return dot(u, theta_vec(squash(p, kind)));
    });
}

double check_critic_score(Rng& rng) {
    Critic critic = Critic::make(8, {4, 8});
    critic.init(rng);
    jitter_biases(critic, rng);
    LabImage img = smooth_lab(rng, 8, 8);
    Critic::Cache cache;
    critic.score(img, &cache);
    Critic::Grads grads;
    grads.init_like(critic);
    std::vector<double> gimg = critic.backward_score(cache, 1.0, grads);

    auto dimg = rand_vec(rng, img.px.size(), -0.01, 0.01);
    double analytic = dot(gimg, dimg);
    std::vector<std::pair<Tensor*, std::vector<double>>> dirs;
    std::size_t gi = 0;
    // gptr follows visit_params order: interleaved w/b per conv, then heads
    std::vector<Tensor*> gptr;
    for (std::size_t i = 0; i < grads.trunk_w.size(); ++i) {
        gptr.push_back(&grads.trunk_w[i]);
        gptr.push_back(&grads.trunk_b[i]);
    }
    gptr.push_back(&grads.fc_w);
    gptr.push_back(&grads.fc_b);
    gptr.push_back(&grads.agg_w);
    gptr.push_back(&grads.agg_b);
    critic.visit_params([&](const std::string&, Tensor& t) {
        dirs.emplace_back(&t, rand_vec(rng, t.size(), -0.01, 0.01));
        analytic += dot(gptr[gi++]->v, dirs.back().second);
    });

    return rel_err(analytic, [&](double s) {
        Critic c = critic;  // deep copy; dirs point into the original
        std::size_t k = 0;
        c.visit_params([&](const std::string&, Tensor& t) {
            for (std::size_t i = 0; i < t.size(); ++i) t[i] += s * dirs[k].second[i];
            ++k;
        });
        LabImage p = img;
        for (std::size_t i = 0; i < p.px.size(); ++i) p.px[i] += s * dimg[i];
        return c.score(p);
    });
}

double check_fx(Rng& rng) {
    Trunk trunk = Trunk::make(8, {4, 8});
    Rng init_rng(rng.next_u64());
    trunk.init(init_rng);
    trunk.visit_params("trunk", [&](const std::string& name, Tensor& t) {
        if (name.compare(name.size() - 2, 2, ".b") == 0)
            for (double& v : t.v) v += rng.uniform(0.01, 0.05);
    });
    FeatureExtractor fx{trunk};
    LabImage img = smooth_lab(rng, 8, 8);
    Trunk::Cache cache;
    std::vector<double> f = fx.features(img, &cache);
    auto u = rand_vec(rng, f.size());
    std::vector<double> gimg = fx.backward(cache, u);
    auto d = rand_vec(rng, img.px.size(), -0.01, 0.01);
    return rel_err(dot(gimg, d), [&](double s) {
        LabImage p = img;
        for (std::size_t i = 0; i < p.px.size(); ++i) p.px[i] += s * d[i];
        return dot(u, fx.features(p));
    });
}

double check_losses(Rng& rng) {
    double worst = 0.0;
    {  // reg1
        auto fo = rand_vec(rng, 16), fi = rand_vec(rng, 16);
        auto g = loss_reg1_grad(fo, fi);
        auto d = rand_vec(rng, 16, -0.01, 0.01);
        worst = std::max(worst, rel_err(dot(g, d), [&](double s) {
                             auto p = fo;
                             for (std::size_t i = 0; i < p.size(); ++i) p[i] += s * d[i];
                             return loss_reg1(p, fi);
                         }));
    }
    {  // reg2, active branch
        double s_in = rng.uniform(-1.0, 1.0);
        double s_out = s_in + rng.uniform(0.1, 1.0);
        double g = loss_reg2_grad(s_out, s_in);
        worst = std::max(worst,
                         rel_err(g, [&](double t) { return loss_reg2(s_out + t, s_in); }));
    }
    {  // cross entropy
        std::array<double, 2> l{rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
        int label = rng.uniform_int(0, 1);
        auto g = ce_grad(l, label);
        auto d = rand_vec(rng, 2, -0.01, 0.01);
        worst = std::max(worst, rel_err(g[0] * d[0] + g[1] * d[1], [&](double s) {
                             std::vector<std::array<double, 2>> batch{
                                 {l[0] + s * d[0], l[1] + s * d[1]}};
                             return loss_pretrain_ce(batch, {label});
                         }));
    }
    return worst;
}

// Full pipeline on a tiny configuration: d(score of enhanced image)/d(all
// generator parameters). Exercises trunk, head, Top-K, squash, the image
// operator VJP, and the critic input gradient in one chain.
double check_end_to_end(Rng& rng, HeadKind kind) {
    Generator gen = Generator::make(kind, 16, {4, 8});
    gen.init(rng);
    jitter_biases(gen, rng);
    Critic critic = Critic::make(16, {4, 8});
    critic.init(rng);
    jitter_biases(critic, rng);
    auto filters = default_tint_filters(0.6);

    Generator::Cache gcache;
    LabImage img = smooth_lab(rng, 16, 16);
    {  // keep L away from the produced curve's breakpoints
        SquashedTheta th = gen.forward(img);
        if (kind == HeadKind::Piecewise) img = smooth_lab(rng, 16, 16, &th.curve);
    }

    auto forward_scalar = [&](Generator& g) {
        SquashedTheta th = g.forward(img);
        return critic.score(apply_operator(th, img, filters));
    };

    SquashedTheta theta = gen.forward(img, &gcache);
    LabImage out = apply_operator(theta, img, filters);
    Critic::Cache ccache;
    critic.score(out, &ccache);
    Critic::Grads cg;
    cg.init_like(critic);
    std::vector<double> g_px = critic.backward_score(ccache, 1.0, cg);
    std::vector<double> dtheta = operator_vjp_theta(theta, img, g_px, filters);
    Generator::Grads gg;
    gg.init_like(gen);
    gg.zero();
    gen.backward(gcache, dtheta, gg);

    std::vector<Tensor*> gptr;
    for (std::size_t i = 0; i < gg.trunk_w.size(); ++i) {
        gptr.push_back(&gg.trunk_w[i]);
        gptr.push_back(&gg.trunk_b[i]);
    }
    gptr.push_back(&gg.head_w);
    gptr.push_back(&gg.head_b);

    double analytic = 0.0;
    std::vector<std::vector<double>> dirs;
    std::size_t k = 0;
    // unit-scale direction: the composite J is O(1), so a tiny direction
    // would push the difference quotient into double roundoff
    gen.visit_params([&](const std::string&, Tensor& t) {
        dirs.push_back(rand_vec(rng, t.size(), -1.0, 1.0));
        analytic += dot(gptr[k++]->v, dirs.back());
    });

    return rel_err(analytic, [&](double s) {
        Generator g = gen;
        std::size_t j = 0;
        g.visit_params([&](const std::string&, Tensor& t) {
            for (std::size_t i = 0; i < t.size(); ++i) t[i] += s * dirs[j][i];
            ++j;
        });
        return forward_scalar(g);
    });
}

std::vector<Check> registry() {
    return {
        {"colorspace/srgb_to_lab", check_colorspace_s2l},
        {"colorspace/lab_to_srgb", check_colorspace_l2s},
        {"color_ops/piecewise_image", check_piecewise_img},
        {"color_ops/piecewise_params", check_piecewise_params},
        {"color_ops/tint", check_tint},
        {"color_ops/filter_bank", check_filter_bank},
        {"crop/image", check_crop_img},
        {"crop/rect", check_crop_rect},
        {"net/conv2d", check_conv},
        {"net/trunk", check_trunk},
        {"net/topk_head", [](Rng& r) { return check_topk_head(r, HeadKind::Piecewise); }},
        {"net/squash_piecewise", [](Rng& r) { return check_squash(r, HeadKind::Piecewise); }},
        {"net/squash_filter", [](Rng& r) { return check_squash(r, HeadKind::Filter); }},
        {"net/squash_crop", [](Rng& r) { return check_squash(r, HeadKind::Crop); }},
        {"critic/score", check_critic_score},
        {"critic/features", check_fx},
        {"losses/grads", check_losses},
        {"pipeline/piecewise", [](Rng& r) { return check_end_to_end(r, HeadKind::Piecewise); }},
        {"pipeline/filter", [](Rng& r) { return check_end_to_end(r, HeadKind::Filter); }},
        {"pipeline/crop", [](Rng& r) { return check_end_to_end(r, HeadKind::Crop); }},
    };
}

}  // namespace

std::vector<GradCheckResult> gradcheck_all(std::uint64_t seed, int trials) {
    std::vector<GradCheckResult> out;
    for (const auto& c : registry()) {
        GradCheckResult r;
        r.name = c.name;
        bool threw = false;
        for (int t = 0; t < trials; ++t) {
            Rng rng(seed + 1000003ULL * t + std::hash<std::string>{}(c.name));
            try {
                double e = c.run(rng);
                if (!std::isnan(e)) r.max_rel_err = std::max(r.max_rel_err, e);
            } catch (const std::exception& e) {
                r.name += std::string(" (threw: ") + e.what() + ")";
                threw = true;
                break;
            }
        }
        r.pass = !threw && r.max_rel_err < kGradCheckTol;
        out.push_back(std::move(r));
    }
    return out;
}

bool gradcheck_detects_corruption(std::uint64_t seed) {
    // A broken VJP (here: tint with a sign error injected on top of the
    // correct gradient) must exceed the tolerance.
    Rng rng(seed);
    TintFilter f = default_tint_filters(0.6)[0];
    LabImage img = smooth_lab(rng, 5, 6);
    auto u = rand_vec(rng, img.px.size());
    auto d = rand_vec(rng, img.px.size(), -0.01, 0.01);
    std::vector<double> gimg;
    vjp_tint(img, f, u, gimg);
    for (double& v : gimg) v *= 1.01;  // 1% corruption
    double err = rel_err(dot(gimg, d), [&](double s) {
        LabImage p = img;
        for (std::size_t i = 0; i < p.px.size(); ++i) p.px[i] += s * d[i];
        return dot(u, apply_tint(p, f).px);
    });
    return err > kGradCheckTol;
}

}  // namespace enh
