#include "enh/net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace enh {
namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Conv2D::Conv2D(int ic, int oc, int k, int s, int p)
    : in_c(ic), out_c(oc), ksize(k), stride(s), pad(p),
      w({oc, ic, k, k}), b({oc}) {}

void Conv2D::init_he(Rng& rng) {
    double std = std::sqrt(2.0 / (in_c * ksize * ksize));
    for (double& x : w.v) x = rng.normal() * std;
    b.zero();
}

Tensor Conv2D::forward(const Tensor& x) const {
    int H = x.shape[1], W = x.shape[2];
    int OH = out_size(H), OW = out_size(W);
    Tensor out({out_c, OH, OW});
    for (int oc = 0; oc < out_c; ++oc) {
        double* op = &out.v[static_cast<std::size_t>(oc) * OH * OW];
        std::fill(op, op + static_cast<std::size_t>(OH) * OW, b[oc]);
        for (int ic = 0; ic < in_c; ++ic) {
            const double* xp = &x.v[static_cast<std::size_t>(ic) * H * W];
            for (int ky = 0; ky < ksize; ++ky) {
                for (int kx = 0; kx < ksize; ++kx) {
                    double wv = w.v[((static_cast<std::size_t>(oc) * in_c + ic) * ksize + ky) * ksize + kx];
                    if (wv == 0.0) continue;
                    for (int oy = 0; oy < OH; ++oy) {
                        int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= H) continue;
                        const double* xr = xp + static_cast<std::size_t>(iy) * W;
                        double* orow = op + static_cast<std::size_t>(oy) * OW;
                        int ox0 = std::max(0, (pad - kx + stride - 1) / stride);
                        int ox1 = std::min(OW - 1, (W - 1 + pad - kx) / stride);
                        for (int ox = ox0; ox <= ox1; ++ox)
                            orow[ox] += wv * xr[ox * stride - pad + kx];
                    }
                }
            }
        }
    }
    return out;
}

Tensor Conv2D::backward(const Tensor& x, const Tensor& gout, Tensor& gw, Tensor& gb) const {
    int H = x.shape[1], W = x.shape[2];
    int OH = gout.shape[1], OW = gout.shape[2];
    Tensor gin({in_c, H, W});
    for (int oc = 0; oc < out_c; ++oc) {
        const double* gp = &gout.v[static_cast<std::size_t>(oc) * OH * OW];
        double s = 0.0;
        for (std::size_t i = 0; i < static_cast<std::size_t>(OH) * OW; ++i) s += gp[i];
        gb[oc] += s;
        for (int ic = 0; ic < in_c; ++ic) {
            const double* xp = &x.v[static_cast<std::size_t>(ic) * H * W];
            double* gip = &gin.v[static_cast<std::size_t>(ic) * H * W];
            for (int ky = 0; ky < ksize; ++ky) {
                for (int kx = 0; kx < ksize; ++kx) {
                    std::size_t wi = ((static_cast<std::size_t>(oc) * in_c + ic) * ksize + ky) * ksize + kx;
                    double wv = w.v[wi];
                    double gwv = 0.0;
                    for (int oy = 0; oy < OH; ++oy) {
                        int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= H) continue;
                        const double* xr = xp + static_cast<std::size_t>(iy) * W;
                        double* gir = gip + static_cast<std::size_t>(iy) * W;
                        const double* gr = gp + static_cast<std::size_t>(oy) * OW;
                        int ox0 = std::max(0, (pad - kx + stride - 1) / stride);
                        int ox1 = std::min(OW - 1, (W - 1 + pad - kx) / stride);
                        for (int ox = ox0; ox <= ox1; ++ox) {
                            int ix = ox * stride - pad + kx;
                            gwv += xr[ix] * gr[ox];
                            gir[ix] += wv * gr[ox];
                        }
                    }
                    gw.v[wi] += gwv;
                }
            }
        }
    }
    return gin;
}

Tensor relu(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.v) v = v > 0.0 ? v : 0.0;
    return out;
}

Tensor relu_backward(const Tensor& x_pre, const Tensor& gout) {
    Tensor gin = gout;
    for (std::size_t i = 0; i < gin.v.size(); ++i)
        if (x_pre.v[i] <= 0.0) gin.v[i] = 0.0;
    return gin;
}

Trunk Trunk::make(int in_size, std::vector<int> channels) {
    Trunk t;
    t.in_size = in_size;
    int prev = 3;
    for (int c : channels) {
        t.convs.emplace_back(prev, c, 3, 2, 1);
        prev = c;
    }
    return t;
}

int Trunk::out_spatial() const {
    int s = in_size;
    for (const auto& c : convs) s = c.out_size(s);
    return s;
}

Tensor Trunk::forward(const Tensor& img_chw, Cache* cache) const {
    if (img_chw.shape[1] != in_size || img_chw.shape[2] != in_size)
        throw std::invalid_argument("trunk: wrong input size");
    Tensor a = img_chw;
    if (cache) {
        cache->inputs.clear();
        cache->pre.clear();
    }
    for (const auto& conv : convs) {
        if (cache) cache->inputs.push_back(a);
        Tensor z = conv.forward(a);
        if (cache) cache->pre.push_back(z);
        a = relu(z);
    }
    return a;
}

Tensor Trunk::backward(const Cache& cache, const Tensor& gout,
                       std::vector<Tensor>& gw, std::vector<Tensor>& gb) const {
    Tensor g = gout;
    for (int i = static_cast<int>(convs.size()) - 1; i >= 0; --i) {
        g = relu_backward(cache.pre[i], g);
        g = convs[i].backward(cache.inputs[i], g, gw[i], gb[i]);
    }
    return g;
}

void Trunk::init(Rng& rng) {
    for (auto& c : convs) c.init_he(rng);
}

void Trunk::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    for (std::size_t i = 0; i < convs.size(); ++i) {
        fn(prefix + ".conv" + std::to_string(i) + ".w", convs[i].w);
        fn(prefix + ".conv" + std::to_string(i) + ".b", convs[i].b);
    }
}

Tensor image_to_tensor(const LabImage& img) {
    Tensor t({3, img.h, img.w});
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) t.at3(c, y, x) = img.at(y, x, c);
    return t;
}

LabImage tensor_to_image(const Tensor& t) {
    LabImage img(t.shape[1], t.shape[2]);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = t.at3(c, y, x);
    return img;
}

std::vector<double> tensor_to_interleaved(const Tensor& t) {
    int h = t.shape[1], w = t.shape[2];
    std::vector<double> px(static_cast<std::size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                px[(static_cast<std::size_t>(y) * w + x) * 3 + c] = t.at3(c, y, x);
    return px;
}

Tensor interleaved_to_tensor(const std::vector<double>& px, int h, int w) {
    Tensor t({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                t.at3(c, y, x) = px[(static_cast<std::size_t>(y) * w + x) * 3 + c];
    return t;
}

int head_param_count(HeadKind kind) {
    switch (kind) {
        case HeadKind::Piecewise: return 6;
        case HeadKind::Filter: return 4;
        case HeadKind::Crop: return 4;
    }
    throw std::invalid_argument("unknown head kind");
}

const char* head_kind_name(HeadKind kind) {
    switch (kind) {
        case HeadKind::Piecewise: return "piecewise";
        case HeadKind::Filter: return "filter";
        case HeadKind::Crop: return "crop";
    }
    return "?";
}

HeadKind head_kind_from_name(const std::string& name) {
    if (name == "piecewise") return HeadKind::Piecewise;
    if (name == "filter") return HeadKind::Filter;
    if (name == "crop") return HeadKind::Crop;
    throw std::invalid_argument("unknown head kind: " + name);
}

ParamMaps head_forward(const Conv2D& head, const Tensor& features) {
    ParamMaps m;
    m.raw = head.forward(features);
    m.n_params = m.raw.shape[0] - 1;
    m.f = m.raw.shape[1];
    int cells = m.f * m.f;
    const double* score = &m.raw.v[static_cast<std::size_t>(m.n_params) * cells];
    double mx = *std::max_element(score, score + cells);
    m.prob.resize(cells);
    double sum = 0.0;
    for (int i = 0; i < cells; ++i) {
        m.prob[i] = std::exp(score[i] - mx);
        sum += m.prob[i];
    }
    for (int i = 0; i < cells; ++i) m.prob[i] /= sum;
    return m;
}

TopKResult topk_pool(const ParamMaps& maps, int k) {
    int cells = maps.f * maps.f;
    if (k < 1 || k > cells) throw std::invalid_argument("top-k out of range");
    std::vector<int> idx(cells);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (maps.prob[a] != maps.prob[b]) return maps.prob[a] > maps.prob[b];
        return a < b;
    });
    TopKResult r;
    r.selected.assign(idx.begin(), idx.begin() + k);
    for (int i : r.selected) r.prob_sum += maps.prob[i];
    r.pooled.assign(maps.n_params, 0.0);
    for (int p = 0; p < maps.n_params; ++p) {
        const double* slice = &maps.raw.v[static_cast<std::size_t>(p) * cells];
        double acc = 0.0;
        for (int i : r.selected) acc += maps.prob[i] * slice[i];
        r.pooled[p] = acc / r.prob_sum;
    }
    return r;
}

Tensor topk_head_backward(const ParamMaps& maps, const TopKResult& sel,
                          const std::vector<double>& gpooled) {
    int cells = maps.f * maps.f;
    Tensor graw(maps.raw.shape);
    std::vector<double> gprob(cells, 0.0);
    for (int p = 0; p < maps.n_params; ++p) {
        const double* slice = &maps.raw.v[static_cast<std::size_t>(p) * cells];
        double* gslice = &graw.v[static_cast<std::size_t>(p) * cells];
        for (int i : sel.selected) {
            gslice[i] += gpooled[p] * maps.prob[i] / sel.prob_sum;
            gprob[i] += gpooled[p] * (slice[i] - sel.pooled[p]) / sel.prob_sum;
        }
    }
    // softmax backward into the score slice
    double dot = 0.0;
    for (int i = 0; i < cells; ++i) dot += gprob[i] * maps.prob[i];
    double* gscore = &graw.v[static_cast<std::size_t>(maps.n_params) * cells];
    for (int i = 0; i < cells; ++i) gscore[i] = maps.prob[i] * (gprob[i] - dot);
    return graw;
}

SquashedTheta squash(const std::vector<double>& raw, HeadKind kind) {
    SquashedTheta t;
    t.kind = kind;
    switch (kind) {
        case HeadKind::Piecewise: {
            double cut = 0.2 * sigmoid(raw[0]);
            double knee = cut + CurveParams::kMinGap +
                          (0.499 - cut - CurveParams::kMinGap) * sigmoid(raw[1]);
            t.curve.cut = cut;
            t.curve.knee = knee;
            t.curve.shadow_gamma = 1.0 + 4.0 * sigmoid(raw[2]);
            t.curve.highlight_gamma = 0.05 + 0.9 * sigmoid(raw[3]);
            t.curve.chroma_cut_a = 0.45 * sigmoid(raw[4]);
            t.curve.chroma_cut_b = 0.45 * sigmoid(raw[5]);
            break;
        }
        case HeadKind::Filter: {
            double mx = *std::max_element(raw.begin(), raw.end());
            double sum = 0.0;
            for (int i = 0; i < 4; ++i) {
                t.weights.w[i] = std::exp(raw[i] - mx);
                sum += t.weights.w[i];
            }
            for (int i = 0; i < 4; ++i) t.weights.w[i] /= sum;
            break;
        }
        case HeadKind::Crop: {
            t.rect.w = 0.4 + 0.6 * sigmoid(raw[2]);
            t.rect.h = 0.4 + 0.6 * sigmoid(raw[3]);
            t.rect.x = (1.0 - t.rect.w) * sigmoid(raw[0]);
            t.rect.y = (1.0 - t.rect.h) * sigmoid(raw[1]);
            break;
        }
    }
    return t;
}

std::vector<double> squash_backward(const std::vector<double>& raw, HeadKind kind,
                                    const std::vector<double>& dtheta) {
    std::vector<double> graw(raw.size(), 0.0);
    auto sp = [](double x) {  // sigmoid derivative
        double s = sigmoid(x);
        return s * (1.0 - s);
    };
    switch (kind) {
        case HeadKind::Piecewise: {
            double s1 = sigmoid(raw[1]);
            double cut = 0.2 * sigmoid(raw[0]);
            // knee depends on raw[0] through cut as well
            graw[0] = (dtheta[0] + dtheta[1] * (1.0 - s1)) * 0.2 * sp(raw[0]);
            graw[1] = dtheta[1] * (0.499 - cut - CurveParams::kMinGap) * sp(raw[1]);
            graw[2] = dtheta[2] * 4.0 * sp(raw[2]);
            graw[3] = dtheta[3] * 0.9 * sp(raw[3]);
            graw[4] = dtheta[4] * 0.45 * sp(raw[4]);
            graw[5] = dtheta[5] * 0.45 * sp(raw[5]);
            break;
        }
        case HeadKind::Filter: {
            SquashedTheta t = squash(raw, kind);
            double dot = 0.0;
            for (int i = 0; i < 4; ++i) dot += dtheta[i] * t.weights.w[i];
            for (int i = 0; i < 4; ++i) graw[i] = t.weights.w[i] * (dtheta[i] - dot);
            break;
        }
        case HeadKind::Crop: {
            double sx = sigmoid(raw[0]), sy = sigmoid(raw[1]);
            double w = 0.4 + 0.6 * sigmoid(raw[2]);
            double h = 0.4 + 0.6 * sigmoid(raw[3]);
            graw[0] = dtheta[0] * (1.0 - w) * sp(raw[0]);
            graw[1] = dtheta[1] * (1.0 - h) * sp(raw[1]);
            graw[2] = (dtheta[2] - dtheta[0] * sx) * 0.6 * sp(raw[2]);
            graw[3] = (dtheta[3] - dtheta[1] * sy) * 0.6 * sp(raw[3]);
            break;
        }
    }
    return graw;
}

Generator Generator::make(HeadKind kind, int in_size, std::vector<int> channels, int top_k) {
    Generator g;
    g.kind = kind;
    g.top_k = top_k;
    g.trunk = Trunk::make(in_size, std::move(channels));
    g.head = Conv2D(g.trunk.out_channels(), head_param_count(kind) + 1, 1, 1, 0);
    return g;
}

void Generator::init(Rng& rng) {
    trunk.init(rng);
    head.init_he(rng);
}

SquashedTheta Generator::forward(const LabImage& img, Cache* cache) const {
    Cache local;
    Cache& c = cache ? *cache : local;
    Tensor x = image_to_tensor(img);
    c.features = trunk.forward(x, &c.trunk_cache);
    c.maps = head_forward(head, c.features);
    c.sel = topk_pool(c.maps, top_k);
    c.pooled = c.sel.pooled;
    return squash(c.pooled, kind);
}

void Generator::Grads::init_like(const Generator& g) {
    trunk_w.clear();
    trunk_b.clear();
    for (const auto& conv : g.trunk.convs) {
        trunk_w.emplace_back(conv.w.shape);
        trunk_b.emplace_back(conv.b.shape);
    }
    head_w = Tensor(g.head.w.shape);
    head_b = Tensor(g.head.b.shape);
}

void Generator::Grads::zero() {
    for (auto& t : trunk_w) t.zero();
    for (auto& t : trunk_b) t.zero();
    head_w.zero();
    head_b.zero();
}

void Generator::backward(const Cache& cache, const std::vector<double>& dtheta,
                         Grads& grads) const {
    std::vector<double> gpooled = squash_backward(cache.pooled, kind, dtheta);
    Tensor graw = topk_head_backward(cache.maps, cache.sel, gpooled);
    Tensor gfeat = head.backward(cache.features, graw, grads.head_w, grads.head_b);
    trunk.backward(cache.trunk_cache, gfeat, grads.trunk_w, grads.trunk_b);
}

void Generator::visit_params(const ParamVisitor& fn) {
    trunk.visit_params("trunk", fn);
    fn("head.w", head.w);
    fn("head.b", head.b);
}

Critic Critic::make(int in_size, std::vector<int> channels) {
    Critic c;
    c.trunk = Trunk::make(in_size, std::move(channels));
    int C = c.trunk.out_channels();
    c.fc_w = Tensor({2, C + 6});
    c.fc_b = Tensor({2});
    c.agg_w = Tensor({2});
    c.agg_b = Tensor({1});
    return c;
}

void Critic::init(Rng& rng) {
    trunk.init(rng);
    int C = fc_w.shape[1];
    double std = std::sqrt(2.0 / C);
    for (double& x : fc_w.v) x = rng.normal() * std;
    fc_b.zero();
    // classification knowledge transfers to the score immediately:
    // score = logit_bad - logit_good, lower when "good" dominates
    agg_w.v = {-1.0, 1.0};
    agg_b.v = {0.0};
}

std::array<double, 2> Critic::logits(const LabImage& img, Cache* cache) const {
    Cache local;
    Cache& c = cache ? *cache : local;
    Tensor x = image_to_tensor(img);
    c.features = trunk.forward(x, &c.trunk_cache);
    int C = c.features.shape[0];
    int cells = c.features.shape[1] * c.features.shape[2];
    c.gap.assign(C + 6, 0.0);
    for (int ch = 0; ch < C; ++ch) {
        const double* fp = &c.features.v[static_cast<std::size_t>(ch) * cells];
        double s = 0.0;
        for (int i = 0; i < cells; ++i) s += fp[i];
        c.gap[ch] = s / cells;
    }
    // global per-channel mean, plus its squared deviation from neutral:
    // per-pixel scene variance cancels in the mean, so (mean - 0.5)^2 puts a
    // color cast of any hue on a single linearly separable axis
    int npx = img.w * img.h;
    for (int ch = 0; ch < 3; ++ch) {
        const double* xp = &x.v[static_cast<std::size_t>(ch) * npx];
        double s = 0.0;
        for (int i = 0; i < npx; ++i) s += xp[i];
        double m = s / npx;
        c.gap[C + ch] = m;
        c.gap[C + 3 + ch] = (m - 0.5) * (m - 0.5);
    }
    int W = fc_w.shape[1];
    for (int k = 0; k < 2; ++k) {
        double s = fc_b[k];
        for (int ch = 0; ch < W; ++ch) s += fc_w.v[static_cast<std::size_t>(k) * W + ch] * c.gap[ch];
        c.logits[k] = s;
    }
    return c.logits;
}

double Critic::score(const LabImage& img, Cache* cache) const {
    Cache local;
    Cache& c = cache ? *cache : local;
    auto l = logits(img, &c);
    return score_gain * (agg_w[0] * l[0] + agg_w[1] * l[1] + agg_b[0]);
}

void Critic::Grads::init_like(const Critic& c) {
    trunk_w.clear();
    trunk_b.clear();
    for (const auto& conv : c.trunk.convs) {
        trunk_w.emplace_back(conv.w.shape);
        trunk_b.emplace_back(conv.b.shape);
    }
    fc_w = Tensor(c.fc_w.shape);
    fc_b = Tensor(c.fc_b.shape);
    agg_w = Tensor(c.agg_w.shape);
    agg_b = Tensor(c.agg_b.shape);
}

void Critic::Grads::zero() {
    for (auto& t : trunk_w) t.zero();
    for (auto& t : trunk_b) t.zero();
    fc_w.zero();
    fc_b.zero();
    agg_w.zero();
    agg_b.zero();
}

std::vector<double> Critic::backward_score(const Cache& cache, double upstream,
                                           Grads& grads) const {
    std::array<double, 2> dlogits;
    for (int k = 0; k < 2; ++k) {
        dlogits[k] = upstream * score_gain * agg_w[k];
        grads.agg_w[k] += upstream * score_gain * cache.logits[k];
    }
    grads.agg_b[0] += upstream * score_gain;
    return backward_from_dlogits(cache, dlogits, grads);
}

void Critic::backward_logits(const Cache& cache, const std::array<double, 2>& dlogits,
                             Grads& grads) const {
    backward_from_dlogits(cache, dlogits, grads);
}

std::vector<double> Critic::backward_from_dlogits(const Cache& cache,
                                                  const std::array<double, 2>& dlogits,
                                                  Grads& grads) const {
    int W = fc_w.shape[1];
    int C = W - 6;
    int f = cache.features.shape[1];
    int cells = f * f;
    std::vector<double> dgap(W, 0.0);
    for (int k = 0; k < 2; ++k) {
        grads.fc_b[k] += dlogits[k];
        for (int ch = 0; ch < W; ++ch) {
            grads.fc_w.v[static_cast<std::size_t>(k) * W + ch] += dlogits[k] * cache.gap[ch];
            dgap[ch] += dlogits[k] * fc_w.v[static_cast<std::size_t>(k) * W + ch];
        }
    }
    Tensor dfeat({C, f, f});
    for (int ch = 0; ch < C; ++ch) {
        double g = dgap[ch] / cells;
        double* dp = &dfeat.v[static_cast<std::size_t>(ch) * cells];
        std::fill(dp, dp + cells, g);
    }
    Tensor gin = trunk.backward(cache.trunk_cache, dfeat, grads.trunk_w, grads.trunk_b);
    std::vector<double> gimg = tensor_to_interleaved(gin);
    // the raw-input statistics feed gradient straight back to every pixel:
    // d(mean)/dx = 1/n, d(msd)/dx = 2(x - 0.5)/n
    const Tensor& x = cache.trunk_cache.inputs[0];
    int npx = static_cast<int>(gimg.size()) / 3;
    for (int ch = 0; ch < 3; ++ch) {
        double gm = dgap[C + ch] / npx;
        double gs = dgap[C + 3 + ch] * 2.0 / npx;
        if (gm == 0.0 && gs == 0.0) continue;
        const double* xp = &x.v[static_cast<std::size_t>(ch) * npx];
        for (int i = 0; i < npx; ++i)
            gimg[static_cast<std::size_t>(i) * 3 + ch] += gm + gs * (xp[i] - 0.5);
    }
    return gimg;
}

void Critic::visit_params(const ParamVisitor& fn) {
    trunk.visit_params("trunk", fn);
    fn("fc.w", fc_w);
    fn("fc.b", fc_b);
    fn("agg.w", agg_w);
    fn("agg.b", agg_b);
}

std::vector<double> FeatureExtractor::features(const LabImage& img, Trunk::Cache* cache) const {
    Trunk::Cache local;
    Trunk::Cache& c = cache ? *cache : local;
    Tensor out = trunk.forward(image_to_tensor(img), &c);
    int C = out.shape[0];
    int cells = out.shape[1] * out.shape[2];
    std::vector<double> feat(C, 0.0);
    for (int ch = 0; ch < C; ++ch) {
        const double* fp = &out.v[static_cast<std::size_t>(ch) * cells];
        double s = 0.0;
        for (int i = 0; i < cells; ++i) s += fp[i];
        feat[ch] = s / cells;
    }
    return feat;
}

std::vector<double> FeatureExtractor::backward(const Trunk::Cache& cache,
                                               const std::vector<double>& dfeat) const {
    int C = trunk.out_channels();
    int f = trunk.out_spatial();
    int cells = f * f;
    Tensor g({C, f, f});
    for (int ch = 0; ch < C; ++ch) {
        double v = dfeat[ch] / cells;
        double* gp = &g.v[static_cast<std::size_t>(ch) * cells];
        std::fill(gp, gp + cells, v);
    }
    std::vector<Tensor> gw, gb;  // discarded: the extractor is frozen
    for (const auto& conv : trunk.convs) {
        gw.emplace_back(conv.w.shape);
        gb.emplace_back(conv.b.shape);
    }
    Tensor gin = trunk.backward(cache, g, gw, gb);
    return tensor_to_interleaved(gin);
}

}  // namespace enh
