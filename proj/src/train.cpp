#include "enh/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "enh/colorspace.hpp"
#include "enh/imageio.hpp"
#include "enh/losses.hpp"

namespace enh {
namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// parameter tensors of a network in visit order, paired with the matching
// gradient tensors of a Grads struct
struct ParamList {
    std::vector<std::string> names;
    std::vector<Tensor*> params;
    std::vector<Tensor*> grads;
};

ParamList collect(Generator& g, Generator::Grads& gr) {
    ParamList l;
    g.visit_params([&](const std::string& n, Tensor& t) {
        l.names.push_back(n);
        l.params.push_back(&t);
    });
    for (std::size_t i = 0; i < gr.trunk_w.size(); ++i) {
        l.grads.push_back(&gr.trunk_w[i]);
        l.grads.push_back(&gr.trunk_b[i]);
    }
    l.grads.push_back(&gr.head_w);
    l.grads.push_back(&gr.head_b);
    return l;
}

ParamList collect(Critic& c, Critic::Grads& gr) {
    ParamList l;
    c.visit_params([&](const std::string& n, Tensor& t) {
        l.names.push_back(n);
        l.params.push_back(&t);
    });
    for (std::size_t i = 0; i < gr.trunk_w.size(); ++i) {
        l.grads.push_back(&gr.trunk_w[i]);
        l.grads.push_back(&gr.trunk_b[i]);
    }
    l.grads.push_back(&gr.fc_w);
    l.grads.push_back(&gr.fc_b);
    l.grads.push_back(&gr.agg_w);
    l.grads.push_back(&gr.agg_b);
    return l;
}

void check_finite(const ParamList& l) {
    for (Tensor* g : l.grads)
        for (double v : g->v)
            if (!std::isfinite(v)) throw NumericError("non-finite gradient");
}

std::vector<int> trunk_channels(const Trunk& t) {
    std::vector<int> ch;
    for (const auto& c : t.convs) ch.push_back(c.out_c);
    return ch;
}

void put_meta_channels(Checkpoint& ckpt, const std::string& key, const std::vector<int>& ch) {
    Tensor t({static_cast<int>(ch.size())});
    for (std::size_t i = 0; i < ch.size(); ++i) t[i] = ch[i];
    ckpt.blocks[key] = t;
}

std::vector<int> get_meta_channels(const Checkpoint& ckpt, const std::string& key) {
    const Tensor& t = ckpt.get(key);
    std::vector<int> ch(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) ch[i] = static_cast<int>(t[i]);
    return ch;
}

// Rescale one affine layer: weights by t, bias by the cumulative output
// scale. Returns the updated cumulative scale.
double rescale_layer(Tensor& w, Tensor& b, double c, double s_prev) {
    double wmax = 0.0;
    for (double v : w.v) wmax = std::max(wmax, std::abs(v));
    double t = (wmax > c) ? c / wmax : 1.0;
    double s = s_prev * t;
    double bmax = 0.0;
    for (double v : b.v) bmax = std::max(bmax, std::abs(v) * s);
    if (bmax > c) {
        double u = c / bmax;
        t *= u;
        s *= u;
    }
    for (double& v : w.v) v *= t;
    for (double& v : b.v) v *= s;
    return s;
}

}  // namespace

// ---------- config ----------

void TrainConfig::set(const std::string& key, const std::string& value) {
    auto d = [&] { return std::stod(value); };
    auto i = [&] { return std::stoi(value); };
    if (key == "lr_g") lr_g = d();
    else if (key == "lr_d") lr_d = d();
    else if (key == "batch") batch = i();
    else if (key == "top_k") top_k = i();
    else if (key == "n_critic") n_critic = i();
    else if (key == "clip_c") clip_c = d();
    else if (key == "lambda_gan") lambda_gan = d();
    else if (key == "lambda_reg1") lambda_reg1 = d();
    else if (key == "lambda_reg2") lambda_reg2 = d();
    else if (key == "rho") rho = d();
    else if (key == "eps") eps = d();
    else if (key == "seed") seed = std::stoull(value);
    else if (key == "max_steps") max_steps = i();
    else if (key == "checkpoint_every") checkpoint_every = i();
    else if (key == "head_kind") head_kind = value;
    else if (key == "tint_density") tint_density = d();
    else throw ConfigError("unknown config key: " + key);
}

TrainConfig TrainConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    TrainConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        try {
            cfg.set(key, value);
        } catch (const std::invalid_argument&) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": bad value for " + key);
        }
    }
    cfg.validate();
    return cfg;
}

void TrainConfig::validate() const {
    if (lr_g <= 0 || lr_d <= 0) throw ConfigError("learning rates must be positive");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (n_critic < 1) throw ConfigError("n_critic must be >= 1");
    if (clip_c <= 0) throw ConfigError("clip_c must be positive");
    if (lambda_gan < 0) throw ConfigError("lambda_gan must be >= 0");
    if (rho <= 0 || rho >= 1) throw ConfigError("rho must be in (0,1)");
    if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
    try {
        head_kind_from_name(head_kind);
    } catch (const std::exception&) {
        throw ConfigError("unknown head_kind: " + head_kind);
    }
}

std::string TrainConfig::to_text() const {
    std::ostringstream s;
    s << "lr_g=" << fmt(lr_g) << "\nlr_d=" << fmt(lr_d) << "\nbatch=" << batch
      << "\ntop_k=" << top_k << "\nn_critic=" << n_critic << "\nclip_c=" << fmt(clip_c)
      << "\nlambda_gan=" << fmt(lambda_gan) << "\nlambda_reg1=" << fmt(lambda_reg1)
      << "\nlambda_reg2=" << fmt(lambda_reg2) << "\nrho=" << fmt(rho)
      << "\neps=" << fmt(eps) << "\nseed=" << seed << "\nmax_steps=" << max_steps
      << "\ncheckpoint_every=" << checkpoint_every << "\nhead_kind=" << head_kind
      << "\ntint_density=" << fmt(tint_density) << "\n";
    return s.str();
}

// ---------- packing ----------

void pack_trunk(Checkpoint& ckpt, Trunk& trunk, const std::string& prefix) {
    ckpt.put_scalar(prefix + "meta/in_size", trunk.in_size);
    put_meta_channels(ckpt, prefix + "meta/channels", trunk_channels(trunk));
    trunk.visit_params("trunk", [&](const std::string& n, Tensor& t) {
        ckpt.blocks[prefix + n] = t;
    });
}

Trunk unpack_trunk(const Checkpoint& ckpt, const std::string& prefix) {
    int in_size = static_cast<int>(ckpt.scalar(prefix + "meta/in_size"));
    Trunk t = Trunk::make(in_size, get_meta_channels(ckpt, prefix + "meta/channels"));
    t.visit_params("trunk", [&](const std::string& n, Tensor& w) {
        const Tensor& src = ckpt.get(prefix + n);
        if (src.shape != w.shape) throw CheckpointError("shape mismatch in block " + n);
        w = src;
    });
    return t;
}

void pack_critic(Checkpoint& ckpt, Critic& critic, const std::string& prefix) {
    ckpt.put_scalar(prefix + "meta/in_size", critic.trunk.in_size);
    put_meta_channels(ckpt, prefix + "meta/channels", trunk_channels(critic.trunk));
    ckpt.put_scalar(prefix + "meta/score_gain", critic.score_gain);
    critic.visit_params([&](const std::string& n, Tensor& t) { ckpt.blocks[prefix + n] = t; });
}

Critic unpack_critic(const Checkpoint& ckpt, const std::string& prefix) {
    int in_size = static_cast<int>(ckpt.scalar(prefix + "meta/in_size"));
    Critic c = Critic::make(in_size, get_meta_channels(ckpt, prefix + "meta/channels"));
    c.score_gain = ckpt.scalar(prefix + "meta/score_gain");
    c.visit_params([&](const std::string& n, Tensor& t) {
        const Tensor& src = ckpt.get(prefix + n);
        if (src.shape != t.shape) throw CheckpointError("shape mismatch in block " + n);
        t = src;
    });
    return c;
}

void pack_generator(Checkpoint& ckpt, Generator& gen, const std::string& prefix) {
    ckpt.put_scalar(prefix + "meta/in_size", gen.trunk.in_size);
    put_meta_channels(ckpt, prefix + "meta/channels", trunk_channels(gen.trunk));
    ckpt.put_scalar(prefix + "meta/head_kind", static_cast<double>(static_cast<int>(gen.kind)));
    ckpt.put_scalar(prefix + "meta/top_k", gen.top_k);
    gen.visit_params([&](const std::string& n, Tensor& t) { ckpt.blocks[prefix + n] = t; });
}

Generator unpack_generator(const Checkpoint& ckpt, const std::string& prefix) {
    int in_size = static_cast<int>(ckpt.scalar(prefix + "meta/in_size"));
    auto kind = static_cast<HeadKind>(static_cast<int>(ckpt.scalar(prefix + "meta/head_kind")));
    int top_k = static_cast<int>(ckpt.scalar(prefix + "meta/top_k"));
    Generator g = Generator::make(kind, in_size, get_meta_channels(ckpt, prefix + "meta/channels"),
                                  top_k);
    g.visit_params([&](const std::string& n, Tensor& t) {
        const Tensor& src = ckpt.get(prefix + n);
        if (src.shape != t.shape) throw CheckpointError("shape mismatch in block " + n);
        t = src;
    });
    return g;
}

void pack_optimizer(Checkpoint& ckpt, const RmsProp& opt, const std::string& prefix) {
    for (const auto& [name, t] : opt.state) ckpt.blocks[prefix + name] = t;
}

void unpack_optimizer(const Checkpoint& ckpt, RmsProp& opt, const std::string& prefix) {
    opt.state.clear();
    for (const auto& [name, t] : ckpt.blocks)
        if (name.rfind(prefix, 0) == 0) opt.state[name.substr(prefix.size())] = t;
}

// ---------- dataset ----------

LabImage LoadedDataset::image(int idx) const {
    LabImage img(height, width);
    const auto& src = lab[idx];
    for (std::size_t i = 0; i < img.px.size(); ++i) img.px[i] = src[i];
    return img;
}

LoadedDataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    LoadedDataset d;
    d.dir = dir;
    d.manifest = load_manifest((fs::path(dir) / "manifest.tsv").string());
    d.lab.reserve(d.manifest.entries.size());
    for (const auto& e : d.manifest.entries) {
        RgbImage rgb = load_image((fs::path(dir) / e.path).string());
        LabImage lab = srgb_to_lab(rgb);
        d.height = lab.h;
        d.width = lab.w;
        std::vector<float> buf(lab.px.size());
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(lab.px[i]);
        d.lab.push_back(std::move(buf));
    }
    d.good = d.manifest.good_indices();
    d.bad = d.manifest.bad_indices();
    return d;
}

// ---------- pretraining ----------

PretrainResult pretrain_critic(const LoadedDataset& data, std::uint64_t seed, int steps,
                               double lr, int batch, double val_frac, std::ostream* log) {
    Rng rng(seed);
    Critic critic = Critic::make(data.height);
    critic.init(rng);

    // deterministic held-out split, per class
    std::vector<int> train_set, val_set;
    for (const std::vector<int>* pool : {&data.good, &data.bad}) {
        std::vector<int> idx = *pool;
        Rng srng(seed ^ 0x5eedf00dULL);
        for (std::size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1], idx[srng.uniform_int(0, static_cast<int>(i) - 1)]);
        std::size_t nval = static_cast<std::size_t>(std::ceil(val_frac * idx.size()));
        val_set.insert(val_set.end(), idx.begin(), idx.begin() + nval);
        train_set.insert(train_set.end(), idx.begin() + nval, idx.end());
    }

    PretrainResult res{std::move(critic), 0.0, {}};
    Critic::Grads grads;
    grads.init_like(res.critic);
    ParamList params = collect(res.critic, grads);
    RmsProp opt;
    opt.lr = lr;

    int steps_per_epoch = std::max(1, static_cast<int>(train_set.size()) / batch);
    double epoch_ce = 0.0;
    int epoch_n = 0;
    for (int step = 0; step < steps; ++step) {
        grads.zero();
        std::vector<std::array<double, 2>> logits;
        std::vector<int> labels;
        std::vector<Critic::Cache> caches(batch);
        for (int i = 0; i < batch; ++i) {
            int idx = train_set[rng.uniform_int(0, static_cast<int>(train_set.size()) - 1)];
            LabImage img = data.image(idx);
            logits.push_back(res.critic.logits(img, &caches[i]));
            labels.push_back(data.manifest.entries[idx].label == "good" ? 0 : 1);
        }
        double ce = loss_pretrain_ce(logits, labels);
        if (!std::isfinite(ce)) throw NumericError("non-finite pretraining loss");
        epoch_ce += ce;
        ++epoch_n;
        for (int i = 0; i < batch; ++i) {
            auto g = ce_grad(logits[i], labels[i]);
            g[0] /= batch;
            g[1] /= batch;
            res.critic.backward_logits(caches[i], g, grads);
        }
        check_finite(params);
        for (std::size_t p = 0; p < params.params.size(); ++p)
            opt.step(params.names[p], *params.params[p], *params.grads[p]);
        if ((step + 1) % steps_per_epoch == 0 || step + 1 == steps) {
            res.epoch_train_ce.push_back(epoch_ce / epoch_n);
            if (log) *log << "epoch " << res.epoch_train_ce.size() << "\tce="
                          << fmt(res.epoch_train_ce.back()) << "\n";
            epoch_ce = 0.0;
            epoch_n = 0;
        }
    }

    // balanced accuracy on the held-out split
    double correct[2] = {0, 0}, total[2] = {0, 0};
    for (int idx : val_set) {
        auto l = res.critic.logits(data.image(idx));
        int pred = l[0] >= l[1] ? 0 : 1;
        int truth = data.manifest.entries[idx].label == "good" ? 0 : 1;
        total[truth] += 1;
        if (pred == truth) correct[truth] += 1;
    }
    res.balanced_accuracy =
        0.5 * (correct[0] / std::max(1.0, total[0]) + correct[1] / std::max(1.0, total[1]));
    if (log) *log << "val_balanced_accuracy=" << fmt(res.balanced_accuracy) << "\n";
    return res;
}

// ---------- adversarial phase ----------

void rescale_critic_into_clip_box(Critic& critic, double c) {
    double s = 1.0;
    for (auto& conv : critic.trunk.convs) s = rescale_layer(conv.w, conv.b, c, s);
    // the raw-input mean columns of fc bypass the trunk, so they do not carry
    // the cumulative trunk scale; fold it in to make the layer homogeneous
    int W = critic.fc_w.shape[1];
    for (int k = 0; k < 2; ++k)
        for (int ch = W - 6; ch < W; ++ch)
            critic.fc_w.v[static_cast<std::size_t>(k) * W + ch] *= s;
    s = rescale_layer(critic.fc_w, critic.fc_b, c, s);
    s = rescale_layer(critic.agg_w, critic.agg_b, c, s);
    if (s > 0.0) critic.score_gain /= s;
}

void clip_critic(Critic& critic, double c) {
    critic.visit_params([&](const std::string&, Tensor& t) { clip_tensor(t, c); });
}

LabImage apply_operator(const SquashedTheta& theta, const LabImage& img,
                        const std::array<TintFilter, 3>& filters) {
    switch (theta.kind) {
        case HeadKind::Piecewise:
            return apply_piecewise(img, theta.curve);
        case HeadKind::Filter:
            return apply_filter_bank(img, theta.weights, filters);
        case HeadKind::Crop:
            return bilinear_sample(img, make_grid(theta.rect, img.h, img.w, img.h, img.w));
    }
    throw std::invalid_argument("unknown operator kind");
}

std::vector<double> operator_vjp_theta(const SquashedTheta& theta, const LabImage& img,
                                       const std::vector<double>& upstream,
                                       const std::array<TintFilter, 3>& filters) {
    std::vector<double> scratch_img;
    switch (theta.kind) {
        case HeadKind::Piecewise: {
            std::array<double, 6> gp;
            vjp_piecewise(img, theta.curve, upstream, scratch_img, gp);
            // vjp order is knee,cut,...; squash raw order is cut,knee,...
            return {gp[1], gp[0], gp[2], gp[3], gp[4], gp[5]};
        }
        case HeadKind::Filter: {
            std::array<double, 4> gw;
            vjp_filter_bank(img, theta.weights, filters, upstream, scratch_img, gw);
            return {gw[0], gw[1], gw[2], gw[3]};
        }
        case HeadKind::Crop: {
            std::array<double, 4> gr;
            vjp_crop(img, theta.rect, img.h, img.w, upstream, scratch_img, gr);
            return {gr[0], gr[1], gr[2], gr[3]};
        }
    }
    throw std::invalid_argument("unknown operator kind");
}

Checkpoint make_train_checkpoint(const TrainConfig& cfg, TrainOutput& out, std::uint64_t step) {
    Checkpoint ckpt;
    ckpt.step = step;
    ckpt.rng_state = out.rng_state;
    ckpt.config = cfg.to_text() + "resolved_lambda_reg1=" + fmt(out.lambda_reg1) +
                  "\nresolved_lambda_reg2=" + fmt(out.lambda_reg2) + "\n";
    pack_generator(ckpt, out.gen);
    pack_critic(ckpt, out.critic);
    pack_trunk(ckpt, out.fx_trunk, "fx/");
    ckpt.put_scalar("meta/lambda_reg1", out.lambda_reg1);
    ckpt.put_scalar("meta/lambda_reg2", out.lambda_reg2);
    return ckpt;
}

TrainOutput train_adversarial(const TrainConfig& cfg, LoadedDataset& data,
                              const Critic& pretrained, std::ostream& metrics,
                              const std::string& checkpoint_path, const TrainProbe& probe) {
    cfg.validate();
    HeadKind kind = head_kind_from_name(cfg.head_kind);
    Rng rng(cfg.seed);

    TrainOutput out;
    out.fx_trunk = pretrained.trunk;  // frozen copy at pretrained quality
    FeatureExtractor fx{out.fx_trunk};

    // k-NN pairing in the frozen feature space
    {
        std::vector<std::vector<double>> feats;
        feats.reserve(data.manifest.entries.size());
        for (std::size_t i = 0; i < data.manifest.entries.size(); ++i)
            feats.push_back(fx.features(data.image(static_cast<int>(i))));
        pair_manifest(data.manifest, feats, 5);
    }

    const auto filters = default_tint_filters(cfg.tint_density);
    out.gen = Generator::make(kind, data.height, {16, 32, 64, 128}, cfg.top_k);
    out.gen.init(rng);
    out.critic = pretrained;
    rescale_critic_into_clip_box(out.critic, cfg.clip_c);

    Generator::Grads ggrads;
    ggrads.init_like(out.gen);
    ParamList gparams = collect(out.gen, ggrads);
    Critic::Grads cgrads, scratch;
    cgrads.init_like(out.critic);
    scratch.init_like(out.critic);
    ParamList cparams = collect(out.critic, cgrads);

    RmsProp opt_g, opt_d;
    opt_g.lr = cfg.lr_g;
    opt_g.rho = cfg.rho;
    opt_g.eps = cfg.eps;
    opt_d.lr = cfg.lr_d;
    opt_d.rho = cfg.rho;
    opt_d.eps = cfg.eps;

    double lam1 = cfg.lambda_reg1, lam2 = cfg.lambda_reg2;
    bool lambdas_resolved = lam1 >= 0.0 && lam2 >= 0.0;

    metrics << "# step\tL_D\tL_G\tL_gan\tL_reg1\tL_reg2\tmean_score_good\tmean_score_out\n";

    auto sample_bad = [&] { return data.bad[rng.uniform_int(0, static_cast<int>(data.bad.size()) - 1)]; };

    const int n = cfg.batch;
    for (int step = 1; step <= cfg.max_steps; ++step) {
        // ---- critic iterations ----
        double last_ld = 0.0, mean_good = 0.0, mean_out = 0.0;
        for (int it = 0; it < cfg.n_critic; ++it) {
            cgrads.zero();
            std::vector<double> s_good, s_out;
            for (int i = 0; i < n; ++i) {
                int bi = sample_bad();
                LabImage bad_img = data.image(bi);
                SquashedTheta theta = out.gen.forward(bad_img);
                LabImage enhanced = apply_operator(theta, bad_img, filters);
                Critic::Cache cache;
                s_out.push_back(out.critic.score(enhanced, &cache));
                out.critic.backward_score(cache, -1.0 / n, cgrads);
                const auto& pairs = data.manifest.entries[bi].pairs;
                int gi = pairs[rng.uniform_int(0, static_cast<int>(pairs.size()) - 1)];
                LabImage good_img = data.image(gi);
                Critic::Cache gcache;
                s_good.push_back(out.critic.score(good_img, &gcache));
                out.critic.backward_score(gcache, 1.0 / n, cgrads);
            }
            last_ld = loss_critic(s_good, s_out);
            mean_good = loss_gan(s_good);
            mean_out = loss_gan(s_out);
            if (!std::isfinite(last_ld)) {
                metrics << "# non-finite critic loss at step " << step << "\n";
                throw NumericError("non-finite critic loss at step " + std::to_string(step));
            }
            check_finite(cparams);
            for (std::size_t p = 0; p < cparams.params.size(); ++p)
                opt_d.step(cparams.names[p], *cparams.params[p], *cparams.grads[p]);
            clip_critic(out.critic, cfg.clip_c);
        }

        // ---- generator step ----
        // resolve the balancing weights on the first batch, then freeze
        if (!lambdas_resolved) {
            double lg = 0.0, l1 = 0.0, l2 = 0.0;
            for (int i = 0; i < 8; ++i) {
                int bi = data.bad[i % data.bad.size()];
                LabImage img = data.image(bi);
                SquashedTheta theta = out.gen.forward(img);
                LabImage enhanced = apply_operator(theta, img, filters);
                double so = out.critic.score(enhanced);
                double si = out.critic.score(img);
                lg += so / 8.0;
                l1 += loss_reg1(fx.features(enhanced), fx.features(img)) / 8.0;
                l2 += loss_reg2(so, si) / 8.0;
            }
            double target = std::abs(cfg.lambda_gan * lg);
            if (target <= 0.0) target = 1.0;
            // near-zero initial losses would otherwise blow the weight up
            auto balance = [&](double l, double frac) {
                return frac * target / std::max(l, 1e-3 * target);
            };
            // the regularizers anchor the output near the input; scaling them
            // to a fraction of the adversarial term keeps identity from being
            // a local optimum while still bounding content drift
            if (lam1 < 0.0) lam1 = balance(l1, 0.1);
            if (lam2 < 0.0) lam2 = balance(l2, 0.5);
            lambdas_resolved = true;
            metrics << "# lambda_gan=" << fmt(cfg.lambda_gan) << "\tlambda_reg1=" << fmt(lam1)
                    << "\tlambda_reg2=" << fmt(lam2) << "\n";
        }

        ggrads.zero();
        double L_gan = 0.0, L_reg1 = 0.0, L_reg2 = 0.0;
        std::vector<int> batch_ids;
        for (int i = 0; i < n; ++i) {
            int bi = sample_bad();
            batch_ids.push_back(bi);
            LabImage img = data.image(bi);
            Generator::Cache gcache;
            SquashedTheta theta = out.gen.forward(img, &gcache);
            LabImage enhanced = apply_operator(theta, img, filters);

            Critic::Cache c_out;
            double s_out = out.critic.score(enhanced, &c_out);
            double s_in = out.critic.score(img);
            Trunk::Cache fo_cache;
            std::vector<double> f_out = fx.features(enhanced, &fo_cache);
            std::vector<double> f_in = fx.features(img);

            L_gan += s_out / n;
            L_reg1 += loss_reg1(f_out, f_in) / n;
            L_reg2 += loss_reg2(s_out, s_in) / n;

            double up_score = cfg.lambda_gan / n + lam2 / n * loss_reg2_grad(s_out, s_in);
            scratch.zero();
            std::vector<double> g_px = out.critic.backward_score(c_out, up_score, scratch);
            std::vector<double> dfeat = loss_reg1_grad(f_out, f_in);
            for (double& v : dfeat) v *= lam1 / n;
            std::vector<double> g_px2 = fx.backward(fo_cache, dfeat);
            for (std::size_t j = 0; j < g_px.size(); ++j) g_px[j] += g_px2[j];

            std::vector<double> dtheta = operator_vjp_theta(theta, img, g_px, filters);
            out.gen.backward(gcache, dtheta, ggrads);
        }
        double L_G = cfg.lambda_gan * L_gan + lam1 * L_reg1 + lam2 * L_reg2;
        if (!std::isfinite(L_G)) {
            metrics << "# non-finite generator loss at step " << step << "; batch:";
            for (int id : batch_ids) metrics << ' ' << id;
            metrics << "\n";
            throw NumericError("non-finite generator loss at step " + std::to_string(step));
        }
        check_finite(gparams);
        for (std::size_t p = 0; p < gparams.params.size(); ++p)
            opt_g.step(gparams.names[p], *gparams.params[p], *gparams.grads[p]);

        metrics << step << '\t' << fmt(last_ld) << '\t' << fmt(L_G) << '\t' << fmt(L_gan)
                << '\t' << fmt(L_reg1) << '\t' << fmt(L_reg2) << '\t' << fmt(mean_good)
                << '\t' << fmt(mean_out) << "\n";

        out.lambda_reg1 = lam1;
        out.lambda_reg2 = lam2;
        out.rng_state = rng.state();
        if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
            if (!checkpoint_path.empty()) {
                Checkpoint ckpt = make_train_checkpoint(cfg, out, step);
                save_checkpoint(checkpoint_path, ckpt);
            }
            if (probe) probe(step, out.gen, out.critic);
        }
    }
    out.rng_state = rng.state();
    if (!checkpoint_path.empty()) {
        Checkpoint ckpt = make_train_checkpoint(cfg, out, cfg.max_steps);
        save_checkpoint(checkpoint_path, ckpt);
    }
    return out;
}

}  // namespace enh
