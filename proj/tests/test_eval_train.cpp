#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "enh/colorspace.hpp"
#include "enh/data.hpp"
#include "enh/eval.hpp"
#include "enh/train.hpp"

using namespace enh;
namespace fs = std::filesystem;

namespace {

fs::path tmpdir() {
    static fs::path dir = [] {
        fs::path p = fs::temp_directory_path() / "enh-test-train";
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

// rasterized oracle: count cells whose centers fall inside each box
double raster_iou(const BoxN& a, const BoxN& b, int n = 2000) {
    long ia = 0, ib = 0, inter = 0;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            double u = (x + 0.5) / n, v = (y + 0.5) / n;
            bool in_a = u >= a.x1 && u <= a.x2 && v >= a.y1 && v <= a.y2;
            bool in_b = u >= b.x1 && u <= b.x2 && v >= b.y1 && v <= b.y2;
            ia += in_a;
            ib += in_b;
            inter += in_a && in_b;
        }
    long uni = ia + ib - inter;
    return uni > 0 ? static_cast<double>(inter) / uni : 0.0;
}

LoadedDataset tiny_dataset(const std::string& name, int n_good, int n_bad,
                           std::uint64_t seed, DatasetKind kind = DatasetKind::Color) {
    fs::path dir = tmpdir() / name;
    if (!fs::exists(dir / "manifest.tsv")) build_dataset(kind, n_good, n_bad, seed, dir.string());
    return load_dataset(dir.string());
}

}  // namespace

TEST_CASE("iou closed forms and rasterized agreement") {
    BoxN a{0.0, 0.0, 0.5, 0.5};
    CHECK(iou(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    BoxN b{0.25, 0.25, 0.75, 0.75};
    CHECK(iou(a, b) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
    BoxN c{0.6, 0.6, 1.0, 1.0};
    CHECK(iou(a, c) == 0.0);

    Rng rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        BoxN p{rng.uniform(0, 0.4), rng.uniform(0, 0.4), rng.uniform(0.5, 1.0),
               rng.uniform(0.5, 1.0)};
        BoxN q{rng.uniform(0, 0.4), rng.uniform(0, 0.4), rng.uniform(0.5, 1.0),
               rng.uniform(0.5, 1.0)};
        CHECK(iou(p, q) == doctest::Approx(raster_iou(p, q)).epsilon(2e-3));
    }
}

TEST_CASE("bde is the mean edge displacement") {
    BoxN a{0.0, 0.0, 0.5, 0.5};
    CHECK(bde(a, a) == 0.0);
    BoxN b{0.1, 0.0, 0.5, 0.7};
    CHECK(bde(a, b) == doctest::Approx((0.1 + 0.0 + 0.0 + 0.2) / 4.0).epsilon(1e-12));

    // rasterized oracle: edge positions recovered from a fine mask
    Rng rng(5);
    const int n = 2000;
    for (int trial = 0; trial < 5; ++trial) {
        BoxN p{rng.uniform(0, 0.3), rng.uniform(0, 0.3), rng.uniform(0.6, 1.0),
               rng.uniform(0.6, 1.0)};
        BoxN q{rng.uniform(0, 0.3), rng.uniform(0, 0.3), rng.uniform(0.6, 1.0),
               rng.uniform(0.6, 1.0)};
        auto edges = [&](const BoxN& box, double out[4]) {
            int xlo = n, xhi = -1, ylo = n, yhi = -1;
            for (int i = 0; i < n; ++i) {
                double u = (i + 0.5) / n;
                if (u >= box.x1 && u <= box.x2) { xlo = std::min(xlo, i); xhi = i; }
                if (u >= box.y1 && u <= box.y2) { ylo = std::min(ylo, i); yhi = i; }
            }
            out[0] = static_cast<double>(xlo) / n;
            out[1] = static_cast<double>(ylo) / n;
            out[2] = static_cast<double>(xhi + 1) / n;
            out[3] = static_cast<double>(yhi + 1) / n;
        };
        double ep[4], eq[4];
        edges(p, ep);
        edges(q, eq);
        double want = (std::abs(ep[0] - eq[0]) + std::abs(ep[1] - eq[1]) +
                       std::abs(ep[2] - eq[2]) + std::abs(ep[3] - eq[3])) / 4.0;
        CHECK(std::abs(bde(p, q) - want) < 2e-3);
    }
}

TEST_CASE("lab rmse basics") {
    LabImage a(2, 2), b(2, 2);
    for (auto& v : a.px) v = 0.5;
    b = a;
    CHECK(lab_rmse(a, b) == 0.0);
    b.px[0] = 0.5 + 0.12;
    CHECK(lab_rmse(a, b) == doctest::Approx(0.12 / std::sqrt(12.0)).epsilon(1e-12));
}

TEST_CASE("train config text round trip and validation") {
    TrainConfig cfg;
    cfg.lr_g = 1.25e-4;
    cfg.batch = 8;
    cfg.n_critic = 3;
    cfg.lambda_reg1 = 0.5;
    cfg.seed = 987654321;
    cfg.head_kind = "filter";
    fs::path p = tmpdir() / "cfg.txt";
    {
        std::ofstream f(p);
        f << cfg.to_text();
    }
    TrainConfig back = TrainConfig::from_file(p.string());
    CHECK(back.lr_g == cfg.lr_g);
    CHECK(back.batch == 8);
    CHECK(back.n_critic == 3);
    CHECK(back.lambda_reg1 == 0.5);
    CHECK(back.seed == cfg.seed);
    CHECK(back.head_kind == "filter");
    CHECK(back.to_text() == cfg.to_text());

    TrainConfig t;
    CHECK_THROWS_AS(t.set("no_such_key", "1"), ConfigError);
    t.set("batch", "0");
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = TrainConfig{};
    t.set("head_kind", "sharpen");
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = TrainConfig{};
    t.set("clip_c", "-1");
    CHECK_THROWS_AS(t.validate(), ConfigError);
    CHECK_THROWS_AS(TrainConfig::from_file((tmpdir() / "nofile").string()), ConfigError);
}

TEST_CASE("pretraining drives the training loss down") {
    LoadedDataset data = tiny_dataset("pre2", 48, 48, 1);
    // ~12 epochs over the training split at batch 8
    PretrainResult r = pretrain_critic(data, 7, 132, 3e-4, 8);
    REQUIRE(r.epoch_train_ce.size() >= 10);
    // loose descent check on this tiny corpus: per-epoch means are noisy
    // here, so the strict 5% rule is asserted on the full-size run instead
    for (double ce : r.epoch_train_ce) {
        CHECK(std::isfinite(ce));
        CHECK(ce >= 0.0);
    }
    CHECK(r.epoch_train_ce[9] < r.epoch_train_ce[0] * 0.5);
    double tail = std::min(r.epoch_train_ce[8], r.epoch_train_ce[9]);
    CHECK(tail < r.epoch_train_ce[0]);
    CHECK(r.balanced_accuracy >= 0.0);
    CHECK(r.balanced_accuracy <= 1.0);
}

TEST_CASE("critic rescaling preserves scores while entering the clip box") {
    LoadedDataset data = tiny_dataset("pre", 24, 24, 1);
    PretrainResult r = pretrain_critic(data, 7, 30, 1e-3, 8);
    LabImage probe = data.image(0);
    double before = r.critic.score(probe);
    Critic boxed = r.critic;
    rescale_critic_into_clip_box(boxed, 0.01);
    bool inside = true;
    boxed.visit_params([&](const std::string&, Tensor& t) {
        for (double v : t.v)
            if (std::abs(v) > 0.01 + 1e-12) inside = false;
    });
    CHECK(inside);
    CHECK(boxed.score(probe) == doctest::Approx(before).epsilon(1e-9));
    // clipping after the rescale is then a no-op
    Critic clipped = boxed;
    clip_critic(clipped, 0.01);
    CHECK(clipped.score(probe) == doctest::Approx(boxed.score(probe)).epsilon(1e-12));
}

TEST_CASE("adversarial loop: logged losses decompose and runs are reproducible") {
    LoadedDataset data = tiny_dataset("adv", 16, 8, 2);
    PretrainResult pre = pretrain_critic(data, 3, 20, 1e-3, 8);
    TrainConfig cfg;
    cfg.max_steps = 4;
    cfg.batch = 4;
    cfg.n_critic = 2;
    cfg.seed = 5;
    cfg.lambda_reg1 = 0.05;
    cfg.lambda_reg2 = 0.5;

    std::ostringstream m1, m2;
    fs::path ck = tmpdir() / "adv.ckpt";
    TrainOutput out1 = train_adversarial(cfg, data, pre.critic, m1, ck.string());
    TrainOutput out2 = train_adversarial(cfg, data, pre.critic, m2);
    CHECK(m1.str() == m2.str());

    std::istringstream lines(m1.str());
    std::string line;
    int rows = 0;
    while (std::getline(lines, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream row(line);
        double step, ld, lg, lgan, lr1, lr2, sg, so;
        REQUIRE((row >> step >> ld >> lg >> lgan >> lr1 >> lr2 >> sg >> so));
        CHECK(std::isfinite(ld));
        double recomposed = cfg.lambda_gan * lgan + cfg.lambda_reg1 * lr1 +
                            cfg.lambda_reg2 * lr2;
        CHECK(lg == doctest::Approx(recomposed).epsilon(1e-9));
        CHECK(ld == doctest::Approx(sg - so).epsilon(1e-9));
        ++rows;
    }
    CHECK(rows == 4);

    // checkpoint restores a generator that predicts identically
    Checkpoint ckpt = load_checkpoint(ck.string());
    CHECK(ckpt.step == 4);
    Generator restored = unpack_generator(ckpt);
    LabImage probe = data.image(data.bad[0]);
    SquashedTheta a = out1.gen.forward(probe);
    SquashedTheta b = restored.forward(probe);
    // weights pass through 32-bit storage, so compare loosely
    CHECK(a.curve.knee == doctest::Approx(b.curve.knee).epsilon(1e-4));
    CHECK(a.curve.shadow_gamma == doctest::Approx(b.curve.shadow_gamma).epsilon(1e-4));

    // critic weights stayed inside the clip box throughout
    bool inside = true;
    out1.critic.visit_params([&](const std::string&, Tensor& t) {
        for (double v : t.v)
            if (std::abs(v) > cfg.clip_c + 1e-12) inside = false;
    });
    CHECK(inside);
}

TEST_CASE("lambda auto-balance produces positive weights matched to the gan term") {
    LoadedDataset data = tiny_dataset("adv", 16, 8, 2);
    PretrainResult pre = pretrain_critic(data, 3, 20, 1e-3, 8);
    TrainConfig cfg;
    cfg.max_steps = 1;
    cfg.batch = 4;
    cfg.n_critic = 1;
    cfg.seed = 6;  // lambda_reg1/reg2 left at -1: balance on the first batch
    std::ostringstream m;
    TrainOutput out = train_adversarial(cfg, data, pre.critic, m);
    CHECK(out.lambda_reg1 > 0.0);
    CHECK(out.lambda_reg2 > 0.0);
    CHECK(std::isfinite(out.lambda_reg1));
    CHECK(std::isfinite(out.lambda_reg2));
}

TEST_CASE("evaluation report is internally consistent") {
    LoadedDataset data = tiny_dataset("adv", 16, 8, 2);
    PretrainResult pre = pretrain_critic(data, 3, 20, 1e-3, 8);
    TrainConfig cfg;
    cfg.max_steps = 2;
    cfg.batch = 4;
    cfg.n_critic = 1;
    cfg.seed = 8;
    std::ostringstream m;
    TrainOutput out = train_adversarial(cfg, data, pre.critic, m);
    PretrainResult evaluator = pretrain_critic(data, 11, 20, 1e-3, 8);
    EnhanceEvalReport rep =
        eval_enhancement(out.gen, out.critic, evaluator.critic, data, default_tint_filters());
    CHECK(rep.n == static_cast<int>(data.bad.size()));
    CHECK(rep.n_ref == rep.n);  // color corpora keep a clean reference per bad image
    CHECK(rep.improved_fraction >= 0.0);
    CHECK(rep.improved_fraction <= 1.0);
    CHECK(rep.vote_before >= 0.0);
    CHECK(rep.vote_before <= 1.0);
    CHECK(rep.vote_after >= 0.0);
    CHECK(rep.vote_after <= 1.0);
    CHECK(rep.mean_rmse_before > 0.0);
    CHECK(std::isfinite(rep.mean_rmse_after));
}

TEST_CASE("degradations are approximately invertible by the curve family") {
    // The curve family cannot undo L^gamma exactly (its middle segment is
    // the identity), but a grid search should still recover most of the
    // damage: >= 40% rmse reduction and a small absolute residual.
    Rng rng(13);
    for (int trial = 0; trial < 3; ++trial) {
        RgbImage clean = generate_scene(4000 + trial);
        Degradation d;
        d.gamma_dark = rng.uniform(1.6, 2.2);
        d.chroma_scale = rng.uniform(0.4, 0.6);
        LabImage ref = srgb_to_lab(clean);
        LabImage degraded = srgb_to_lab(degrade(clean, d));
        double before = lab_rmse(degraded, ref);

        double gamma = (1.0 - d.chroma_scale) / 2.0;  // exact chroma inverse
        double best = before;
        for (double knee = 0.2; knee < 0.5; knee += 0.03)
            for (double sg = 1.2; sg < 3.2; sg += 0.2)
                for (double hg = 0.3; hg <= 0.9; hg += 0.1) {
                    CurveParams t;
                    t.cut = 0.0;
                    t.knee = knee;
                    t.shadow_gamma = sg;
                    t.highlight_gamma = hg;
                    t.chroma_cut_a = gamma;
                    t.chroma_cut_b = gamma;
                    REQUIRE(t.valid());
                    best = std::min(best, lab_rmse(apply_piecewise(degraded, t), ref));
                }
        CHECK(best < 0.08);
        CHECK(best < 0.6 * before);
    }
}

TEST_CASE("gradient checker flags a corrupted analytic gradient") {
    CHECK(gradcheck_detects_corruption(3));
}
