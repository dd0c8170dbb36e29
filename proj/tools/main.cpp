// Command line front end: dataset generation, critic pretraining, the
// adversarial phase, single-image application, evaluation, and the
// finite-difference gradient checker.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.

#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "enh/colorspace.hpp"
#include "enh/data.hpp"
#include "enh/eval.hpp"
#include "enh/imageio.hpp"
#include "enh/train.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

// Predict parameters at the network's native resolution, apply them at the
// input's own resolution (the parameters are resolution independent).
enh::SquashedTheta predict(const enh::Generator& gen, const enh::LabImage& img) {
    if (img.h == gen.trunk.in_size && img.w == gen.trunk.in_size) return gen.forward(img);
    enh::CropRect full{0.0, 0.0, 1.0, 1.0};
    enh::LabImage small = enh::bilinear_sample(
        img, enh::make_grid(full, gen.trunk.in_size, gen.trunk.in_size, img.h, img.w));
    return gen.forward(small);
}

void dump_theta(const enh::SquashedTheta& th) {
    using enh::HeadKind;
    std::cout << "kind=" << enh::head_kind_name(th.kind) << "\n";
    switch (th.kind) {
        case HeadKind::Piecewise:
            std::cout << "cut=" << fmt(th.curve.cut) << "\nknee=" << fmt(th.curve.knee)
                      << "\nshadow_gamma=" << fmt(th.curve.shadow_gamma)
                      << "\nhighlight_gamma=" << fmt(th.curve.highlight_gamma)
                      << "\nchroma_cut_a=" << fmt(th.curve.chroma_cut_a)
                      << "\nchroma_cut_b=" << fmt(th.curve.chroma_cut_b) << "\n";
            break;
        case HeadKind::Filter:
            for (int i = 0; i < 4; ++i)
                std::cout << "w" << i << "=" << fmt(th.weights.w[i]) << "\n";
            break;
        case HeadKind::Crop:
            std::cout << "x=" << fmt(th.rect.x) << "\ny=" << fmt(th.rect.y)
                      << "\nw=" << fmt(th.rect.w) << "\nh=" << fmt(th.rect.h) << "\n";
            break;
    }
}

int run(int argc, char** argv) {
    CLI::App app{"weakly supervised image enhancement toolkit"};
    app.require_subcommand(1);

    // make-dataset
    auto* mk = app.add_subcommand("make-dataset", "generate a synthetic corpus");
    std::string mk_out, mk_kind = "color";
    int mk_good = 200, mk_bad = 200;
    std::uint64_t mk_seed = 1;
    mk->add_option("--out", mk_out, "output directory")->required();
    mk->add_option("--kind", mk_kind, "color | tint | crop");
    mk->add_option("--n-good", mk_good);
    mk->add_option("--n-bad", mk_bad);
    mk->add_option("--seed", mk_seed);

    // pretrain-critic
    auto* pre = app.add_subcommand("pretrain-critic", "train the critic as a classifier");
    std::string pre_data, pre_out, pre_log;
    int pre_steps = 400, pre_batch = 16;
    double pre_lr = 1e-3;
    std::uint64_t pre_seed = 1;
    pre->add_option("--data", pre_data)->required();
    pre->add_option("--out", pre_out, "output checkpoint")->required();
    pre->add_option("--steps", pre_steps);
    pre->add_option("--batch", pre_batch);
    pre->add_option("--lr", pre_lr);
    pre->add_option("--seed", pre_seed);
    pre->add_option("--log", pre_log, "progress log file (default stdout)");

    // train
    auto* tr = app.add_subcommand("train", "adversarial phase");
    std::string tr_data, tr_critic, tr_out, tr_config, tr_metrics;
    std::vector<std::string> tr_sets;
    tr->add_option("--data", tr_data)->required();
    tr->add_option("--critic", tr_critic, "pretrained critic checkpoint")->required();
    tr->add_option("--out", tr_out, "output checkpoint")->required();
    std::string tr_head;
    tr->add_option("--head", tr_head, "piecewise | filter | crop");
    tr->add_option("--config", tr_config, "key=value config file");
    tr->add_option("--metrics", tr_metrics, "metrics file (default stdout)");
    tr->add_option("--set", tr_sets, "config override key=value (repeatable)");

    // enhance
    auto* en = app.add_subcommand("enhance", "apply a trained operator to one image");
    std::string en_ckpt, en_in, en_out;
    bool en_dump = false;
    en->add_option("--ckpt,--checkpoint", en_ckpt)->required();
    en->add_option("--in", en_in)->required();
    en->add_option("--out", en_out)->required();
    en->add_flag("--dump-params", en_dump, "print the predicted parameters");

    // crop
    auto* cr = app.add_subcommand("crop", "apply a trained crop operator");
    std::string cr_ckpt, cr_in, cr_out;
    bool cr_emit = false;
    cr->add_option("--ckpt,--checkpoint", cr_ckpt)->required();
    cr->add_option("--in", cr_in)->required();
    cr->add_option("--out", cr_out)->required();
    cr->add_flag("--emit-box", cr_emit, "print the normalized crop box");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a trained operator on a corpus");
    std::string ev_ckpt, ev_data, ev_judge;
    ev->add_option("--ckpt,--checkpoint", ev_ckpt)->required();
    ev->add_option("--data", ev_data)->required();
    ev->add_option("--evaluator", ev_judge, "independent evaluator checkpoint (enhancement)");
    std::string ev_report;
    ev->add_option("--report", ev_report, "write the report to this file (default stdout)");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every gradient");
    std::uint64_t gc_seed = 1;
    int gc_trials = 100;
    gc->add_option("--seed", gc_seed);
    gc->add_option("--trials", gc_trials, "random trials per operator");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    if (*mk) {
        enh::DatasetKind kind = enh::dataset_kind_from_name(mk_kind);
        enh::DatasetManifest m = enh::build_dataset(kind, mk_good, mk_bad, mk_seed, mk_out);
        std::cout << "entries=" << m.entries.size() << "\n";
        return 0;
    }

    if (*pre) {
        enh::LoadedDataset data = enh::load_dataset(pre_data);
        std::ofstream logf;
        std::ostream* log = &std::cout;
        if (!pre_log.empty()) {
            logf.open(pre_log);
            log = &logf;
        }
        enh::PretrainResult res =
            enh::pretrain_critic(data, pre_seed, pre_steps, pre_lr, pre_batch, 0.1, log);
        enh::Checkpoint ckpt;
        ckpt.step = pre_steps;
        ckpt.rng_state = pre_seed;
        ckpt.config = "phase=pretrain\nsteps=" + std::to_string(pre_steps) +
                      "\nlr=" + fmt(pre_lr) + "\nbatch=" + std::to_string(pre_batch) +
                      "\nseed=" + std::to_string(pre_seed) + "\n";
        enh::pack_critic(ckpt, res.critic);
        ckpt.put_scalar("meta/balanced_accuracy", res.balanced_accuracy);
        enh::save_checkpoint(pre_out, ckpt);
        std::cout << "balanced_accuracy=" << fmt(res.balanced_accuracy) << "\n";
        return 0;
    }

    if (*tr) {
        enh::TrainConfig cfg;
        if (!tr_config.empty()) cfg = enh::TrainConfig::from_file(tr_config);
        if (!tr_head.empty()) cfg.head_kind = tr_head;
        for (const std::string& kv : tr_sets) {
            auto eq = kv.find('=');
            if (eq == std::string::npos) throw enh::ConfigError("--set expects key=value");
            cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        cfg.validate();
        enh::LoadedDataset data = enh::load_dataset(tr_data);
        enh::Critic pretrained = enh::unpack_critic(enh::load_checkpoint(tr_critic));
        std::ofstream mf;
        std::ostream* metrics = &std::cout;
        if (!tr_metrics.empty()) {
            mf.open(tr_metrics);
            metrics = &mf;
        }
        enh::train_adversarial(cfg, data, pretrained, *metrics, tr_out);
        return 0;
    }

    if (*en || *cr) {
        const std::string& ckpt_path = *en ? en_ckpt : cr_ckpt;
        const std::string& in_path = *en ? en_in : cr_in;
        const std::string& out_path = *en ? en_out : cr_out;
        enh::Checkpoint ckpt = enh::load_checkpoint(ckpt_path);
        enh::Generator gen = enh::unpack_generator(ckpt);
        if (*cr && gen.kind != enh::HeadKind::Crop) {
            std::cerr << "crop: checkpoint holds a " << enh::head_kind_name(gen.kind)
                      << " operator\n";
            return kExitUsage;
        }
        enh::LabImage img = enh::srgb_to_lab(enh::load_image(in_path));
        enh::SquashedTheta theta = predict(gen, img);
        enh::LabImage out = enh::apply_operator(theta, img);
        enh::save_image(out_path, enh::lab_to_srgb(out));
        if (en_dump) dump_theta(theta);
        if (cr_emit)
            std::cout << fmt(theta.rect.x) << ' ' << fmt(theta.rect.y) << ' '
                      << fmt(theta.rect.x + theta.rect.w) << ' '
                      << fmt(theta.rect.y + theta.rect.h) << "\n";
        return 0;
    }

    if (*ev) {
        enh::Checkpoint ckpt = enh::load_checkpoint(ev_ckpt);
        enh::Generator gen = enh::unpack_generator(ckpt);
        enh::LoadedDataset data = enh::load_dataset(ev_data);
        std::ofstream rf;
        std::ostream* out = &std::cout;
        if (!ev_report.empty()) {
            rf.open(ev_report);
            out = &rf;
        }
        if (gen.kind == enh::HeadKind::Crop) {
            enh::CropEvalReport r = enh::eval_cropping(gen, data);
            *out << "n=" << r.n << "\nmean_iou=" << fmt(r.mean_iou)
                 << "\nmean_bde=" << fmt(r.mean_bde) << "\n";
            return 0;
        }
        if (ev_judge.empty()) {
            std::cerr << "eval: --evaluator is required for enhancement operators\n";
            return kExitUsage;
        }
        enh::Critic critic = enh::unpack_critic(ckpt);
        enh::Critic judge = enh::unpack_critic(enh::load_checkpoint(ev_judge));
        enh::EnhanceEvalReport r = enh::eval_enhancement(gen, critic, judge, data);
        *out << "n=" << r.n << "\nmean_score_before=" << fmt(r.mean_score_before)
             << "\nmean_score_after=" << fmt(r.mean_score_after)
             << "\nimproved_fraction=" << fmt(r.improved_fraction)
             << "\nmean_prob_before=" << fmt(r.mean_prob_before)
             << "\nmean_prob_after=" << fmt(r.mean_prob_after)
             << "\nvote_before=" << fmt(r.vote_before) << "\nvote_after=" << fmt(r.vote_after)
             << "\nchroma_bias_before=" << fmt(r.chroma_bias_before)
             << "\nchroma_bias_after=" << fmt(r.chroma_bias_after) << "\n";
        if (r.n_ref > 0)
            *out << "n_ref=" << r.n_ref << "\nmean_rmse_before=" << fmt(r.mean_rmse_before)
                 << "\nmean_rmse_after=" << fmt(r.mean_rmse_after) << "\n";
        return 0;
    }

    if (*gc) {
        bool all_pass = true;
        for (const auto& r : enh::gradcheck_all(gc_seed, gc_trials)) {
            std::cout << r.name << "\t" << fmt(r.max_rel_err) << "\t"
                      << (r.pass ? "pass" : "FAIL") << "\n";
            all_pass = all_pass && r.pass;
        }
        bool self = enh::gradcheck_detects_corruption(gc_seed);
        std::cout << "self-test/corruption-detected\t" << (self ? "pass" : "FAIL") << "\n";
        return (all_pass && self) ? 0 : kExitNumeric;
    }

    return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const enh::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const enh::ConfigError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const enh::IoError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const enh::CheckpointError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    }
}
