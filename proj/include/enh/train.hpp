#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "enh/checkpoint.hpp"
#include "enh/data.hpp"
#include "enh/net.hpp"
#include "enh/optim.hpp"

namespace enh {

// Non-finite loss or gradient; the CLI maps this to exit code 3.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    double lr_g = 5e-5;
    double lr_d = 5e-7;
    int batch = 16;          // desk-scale default; the reference preset is 64
    int top_k = 3;
    int n_critic = 5;
    double clip_c = 0.01;
    double lambda_gan = 1.0;
    double lambda_reg1 = -1.0;  // < 0: balance against lambda_gan*L_gan on the first batch
    double lambda_reg2 = -1.0;
    double rho = 0.9;
    double eps = 1e-8;
    std::uint64_t seed = 1;
    int max_steps = 300;
    int checkpoint_every = 0;   // 0 = final checkpoint only
    std::string head_kind = "piecewise";
    double tint_density = 0.6;  // blend density of the fixed tint filters

    // Plain-text key=value round trip; unknown keys are errors.
    static TrainConfig from_file(const std::string& path);
    void set(const std::string& key, const std::string& value);
    std::string to_text() const;
    void validate() const;
};

// ---- model <-> checkpoint packing ----

void pack_trunk(Checkpoint& ckpt, Trunk& trunk, const std::string& prefix);
Trunk unpack_trunk(const Checkpoint& ckpt, const std::string& prefix);

void pack_critic(Checkpoint& ckpt, Critic& critic, const std::string& prefix = "critic/");
Critic unpack_critic(const Checkpoint& ckpt, const std::string& prefix = "critic/");

void pack_generator(Checkpoint& ckpt, Generator& gen, const std::string& prefix = "gen/");
Generator unpack_generator(const Checkpoint& ckpt, const std::string& prefix = "gen/");

void pack_optimizer(Checkpoint& ckpt, const RmsProp& opt, const std::string& prefix);
void unpack_optimizer(const Checkpoint& ckpt, RmsProp& opt, const std::string& prefix);

// ---- dataset in memory ----

struct LoadedDataset {
    std::string dir;
    DatasetManifest manifest;
    std::vector<std::vector<float>> lab;  // normalized Lab per entry
    std::vector<int> good, bad;

    LabImage image(int idx) const;
    int height = 64, width = 64;
};

LoadedDataset load_dataset(const std::string& dir);

// ---- phases ----

struct PretrainResult {
    Critic critic;
    double balanced_accuracy = 0.0;       // held-out split
    std::vector<double> epoch_train_ce;   // mean CE per epoch
};

PretrainResult pretrain_critic(const LoadedDataset& data, std::uint64_t seed, int steps,
                               double lr, int batch, double val_frac = 0.1,
                               std::ostream* log = nullptr);

// Scales critic layers into [-c,c] preserving the score function up to a
// positive factor (ReLU positive homogeneity); the inverse factor is
// folded into the frozen score_gain so score magnitudes are unchanged.
void rescale_critic_into_clip_box(Critic& critic, double c);

// Clamp every learnable critic weight to [-c,c].
void clip_critic(Critic& critic, double c);

// Apply the squashed parameters to an input (crop keeps the input size).
LabImage apply_operator(const SquashedTheta& theta, const LabImage& img,
                        const std::array<TintFilter, 3>& filters = default_tint_filters());

// VJP of apply_operator w.r.t. theta; dtheta is packed in squash raw order.
std::vector<double> operator_vjp_theta(const SquashedTheta& theta, const LabImage& img,
                                       const std::vector<double>& upstream,
                                       const std::array<TintFilter, 3>& filters =
                                           default_tint_filters());

struct TrainOutput {
    Generator gen;
    Critic critic;
    Trunk fx_trunk;  // frozen feature extractor (pretrained critic trunk)
    double lambda_reg1 = 0.0;
    double lambda_reg2 = 0.0;
    std::uint64_t rng_state = 0;
};

// The alternating adversarial loop. metrics gets one tab-separated line
// per step: step, L_D, L_G, L_gan, L_reg1, L_reg2, mean_score_good,
// mean_score_out. checkpoint_path ("" = none) receives periodic and final
// checkpoints. probe, if set, is invoked every checkpoint_every steps with
// the current step and model state (useful for mid-run evaluation).
using TrainProbe = std::function<void(int step, const Generator&, const Critic&)>;
TrainOutput train_adversarial(const TrainConfig& cfg, LoadedDataset& data,
                              const Critic& pretrained, std::ostream& metrics,
                              const std::string& checkpoint_path = "",
                              const TrainProbe& probe = {});

Checkpoint make_train_checkpoint(const TrainConfig& cfg, TrainOutput& out, std::uint64_t step);

}  // namespace enh
