#pragma once

#include <array>
#include <vector>

namespace enh {

// Adversarial generator loss: mean critic score of the outputs; lower
// score means better aesthetics, so the generator minimizes this.
double loss_gan(const std::vector<double>& scores_out);

// Feature reconstruction term for one sample: squared Euclidean distance
// between frozen-extractor features. Gradient w.r.t. feat_out is
// 2*(feat_out - feat_in).
double loss_reg1(const std::vector<double>& feat_out, const std::vector<double>& feat_in);
std::vector<double> loss_reg1_grad(const std::vector<double>& feat_out,
                                   const std::vector<double>& feat_in);

// Hinge on the score ordering: 0 when the output already scores better
// than the input, squared gap otherwise. The boundary s_out == s_in falls
// in the squared branch (value and gradient both 0).
double loss_reg2(double s_out, double s_in);
double loss_reg2_grad(double s_out, double s_in);  // d/ds_out

// Critic loss: mean(scores_good) - mean(scores_out); the critic minimizes.
double loss_critic(const std::vector<double>& scores_good,
                   const std::vector<double>& scores_out);

// Mean softmax cross-entropy over a batch of 2-class logits.
// labels: 0 = good, 1 = bad.
double loss_pretrain_ce(const std::vector<std::array<double, 2>>& logits,
                        const std::vector<int>& labels);
// Gradient of the per-sample CE w.r.t. that sample's logits (softmax - onehot).
std::array<double, 2> ce_grad(const std::array<double, 2>& logits, int label);

}  // namespace enh
