#include "enh/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace enh {

double loss_gan(const std::vector<double>& scores_out) {
    if (scores_out.empty()) throw std::invalid_argument("loss_gan: empty batch");
    double s = 0.0;
    for (double x : scores_out) s += x;
    return s / scores_out.size();
}

double loss_reg1(const std::vector<double>& feat_out, const std::vector<double>& feat_in) {
    if (feat_out.size() != feat_in.size())
        throw std::invalid_argument("loss_reg1: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < feat_out.size(); ++i) {
        double d = feat_out[i] - feat_in[i];
        s += d * d;
    }
    return s;
}

std::vector<double> loss_reg1_grad(const std::vector<double>& feat_out,
                                   const std::vector<double>& feat_in) {
    if (feat_out.size() != feat_in.size())
        throw std::invalid_argument("loss_reg1: length mismatch");
    std::vector<double> g(feat_out.size());
    for (std::size_t i = 0; i < feat_out.size(); ++i) g[i] = 2.0 * (feat_out[i] - feat_in[i]);
    return g;
}

double loss_reg2(double s_out, double s_in) {
    if (s_out < s_in) return 0.0;
    double d = s_out - s_in;
    return d * d;
}

double loss_reg2_grad(double s_out, double s_in) {
    if (s_out < s_in) return 0.0;
    return 2.0 * (s_out - s_in);
}

double loss_critic(const std::vector<double>& scores_good,
                   const std::vector<double>& scores_out) {
    if (scores_good.empty() || scores_out.empty())
        throw std::invalid_argument("loss_critic: empty batch");
    double g = 0.0, o = 0.0;
    for (double x : scores_good) g += x;
    for (double x : scores_out) o += x;
    return g / scores_good.size() - o / scores_out.size();
}

double loss_pretrain_ce(const std::vector<std::array<double, 2>>& logits,
                        const std::vector<int>& labels) {
    if (logits.size() != labels.size() || logits.empty())
        throw std::invalid_argument("loss_pretrain_ce: bad batch");
    double s = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        int y = labels[i];
        if (y != 0 && y != 1) throw std::invalid_argument("label out of range");
        double a = logits[i][0], b = logits[i][1];
        double mx = a > b ? a : b;
        double lse = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
        s += lse - logits[i][y];
    }
    return s / logits.size();
}

std::array<double, 2> ce_grad(const std::array<double, 2>& logits, int label) {
    double mx = logits[0] > logits[1] ? logits[0] : logits[1];
    double e0 = std::exp(logits[0] - mx), e1 = std::exp(logits[1] - mx);
    double z = e0 + e1;
    std::array<double, 2> g{e0 / z, e1 / z};
    g[label] -= 1.0;
    return g;
}

}  // namespace enh
