#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "enh/data.hpp"
#include "enh/train.hpp"

namespace enh {

// Intersection over union of two normalized boxes.
double iou(const BoxN& a, const BoxN& b);

// Boundary displacement error: mean absolute offset of the four edges.
double bde(const BoxN& a, const BoxN& b);

// Pixel RMSE over the three normalized Lab channels.
double lab_rmse(const LabImage& a, const LabImage& b);

// Enhancement quality over the bad pool of a dataset. The trained critic
// scores inputs and outputs (lower is better); an independently trained
// evaluator network provides good-class softmax probabilities and argmax
// votes. If the dataset carries ref/ originals, RMSE to the reference is
// reported before and after enhancement.
struct EnhanceEvalReport {
    int n = 0;
    double mean_score_before = 0.0;   // trained critic
    double mean_score_after = 0.0;
    double improved_fraction = 0.0;   // critic score went down
    double mean_prob_before = 0.0;    // evaluator good-class softmax
    double mean_prob_after = 0.0;
    double vote_before = 0.0;         // evaluator argmax == good
    double vote_after = 0.0;
    int n_ref = 0;                    // entries with a reference image
    double mean_rmse_before = 0.0;    // vs reference, 0 when n_ref == 0
    double mean_rmse_after = 0.0;
    // mean |mean(a,b) - 0.5| chroma bias, before/after (tint recovery)
    double chroma_bias_before = 0.0;
    double chroma_bias_after = 0.0;
};

EnhanceEvalReport eval_enhancement(const Generator& gen, const Critic& critic,
                                   const Critic& evaluator, const LoadedDataset& data,
                                   const std::array<TintFilter, 3>& filters =
                                       default_tint_filters());

// Crop accuracy over the bad pool entries that carry a ground-truth box.
struct CropEvalReport {
    int n = 0;
    double mean_iou = 0.0;
    double mean_bde = 0.0;
};

CropEvalReport eval_cropping(const Generator& gen, const LoadedDataset& data);

// ---- finite-difference gradient checking ----

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

inline constexpr double kGradCheckTol = 1e-4;
inline constexpr double kGradCheckStep = 1e-6;

// Runs every registered check (all hand-written VJPs plus three tiny
// end-to-end generator pipelines) against central finite differences,
// `trials` times each with fresh random draws.
std::vector<GradCheckResult> gradcheck_all(std::uint64_t seed, int trials = 100);

// Self-test: re-runs one check with a deliberately corrupted analytic
// gradient and reports whether the checker flags it.
bool gradcheck_detects_corruption(std::uint64_t seed);

}  // namespace enh
