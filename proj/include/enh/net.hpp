#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "enh/color_ops.hpp"
#include "enh/crop_op.hpp"
#include "enh/image.hpp"
#include "enh/rng.hpp"
#include "enh/tensor.hpp"

namespace enh {

// Callback used by the optimizer and the checkpoint writer to walk every
// learnable tensor of a network in a fixed order.
using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

struct Conv2D {
    int in_c = 0, out_c = 0, ksize = 3, stride = 1, pad = 0;
    Tensor w;  // (out_c, in_c, k, k)
    Tensor b;  // (out_c)

    Conv2D() = default;
    Conv2D(int ic, int oc, int k, int s, int p);

    void init_he(Rng& rng);
    int out_size(int in) const { return (in + 2 * pad - ksize) / stride + 1; }

    Tensor forward(const Tensor& x) const;
    // gin from gout; weight gradients are accumulated into gw/gb.
    Tensor backward(const Tensor& x, const Tensor& gout, Tensor& gw, Tensor& gb) const;
};

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x_pre, const Tensor& gout);

// Compact convolutional trunk: stride-2 3x3 convolutions with ReLU.
// Default 64x64x3 -> 4x4x128.
struct Trunk {
    int in_size = 64;
    std::vector<Conv2D> convs;

    static Trunk make(int in_size = 64, std::vector<int> channels = {16, 32, 64, 128});

    int out_spatial() const;
    int out_channels() const { return convs.empty() ? 3 : convs.back().out_c; }

    struct Cache {
        std::vector<Tensor> inputs;  // input of each conv (post-ReLU of previous)
        std::vector<Tensor> pre;     // pre-activation outputs
    };

    Tensor forward(const Tensor& img_chw, Cache* cache = nullptr) const;
    // Returns gradient w.r.t. the input image; conv gradients are
    // accumulated into grads (same layout as visit_params order).
    Tensor backward(const Cache& cache, const Tensor& gout,
                    std::vector<Tensor>& gw, std::vector<Tensor>& gb) const;

    void init(Rng& rng);
    void visit_params(const std::string& prefix, const ParamVisitor& fn);
};

// (3,h,w) tensor from an interleaved Lab image and back.
Tensor image_to_tensor(const LabImage& img);
LabImage tensor_to_image(const Tensor& t);
std::vector<double> tensor_to_interleaved(const Tensor& t);
Tensor interleaved_to_tensor(const std::vector<double>& px, int h, int w);

enum class HeadKind { Piecewise, Filter, Crop };

int head_param_count(HeadKind kind);  // 6, 4, 4
const char* head_kind_name(HeadKind kind);
HeadKind head_kind_from_name(const std::string& name);

// Output of the 1x1 parameter head: n_params candidate slices plus a
// probability map (softmax over the f*f cells of the last slice).
struct ParamMaps {
    int f = 0;
    int n_params = 0;
    Tensor raw;                // (n_params+1, f, f) raw conv output
    std::vector<double> prob;  // f*f, softmax of the last slice
};

ParamMaps head_forward(const Conv2D& head, const Tensor& features);

// Probability-weighted Top-K average of candidate cells. Ties broken by
// the smaller flat index. Returns the pooled raw parameter vector.
struct TopKResult {
    std::vector<double> pooled;    // n_params
    std::vector<int> selected;     // K flat cell indices, in selection order
    double prob_sum = 0.0;
};
TopKResult topk_pool(const ParamMaps& maps, int k);

// VJP of head_forward + topk_pool combined: from d(pooled) back to the raw
// head output tensor. Gradient reaches the selected cells' candidates and,
// through the softmax, every cell of the score slice.
Tensor topk_head_backward(const ParamMaps& maps, const TopKResult& sel,
                          const std::vector<double>& gpooled);

// Range squashing from the pooled raw vector to a valid parameter set.
struct SquashedTheta {
    HeadKind kind;
    CurveParams curve;       // Piecewise
    FilterWeights weights;   // Filter
    CropRect rect;           // Crop
};

SquashedTheta squash(const std::vector<double>& raw, HeadKind kind);
// d(raw) from d(theta); dtheta[i] is the loss gradient of the parameter
// produced from raw[i] (piecewise: cut,knee,sg,hg,ca,cb; filter: w0..w3;
// crop: x,y,w,h).
std::vector<double> squash_backward(const std::vector<double>& raw, HeadKind kind,
                                    const std::vector<double>& dtheta);

// Generator: trunk + 1x1 head + Top-K pooling + squashing.
struct Generator {
    Trunk trunk;
    Conv2D head;
    HeadKind kind = HeadKind::Piecewise;
    int top_k = 3;

    static Generator make(HeadKind kind, int in_size = 64,
                          std::vector<int> channels = {16, 32, 64, 128}, int top_k = 3);
    void init(Rng& rng);

    struct Cache {
        Trunk::Cache trunk_cache;
        Tensor features;
        ParamMaps maps;
        TopKResult sel;
        std::vector<double> pooled;
    };

    SquashedTheta forward(const LabImage& img, Cache* cache = nullptr) const;

    struct Grads {
        std::vector<Tensor> trunk_w, trunk_b;
        Tensor head_w, head_b;
        void init_like(const Generator& g);
        void zero();
    };

    // dtheta packed as in squash_backward.
    void backward(const Cache& cache, const std::vector<double>& dtheta, Grads& grads) const;

    void visit_params(const ParamVisitor& fn);
};

// Critic: trunk + global average pooling + 2-logit linear head, plus a
// 1-neuron aggregation head producing the scalar score. Lower score means
// better aesthetics. score_gain is a frozen normalization constant, not a
// learnable weight (see README on weight clipping).
// The 2-logit head reads the trunk's global average pool plus six global
// statistics of the raw Lab input: per-channel mean and per-channel mean
// squared deviation from neutral (0.5). Global color statistics (casts,
// exposure, desaturation) are first-class evidence, not something the trunk
// has to reconstruct from local patches — and the squared deviation makes a
// cast of any hue linearly separable (it grows with variance + cast^2).
struct Critic {
    Trunk trunk;
    Tensor fc_w;   // (2, C + 6)
    Tensor fc_b;   // (2)
    Tensor agg_w;  // (2)
    Tensor agg_b;  // (1)
    double score_gain = 1.0;

    static Critic make(int in_size = 64, std::vector<int> channels = {16, 32, 64, 128});
    void init(Rng& rng);

    struct Cache {
        Trunk::Cache trunk_cache;
        Tensor features;            // (C,f,f)
        std::vector<double> gap;    // C trunk means + 6 global input stats
        std::array<double, 2> logits{};
    };

    std::array<double, 2> logits(const LabImage& img, Cache* cache = nullptr) const;
    double score(const LabImage& img, Cache* cache = nullptr) const;

    struct Grads {
        std::vector<Tensor> trunk_w, trunk_b;
        Tensor fc_w, fc_b, agg_w, agg_b;
        void init_like(const Critic& c);
        void zero();
    };

    // Backprop from d(score); returns gradient w.r.t. the input image
    // (interleaved layout) and accumulates weight gradients.
    std::vector<double> backward_score(const Cache& cache, double upstream, Grads& grads) const;
    // Backprop from d(logits) (for pretraining); weight grads only.
    void backward_logits(const Cache& cache, const std::array<double, 2>& dlogits,
                         Grads& grads) const;
    // Shared tail: from d(logits) through fc and trunk; returns input grad.
    std::vector<double> backward_from_dlogits(const Cache& cache,
                                              const std::array<double, 2>& dlogits,
                                              Grads& grads) const;

    void visit_params(const ParamVisitor& fn);  // learnable weights only
};

// Frozen copy of a critic trunk used as the feature extractor for the
// feature reconstruction loss and for k-NN pairing.
struct FeatureExtractor {
    Trunk trunk;

    static FeatureExtractor from_critic(const Critic& c) { return FeatureExtractor{c.trunk}; }

    std::vector<double> features(const LabImage& img, Trunk::Cache* cache = nullptr) const;
    // Gradient w.r.t. input pixels of <dfeat, features(img)>.
    std::vector<double> backward(const Trunk::Cache& cache, const std::vector<double>& dfeat) const;
};

}  // namespace enh
