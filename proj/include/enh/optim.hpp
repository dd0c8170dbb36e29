#pragma once

#include <map>
#include <string>

#include "enh/tensor.hpp"

namespace enh {

// v' = rho*v + (1-rho)*g^2 ; param' = param - lr * g / (sqrt(v') + eps)
void rmsprop_step(Tensor& param, const Tensor& grad, Tensor& v,
                  double lr, double rho, double eps);

// Per-tensor moving averages, keyed by parameter name.
struct RmsProp {
    double lr = 1e-3;
    double rho = 0.9;
    double eps = 1e-8;
    std::map<std::string, Tensor> state;

    void step(const std::string& name, Tensor& param, const Tensor& grad) {
        Tensor& v = state[name];
        if (v.v.empty()) v = Tensor(param.shape);
        rmsprop_step(param, grad, v, lr, rho, eps);
    }
};

// Clamp every element of a tensor to [-c, c].
void clip_tensor(Tensor& t, double c);

}  // namespace enh
