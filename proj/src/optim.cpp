#include "enh/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace enh {

void rmsprop_step(Tensor& param, const Tensor& grad, Tensor& v,
                  double lr, double rho, double eps) {
    if (!param.same_shape(grad) || !param.same_shape(v))
        throw std::invalid_argument("rmsprop_step: shape mismatch");
    for (std::size_t i = 0; i < param.size(); ++i) {
        double g = grad[i];
        v[i] = rho * v[i] + (1.0 - rho) * g * g;
        param[i] -= lr * g / (std::sqrt(v[i]) + eps);
    }
}

void clip_tensor(Tensor& t, double c) {
    for (double& x : t.v) x = x < -c ? -c : (x > c ? c : x);
}

}  // namespace enh
