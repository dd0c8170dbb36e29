#pragma once

#include <cassert>
#include <cstddef>
#include <numeric>
#include <vector>

namespace enh {

// Dense row-major tensor of doubles. Shapes are small (<= 4 dims);
// this is deliberately minimal, not a linear algebra library.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s)
        : shape(std::move(s)), v(count(shape), 0.0) {}

    static std::size_t count(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) n *= static_cast<std::size_t>(d);
        return n;
    }

    std::size_t size() const { return v.size(); }
    bool empty() const { return v.empty(); }
    void zero() { std::fill(v.begin(), v.end(), 0.0); }

    double& operator[](std::size_t i) { return v[i]; }
    double operator[](std::size_t i) const { return v[i]; }

    // (c,h,w) indexing for feature maps
    double& at3(int c, int y, int x) {
        return v[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    double at3(int c, int y, int x) const {
        return v[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

}  // namespace enh
