#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

#include "enh/tensor.hpp"

namespace enh {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Versioned binary container: magic, version, step counter, RNG state,
// config snapshot, then length-prefixed named blocks of little-endian
// 32-bit floats. Tensors are widened back to double on load, so
// save -> load -> save reproduces the file byte for byte.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::uint64_t step = 0;
    std::uint64_t rng_state = 0;
    std::string config;
    std::map<std::string, Tensor> blocks;

    bool has(const std::string& name) const { return blocks.count(name) != 0; }
    const Tensor& get(const std::string& name) const;
    double scalar(const std::string& name) const { return get(name)[0]; }
    void put_scalar(const std::string& name, double v);
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace enh
