#include "enh/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <vector>

namespace enh {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

constexpr char kMagic[4] = {'E', 'N', 'H', 'C'};

struct File {
    std::FILE* f = nullptr;
    ~File() { if (f) std::fclose(f); }
};

void write_bytes(std::FILE* f, const void* p, std::size_t n, const std::string& path) {
    if (std::fwrite(p, 1, n, f) != n)
        throw CheckpointError("checkpoint write failed: " + path);
}

void read_bytes(std::FILE* f, void* p, std::size_t n, const std::string& path) {
    if (std::fread(p, 1, n, f) != n)
        throw CheckpointError("checkpoint truncated or unreadable: " + path);
}

template <typename T>
void write_pod(std::FILE* f, T v, const std::string& path) {
    write_bytes(f, &v, sizeof(T), path);
}

template <typename T>
T read_pod(std::FILE* f, const std::string& path) {
    T v;
    read_bytes(f, &v, sizeof(T), path);
    return v;
}

}  // namespace

const Tensor& Checkpoint::get(const std::string& name) const {
    auto it = blocks.find(name);
    if (it == blocks.end()) throw CheckpointError("checkpoint missing block: " + name);
    return it->second;
}

void Checkpoint::put_scalar(const std::string& name, double v) {
    Tensor t({1});
    t[0] = v;
    blocks[name] = t;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    File file;
    file.f = std::fopen(path.c_str(), "wb");
    if (!file.f) throw CheckpointError("cannot open for write: " + path);
    std::FILE* f = file.f;
    write_bytes(f, kMagic, 4, path);
    write_pod<std::uint32_t>(f, Checkpoint::kVersion, path);
    write_pod<std::uint64_t>(f, ckpt.step, path);
    write_pod<std::uint64_t>(f, ckpt.rng_state, path);
    write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(ckpt.config.size()), path);
    write_bytes(f, ckpt.config.data(), ckpt.config.size(), path);
    write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(ckpt.blocks.size()), path);
    for (const auto& [name, t] : ckpt.blocks) {
        write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(name.size()), path);
        write_bytes(f, name.data(), name.size(), path);
        write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(t.shape.size()), path);
        for (int d : t.shape) write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(d), path);
        write_pod<std::uint64_t>(f, t.size(), path);
        std::vector<float> buf(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) buf[i] = static_cast<float>(t[i]);
        write_bytes(f, buf.data(), buf.size() * sizeof(float), path);
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    File file;
    file.f = std::fopen(path.c_str(), "rb");
    if (!file.f) throw CheckpointError("cannot open checkpoint: " + path);
    std::FILE* f = file.f;
    char magic[4];
    read_bytes(f, magic, 4, path);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw CheckpointError("not a checkpoint file (bad magic): " + path);
    auto version = read_pod<std::uint32_t>(f, path);
    if (version != Checkpoint::kVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                              ": " + path);
    Checkpoint ckpt;
    ckpt.step = read_pod<std::uint64_t>(f, path);
    ckpt.rng_state = read_pod<std::uint64_t>(f, path);
    auto clen = read_pod<std::uint32_t>(f, path);
    ckpt.config.resize(clen);
    if (clen) read_bytes(f, ckpt.config.data(), clen, path);
    auto nblocks = read_pod<std::uint32_t>(f, path);
    for (std::uint32_t i = 0; i < nblocks; ++i) {
        auto nlen = read_pod<std::uint32_t>(f, path);
        std::string name(nlen, '\0');
        if (nlen) read_bytes(f, name.data(), nlen, path);
        auto ndims = read_pod<std::uint32_t>(f, path);
        std::vector<int> shape(ndims);
        for (auto& d : shape) d = static_cast<int>(read_pod<std::uint32_t>(f, path));
        auto count = read_pod<std::uint64_t>(f, path);
        Tensor t(shape);
        if (t.size() != count)
            throw CheckpointError("corrupt block '" + name + "' in " + path);
        std::vector<float> buf(count);
        read_bytes(f, buf.data(), count * sizeof(float), path);
        for (std::size_t j = 0; j < count; ++j) t[j] = buf[j];
        ckpt.blocks[name] = std::move(t);
    }
    return ckpt;
}

}  // namespace enh
