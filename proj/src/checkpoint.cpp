#include "matchgan/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include <torch/torch.h>

#include "matchgan/errors.hpp"

namespace matchgan {

namespace {

constexpr char kMagic[8] = {'M', 'G', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void put(std::ostream& out, T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    unsigned char b[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(b), sizeof(T))) throw IoError("truncated checkpoint");
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

void put_string(std::ostream& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
    const auto n = get<std::uint32_t>(in);
    std::string s(n, '\0');
    if (n && !in.read(s.data(), n)) throw IoError("truncated checkpoint");
    return s;
}

std::uint8_t dtype_code(const torch::Tensor& t) {
    switch (t.scalar_type()) {
        case torch::kFloat32: return 0;
        case torch::kFloat64: return 1;
        case torch::kInt64: return 2;
        default: throw IoError("unsupported tensor dtype in checkpoint");
    }
}

torch::ScalarType dtype_of(std::uint8_t code) {
    switch (code) {
        case 0: return torch::kFloat32;
        case 1: return torch::kFloat64;
        case 2: return torch::kInt64;
        default: throw IoError("unknown dtype code in checkpoint");
    }
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot write checkpoint " + path.string());
        out.write(kMagic, 8);
        put_string(out, serialize(ckpt.architecture));
        put_string(out, ckpt.metadata);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
        for (const auto& [name, tensor] : ckpt.tensors) {
            const auto t = tensor.detach().to(torch::kCPU).contiguous();
            put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            put<std::uint8_t>(out, dtype_code(t));
            put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dim()));
            for (auto d : t.sizes()) put<std::int64_t>(out, d);
            static_assert(std::endian::native == std::endian::little, "raw tensor payload assumes little-endian host");
            out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
        }
        if (!out) throw IoError("failed writing checkpoint " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw IoError("not a checkpoint: " + path.string());
    Checkpoint ckpt;
    ckpt.architecture = parse_architecture(get_string(in));
    ckpt.metadata = get_string(in);
    const auto count = get<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = get<std::uint16_t>(in);
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw IoError("truncated checkpoint");
        const auto dtype = dtype_of(get<std::uint8_t>(in));
        const auto rank = get<std::uint8_t>(in);
        std::vector<std::int64_t> dims(rank);
        for (auto& d : dims) d = get<std::int64_t>(in);
        auto t = torch::empty(dims, dtype);
        if (t.nbytes() && !in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes())))
            throw IoError("truncated checkpoint");
        ckpt.tensors.emplace(std::move(name), std::move(t));
    }
    return ckpt;
}

void collect_state(const torch::nn::Module& module, const std::string& prefix, Checkpoint& out) {
    for (const auto& item : module.named_parameters(true)) out.tensors[prefix + "." + item.key()] = item.value().detach().clone();
    for (const auto& item : module.named_buffers(true)) out.tensors[prefix + "." + item.key()] = item.value().detach().clone();
}

void restore_state(torch::nn::Module& module, const std::string& prefix, const Checkpoint& ckpt) {
    torch::NoGradGuard guard;
    auto copy = [&](const std::string& key, torch::Tensor& target) {
        const auto it = ckpt.tensors.find(prefix + "." + key);
        if (it == ckpt.tensors.end()) throw IoError("checkpoint lacks " + prefix + "." + key);
        if (it->second.sizes() != target.sizes()) throw IoError("shape mismatch for " + prefix + "." + key);
        target.copy_(it->second);
    };
    for (auto& item : module.named_parameters(true)) copy(item.key(), item.value());
    for (auto& item : module.named_buffers(true)) copy(item.key(), item.value());
}

}  // namespace matchgan
