#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <torch/nn/module.h>
#include <torch/types.h>

#include "matchgan/networks.hpp"

namespace matchgan {

// Flat container of named arrays plus the architecture they belong to.
//
// Layout (all integers little-endian):
//   "MGCKPT01"
//   u32 length + architecture text (serialize(ArchitectureConfig))
//   u32 length + free-form metadata text
//   u32 entry count, then per entry:
//     u16 name length, name bytes, u8 dtype (0 f32, 1 f64, 2 i64),
//     u8 rank, rank x i64 dims, raw element data
struct Checkpoint {
    ArchitectureConfig architecture;
    std::string metadata;
    std::map<std::string, torch::Tensor> tensors;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Adds every parameter and buffer of `module` under `prefix.`.
void collect_state(const torch::nn::Module& module, const std::string& prefix, Checkpoint& out);

// Copies tensors named `prefix.<name>` into the module. Throws IoError when
// an expected entry is missing or has the wrong shape.
void restore_state(torch::nn::Module& module, const std::string& prefix, const Checkpoint& checkpoint);

}  // namespace matchgan
