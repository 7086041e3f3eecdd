#pragma once

#include "lgpt/numerics/graph.hpp"

#include <cstdint>
#include <filesystem>

namespace lgpt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout (little endian): "LGPTCKPT", u32 version, u32 count, then per
// tensor u16 name length, UTF-8 name, u8 rank, u64 extents, f32 values.
void save_checkpoint(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap load_checkpoint(const std::filesystem::path& path);

// Prefix every key; used to put several stores in one file.
TensorMap with_prefix(const TensorMap& tensors, const std::string& prefix);
// Entries under prefix, with the prefix stripped.
TensorMap under_prefix(const TensorMap& tensors, const std::string& prefix);

} // namespace lgpt
