#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "eifnet/tensor.hpp"

namespace eifnet {

/// EIFT dump: "EIFT", u32 version (1), u32 rank, u64 dims[rank], then float32
/// values in row-major order. All integers and floats are little-endian.
inline constexpr std::uint32_t kEiftVersion = 1;
inline constexpr std::uint32_t kEiftMaxRank = 16;

std::vector<std::uint8_t> encode_tensor(const Tensor<float>& t);
Tensor<float> decode_tensor(const std::vector<std::uint8_t>& bytes);

void write_tensor(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> read_tensor(const std::filesystem::path& path);

}  // namespace eifnet
