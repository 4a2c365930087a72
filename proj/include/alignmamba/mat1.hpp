#pragma once

// MAT1 tensor files:
//   bytes 0..3   magic "MAT1"
//   byte  4      dtype code (0 = f32, 1 = f64)
//   byte  5      rank
//   rank x u32   dimensions, little-endian
//   payload      numel values, little-endian IEEE-754 of the given dtype

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "alignmamba/tensor.hpp"

namespace alignmamba {

std::vector<std::uint8_t> encode_mat1(const Tensor& t);
Tensor decode_mat1(std::span<const std::uint8_t> bytes);

void save_mat1(const std::filesystem::path& path, const Tensor& t);
Tensor load_mat1(const std::filesystem::path& path);

}  // namespace alignmamba
