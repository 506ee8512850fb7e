#pragma once

// Flat tensor file format, used for checkpoints and fixtures:
//   magic "FLT1" | u32 ndim | ndim x u32 dims | little-endian f32 payload

#include <filesystem>

#include "fedlppa/tensor.hpp"

namespace fedlppa {

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace fedlppa
