#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "aigi/tensor.hpp"

namespace aigi {

/// Rounds every value to the nearest multiple of 1/255 after clipping to [0,1].
grad::Tensor quantize_8bit(const grad::Tensor& image);

/// 8-bit PNG of a (C,H,W) tensor with C = 1 or 3, values in [0,1].
std::vector<std::uint8_t> encode_png(const grad::Tensor& image);

/// Decodes any PNG libpng understands into a (3,H,W) tensor in [0,1].
grad::Tensor decode_png(std::span<const std::uint8_t> bytes);

void write_png(const std::filesystem::path& path, const grad::Tensor& image);
grad::Tensor read_png(const std::filesystem::path& path);

/// Binary 16-bit PGM (P5, maxval 65535) of a 2-D tensor. Values are mapped
/// linearly from [lo, hi] onto [0, 65535].
std::string encode_pgm16(const grad::Tensor& plane, double lo, double hi);
void write_pgm16(const std::filesystem::path& path, const grad::Tensor& plane,
                 double lo, double hi);

}  // namespace aigi
