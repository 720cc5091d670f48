#pragma once

// Post-upload degradations: baseline JPEG quantization round trip, Gaussian
// blur with a sigma-dependent kernel size, and additive Gaussian noise.
// Images are (3,H,W) tensors with values in [0,1].

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "aigi/tensor.hpp"

namespace aigi::degrade {

enum class Kind { Identity, Jpeg, Blur, Noise };

struct DegradationConfig {
  Kind kind = Kind::Identity;
  int jpeg_quality = 100;
  double blur_sigma = 0.0;
  int noise_level = 0;  // std = 2^level / 255
  std::uint64_t seed = 0;

  static DegradationConfig identity() { return {}; }
  static DegradationConfig jpeg(int quality);
  static DegradationConfig blur(double sigma);
  static DegradationConfig noise(int level, std::uint64_t seed);

  /// Short stable label such as "jpeg90", "blur0.02", "noise3".
  std::string label() const;
};

/// JPEG qualities {90, 60, 30}.
std::vector<int> jpeg_grid();
/// Blur sigmas 0.01 * 2^n for n = 1..10.
std::vector<double> blur_grid();
/// Noise levels 0..6.
std::vector<int> noise_grid();

/// libjpeg-style quality scaling of a base quantization table entry.
int scaled_quant_entry(int base, int quality);

const std::array<int, 64>& luminance_table();
const std::array<int, 64>& chrominance_table();

/// 4:4:4 baseline JPEG round trip without entropy coding. Output stays
/// continuous (no 8-bit rounding) and is clipped to [0,1].
grad::Tensor jpeg_roundtrip(const grad::Tensor& image, int quality);

/// 0 for sigma == 0, 3 for sigma <= 1, 5 for sigma <= 2, 7 above.
int kernel_size_for_sigma(double sigma);

/// Normalized 1-D Gaussian taps for the given sigma and kernel size.
std::vector<double> gaussian_taps(double sigma, int size);

grad::Tensor gaussian_blur(const grad::Tensor& image, double sigma);

double noise_std(int level);
grad::Tensor additive_noise(const grad::Tensor& image, int level, std::uint64_t seed);

grad::Tensor apply(const grad::Tensor& image, const DegradationConfig& config);

}  // namespace aigi::degrade
