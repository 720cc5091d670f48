#include "aigi/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "aigi/error.hpp"
#include "aigi/rng.hpp"

namespace aigi::degrade {

using grad::Tensor;

DegradationConfig DegradationConfig::jpeg(int quality) {
  DegradationConfig c;
  c.kind = Kind::Jpeg;
  c.jpeg_quality = quality;
  return c;
}

DegradationConfig DegradationConfig::blur(double sigma) {
  DegradationConfig c;
  c.kind = Kind::Blur;
  c.blur_sigma = sigma;
  return c;
}

DegradationConfig DegradationConfig::noise(int level, std::uint64_t seed) {
  DegradationConfig c;
  c.kind = Kind::Noise;
  c.noise_level = level;
  c.seed = seed;
  return c;
}

std::string DegradationConfig::label() const {
  std::ostringstream out;
  switch (kind) {
    case Kind::Identity: out << "none"; break;
    case Kind::Jpeg: out << "jpeg" << jpeg_quality; break;
    case Kind::Blur: out << "blur" << blur_sigma; break;
    case Kind::Noise: out << "noise" << noise_level; break;
  }
  return out.str();
}

std::vector<int> jpeg_grid() { return {90, 60, 30}; }

std::vector<double> blur_grid() {
  std::vector<double> out;
  for (int n = 1; n <= 10; ++n) out.push_back(0.01 * std::ldexp(1.0, n));
  return out;
}

std::vector<int> noise_grid() { return {0, 1, 2, 3, 4, 5, 6}; }

// --- JPEG -------------------------------------------------------------------

const std::array<int, 64>& luminance_table() {
  static const std::array<int, 64> table = {
      16, 11, 10, 16, 24,  40,  51,  61,   //
      12, 12, 14, 19, 26,  58,  60,  55,   //
      14, 13, 16, 24, 40,  57,  69,  56,   //
      14, 17, 22, 29, 51,  87,  80,  62,   //
      18, 22, 37, 56, 68,  109, 103, 77,   //
      24, 35, 55, 64, 81,  104, 113, 92,   //
      49, 64, 78, 87, 103, 121, 120, 101,  //
      72, 92, 95, 98, 112, 100, 103, 99};
  return table;
}

const std::array<int, 64>& chrominance_table() {
  static const std::array<int, 64> table = [] {
    std::array<int, 64> t;
    t.fill(99);
    const int top[4][4] = {{17, 18, 24, 47}, {18, 21, 26, 66}, {24, 26, 56, 99}, {47, 66, 99, 99}};
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) t[r * 8 + c] = top[r][c];
    return t;
  }();
  return table;
}

int scaled_quant_entry(int base, int quality) {
  if (quality < 1 || quality > 100) {
    throw Error(ErrorKind::InvalidArgument,
                "JPEG quality must be in [1,100], got " + std::to_string(quality));
  }
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  const int entry = (base * scale + 50) / 100;
  return std::clamp(entry, 1, 255);
}

namespace {

// Orthonormal DCT-II basis: basis[u][x] = c(u)/2 * cos((2x+1) u pi / 16).
const std::array<double, 64>& dct_basis() {
  static const std::array<double, 64> basis = [] {
    std::array<double, 64> b;
    for (int u = 0; u < 8; ++u) {
      const double cu = u == 0 ? 1.0 / std::numbers::sqrt2 : 1.0;
      for (int x = 0; x < 8; ++x) {
        b[u * 8 + x] = 0.5 * cu * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
      }
    }
    return b;
  }();
  return basis;
}

// out = B * in * B^T (forward) or B^T * in * B (inverse).
void dct8x8(const double* in, double* out, bool inverse) {
  const auto& b = dct_basis();
  double tmp[64];
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) {
      double s = 0.0;
      for (int k = 0; k < 8; ++k)
        s += (inverse ? b[k * 8 + r] : b[r * 8 + k]) * in[k * 8 + c];
      tmp[r * 8 + c] = s;
    }
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) {
      double s = 0.0;
      for (int k = 0; k < 8; ++k)
        s += tmp[r * 8 + k] * (inverse ? b[k * 8 + c] : b[c * 8 + k]);
      out[r * 8 + c] = s;
    }
}

void check_image(const Tensor& image, const char* op) {
  if (image.rank() != 3 || image.shape()[0] != 3) {
    throw Error(ErrorKind::ShapeMismatch, std::string(op) + " needs a (3,H,W) image, got " +
                                              grad::shape_str(image.shape()));
  }
}

}  // namespace

Tensor jpeg_roundtrip(const Tensor& image, int quality) {
  check_image(image, "jpeg_roundtrip");
  std::array<double, 64> qlum, qchr;
  for (int i = 0; i < 64; ++i) {
    qlum[i] = scaled_quant_entry(luminance_table()[i], quality);
    qchr[i] = scaled_quant_entry(chrominance_table()[i], quality);
  }

  const std::size_t h = image.shape()[1], w = image.shape()[2];
  const std::size_t ph = (h + 7) / 8 * 8, pw = (w + 7) / 8 * 8;
  const std::size_t plane = h * w;

  // YCbCr planes on the 0..255 scale, edge-replicated to multiples of 8.
  std::vector<double> ycc(3 * ph * pw);
  for (std::size_t y = 0; y < ph; ++y) {
    const std::size_t sy = std::min(y, h - 1);
    for (std::size_t x = 0; x < pw; ++x) {
      const std::size_t sx = std::min(x, w - 1);
      const double r = 255.0 * image[sy * w + sx];
      const double g = 255.0 * image[plane + sy * w + sx];
      const double b = 255.0 * image[2 * plane + sy * w + sx];
      const std::size_t at = y * pw + x;
      ycc[at] = 0.299 * r + 0.587 * g + 0.114 * b;
      ycc[ph * pw + at] = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0;
      ycc[2 * ph * pw + at] = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0;
    }
  }

  double block[64], coef[64];
  for (std::size_t ch = 0; ch < 3; ++ch) {
    const auto& q = ch == 0 ? qlum : qchr;
    double* base = ycc.data() + ch * ph * pw;
    for (std::size_t by = 0; by < ph; by += 8)
      for (std::size_t bx = 0; bx < pw; bx += 8) {
        for (int r = 0; r < 8; ++r)
          for (int c = 0; c < 8; ++c) block[r * 8 + c] = base[(by + r) * pw + bx + c] - 128.0;
        dct8x8(block, coef, false);
        for (int i = 0; i < 64; ++i) coef[i] = std::round(coef[i] / q[i]) * q[i];
        dct8x8(coef, block, true);
        for (int r = 0; r < 8; ++r)
          for (int c = 0; c < 8; ++c) base[(by + r) * pw + bx + c] = block[r * 8 + c] + 128.0;
      }
  }

  Tensor out(image.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t at = y * pw + x;
      const double yy = ycc[at];
      const double cb = ycc[ph * pw + at] - 128.0;
      const double cr = ycc[2 * ph * pw + at] - 128.0;
      const double r = yy + 1.402 * cr;
      const double g = yy - 0.344136 * cb - 0.714136 * cr;
      const double b = yy + 1.772 * cb;
      out[y * w + x] = std::clamp(r / 255.0, 0.0, 1.0);
      out[plane + y * w + x] = std::clamp(g / 255.0, 0.0, 1.0);
      out[2 * plane + y * w + x] = std::clamp(b / 255.0, 0.0, 1.0);
    }
  return out;
}

// --- blur -------------------------------------------------------------------

int kernel_size_for_sigma(double sigma) {
  if (!(sigma >= 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "blur sigma must be non-negative");
  }
  if (sigma == 0.0) return 0;
  if (sigma <= 1.0) return 3;
  if (sigma <= 2.0) return 5;
  return 7;
}

std::vector<double> gaussian_taps(double sigma, int size) {
  std::vector<double> taps(static_cast<std::size_t>(size));
  const int half = size / 2;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - half;
    taps[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += taps[i];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
  const int size = kernel_size_for_sigma(sigma);
  if (size == 0) return image;
  if (image.rank() != 3) {
    throw Error(ErrorKind::ShapeMismatch, "gaussian_blur needs a (C,H,W) image");
  }
  const auto taps = gaussian_taps(sigma, size);
  const int half = size / 2;
  const std::size_t c_n = image.shape()[0], h = image.shape()[1], w = image.shape()[2];
  const auto clampi = [](long v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(n) - 1));
  };

  Tensor tmp(image.shape());
  Tensor out(image.shape());
  for (std::size_t c = 0; c < c_n; ++c) {
    const std::size_t off = c * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double s = 0.0;
        for (int k = 0; k < size; ++k)
          s += taps[k] * image[off + y * w + clampi(static_cast<long>(x) + k - half, w)];
        tmp[off + y * w + x] = s;
      }
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double s = 0.0;
        for (int k = 0; k < size; ++k)
          s += taps[k] * tmp[off + clampi(static_cast<long>(y) + k - half, h) * w + x];
        out[off + y * w + x] = std::clamp(s, 0.0, 1.0);
      }
  }
  return out;
}

// --- noise ------------------------------------------------------------------

double noise_std(int level) {
  if (level < 0) throw Error(ErrorKind::InvalidArgument, "noise level must be >= 0");
  return std::ldexp(1.0, level) / 255.0;
}

Tensor additive_noise(const Tensor& image, int level, std::uint64_t seed) {
  const double std_dev = noise_std(level);
  Rng rng = make_rng(seed, 0x6e6f697365ULL);
  std::normal_distribution<double> normal(0.0, std_dev);
  Tensor out = image;
  for (double& v : out.data()) v = std::clamp(v + normal(rng), 0.0, 1.0);
  return out;
}

Tensor apply(const Tensor& image, const DegradationConfig& config) {
  switch (config.kind) {
    case Kind::Identity: return image;
    case Kind::Jpeg: return jpeg_roundtrip(image, config.jpeg_quality);
    case Kind::Blur: return gaussian_blur(image, config.blur_sigma);
    case Kind::Noise: return additive_noise(image, config.noise_level, config.seed);
  }
  return image;
}

}  // namespace aigi::degrade
