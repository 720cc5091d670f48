#include "aigi/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "aigi/error.hpp"
#include "aigi/fsutil.hpp"

namespace aigi {

using grad::Tensor;

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

Tensor quantize_8bit(const Tensor& image) {
  Tensor out = image;
  for (double& v : out.data()) v = to_byte(v) / 255.0;
  return out;
}

std::vector<std::uint8_t> encode_png(const Tensor& image) {
  if (image.rank() != 3 || (image.shape()[0] != 1 && image.shape()[0] != 3)) {
    throw Error(ErrorKind::ShapeMismatch,
                "PNG export needs a (1|3,H,W) tensor, got " + grad::shape_str(image.shape()));
  }
  const std::size_t c = image.shape()[0], h = image.shape()[1], w = image.shape()[2];
  std::vector<std::uint8_t> interleaved(c * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        interleaved[(y * w + x) * c + ch] = to_byte(image[(ch * h + y) * w + x]);

  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = c == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, interleaved.data(), 0, nullptr)) {
    throw Error(ErrorKind::Io, std::string("PNG encode failed: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, interleaved.data(), 0,
                                 nullptr)) {
    throw Error(ErrorKind::Io, std::string("PNG encode failed: ") + img.message);
  }
  out.resize(size);
  return out;
}

Tensor decode_png(std::span<const std::uint8_t> bytes) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw Error(ErrorKind::Format, std::string("PNG decode failed: ") + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw Error(ErrorKind::Format, std::string("PNG decode failed: ") + img.message);
  }
  const std::size_t h = img.height, w = img.width;
  Tensor out({3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < 3; ++ch)
        out[(ch * h + y) * w + x] = buf[(y * w + x) * 3 + ch] / 255.0;
  return out;
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
  const auto bytes = encode_png(image);
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()),
                                           bytes.size()));
}

Tensor read_png(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  return decode_png(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
}

std::string encode_pgm16(const Tensor& plane, double lo, double hi) {
  if (plane.rank() != 2) {
    throw Error(ErrorKind::ShapeMismatch, "PGM export needs a 2-D tensor");
  }
  const std::size_t h = plane.shape()[0], w = plane.shape()[1];
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n65535\n";
  const double span = hi > lo ? hi - lo : 1.0;
  for (double v : plane.data()) {
    const double t = std::clamp((v - lo) / span, 0.0, 1.0);
    const auto q = static_cast<std::uint16_t>(std::lround(t * 65535.0));
    out.push_back(static_cast<char>(q >> 8));
    out.push_back(static_cast<char>(q & 0xff));
  }
  return out;
}

void write_pgm16(const std::filesystem::path& path, const Tensor& plane, double lo,
                 double hi) {
  write_file_atomic(path, encode_pgm16(plane, lo, hi));
}

}  // namespace aigi
