#include "aigi/synthdata.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "aigi/error.hpp"
#include "aigi/fsutil.hpp"
#include "aigi/image_io.hpp"
#include "aigi/rng.hpp"

namespace aigi::synth {

using grad::Tensor;

void CorpusSpec::validate() const {
  const auto fail = [](const std::string& m) { throw Error(ErrorKind::InvalidArgument, m); };
  if (n_real < 1 || n_fake < 1) fail("corpus needs at least one real and one fake image");
  if (upsample < 1) fail("upsampling factor must be >= 1");
  if (height == 0 || width == 0 || height % 8 || width % 8 || height % upsample ||
      width % upsample) {
    fail("resolution must be a non-zero multiple of 8 and of the upsampling factor");
  }
  if (!(beta >= 0.0)) fail("spectral exponent must be >= 0");
  if (!(contrast > 0.0)) fail("contrast must be > 0");
}

namespace {

constexpr std::uint64_t kRealStream = 0x7265616c;
constexpr std::uint64_t kFakeStream = 0x66616b65;

// Zero-mean Gaussian field whose power spectrum falls off as 1/f^beta: white
// noise shaped in the Fourier domain.
std::vector<double> power_law_field(std::size_t h, std::size_t w, double beta, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::complex<double>> buf(h * w);
  for (auto& v : buf) v = normal(rng);
  auto* data = reinterpret_cast<fftw_complex*>(buf.data());
  fftw_plan fwd = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), data, data,
                                   FFTW_FORWARD, FFTW_ESTIMATE);
  fftw_execute(fwd);
  fftw_destroy_plan(fwd);
  for (std::size_t i = 0; i < h; ++i) {
    const double fy = static_cast<double>(i <= h / 2 ? i : h - i) / static_cast<double>(h);
    for (std::size_t j = 0; j < w; ++j) {
      const double fx = static_cast<double>(j <= w / 2 ? j : w - j) / static_cast<double>(w);
      const double f = std::hypot(fx, fy);
      buf[i * w + j] *= f > 0.0 ? std::pow(f, -beta / 2.0) : 0.0;
    }
  }
  fftw_plan inv = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), data, data,
                                   FFTW_BACKWARD, FFTW_ESTIMATE);
  fftw_execute(inv);
  fftw_destroy_plan(inv);
  std::vector<double> out(h * w);
  for (std::size_t i = 0; i < h * w; ++i) out[i] = buf[i].real();
  return out;
}

// Three channels sharing one field plus a weaker independent field each.
Tensor color_field(std::size_t h, std::size_t w, const CorpusSpec& spec, Rng& rng) {
  const auto shared = power_law_field(h, w, spec.beta, rng);
  Tensor out({3, h, w});
  for (std::size_t c = 0; c < 3; ++c) {
    const auto own = power_law_field(h, w, spec.beta, rng);
    for (std::size_t i = 0; i < h * w; ++i) out[c * h * w + i] = shared[i] + spec.chroma * own[i];
  }
  return out;
}

// Rescale to the target mean and standard deviation over all pixels.
void standardize(Tensor& t, double mean, double std_dev) {
  const double n = static_cast<double>(t.size());
  double m = 0.0;
  for (double v : t.data()) m += v;
  m /= n;
  double var = 0.0;
  for (double v : t.data()) var += (v - m) * (v - m);
  const double s = std::sqrt(var / n);
  const double k = s > 0.0 ? std_dev / s : 0.0;
  for (double& v : t.data()) v = mean + (v - m) * k;
}

void clip_unit(Tensor& t) {
  for (double& v : t.data()) v = std::clamp(v, 0.0, 1.0);
}

std::string image_id(const char* prefix, std::size_t index) {
  std::ostringstream out;
  out << prefix << '_';
  out.width(5);
  out.fill('0');
  out << index;
  return out.str();
}

}  // namespace

LabeledImage gen_real(const CorpusSpec& spec, std::size_t index) {
  spec.validate();
  if (index >= spec.n_real) throw Error(ErrorKind::InvalidArgument, "real index out of range");
  Rng rng = make_rng(spec.seed, mix_seed(kRealStream, index));
  Tensor t = color_field(spec.height, spec.width, spec, rng);
  standardize(t, spec.mean, spec.contrast);
  clip_unit(t);
  std::normal_distribution<double> noise(0.0, spec.sensor_noise);
  for (double& v : t.data()) v += noise(rng);
  clip_unit(t);
  return {std::move(t), Label::Real, image_id("real", index)};
}

LabeledImage gen_fake(const CorpusSpec& spec, std::size_t index) {
  spec.validate();
  if (index >= spec.n_fake) throw Error(ErrorKind::InvalidArgument, "fake index out of range");
  Rng rng = make_rng(spec.seed, mix_seed(kFakeStream, index));
  const std::size_t f = spec.upsample;
  const std::size_t h = spec.height, w = spec.width, lh = h / f, lw = w / f;
  const Tensor low = color_field(lh, lw, spec, rng);

  Tensor up({3, h, w});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) up[(c * h + y) * w + x] = low[(c * lh + y / f) * lw + x / f];

  // Separable 3-tap smoothing with edge replication.
  const auto& k = spec.taps;
  Tensor tmp(up.shape());
  Tensor out(up.shape());
  for (std::size_t c = 0; c < 3; ++c) {
    const double* src = up.data().data() + c * h * w;
    double* mid = tmp.data().data() + c * h * w;
    double* dst = out.data().data() + c * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t xl = x == 0 ? 0 : x - 1, xr = std::min(x + 1, w - 1);
        mid[y * w + x] = k[0] * src[y * w + xl] + k[1] * src[y * w + x] + k[2] * src[y * w + xr];
      }
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t yu = y == 0 ? 0 : y - 1, yd = std::min(y + 1, h - 1);
        dst[y * w + x] = k[0] * mid[yu * w + x] + k[1] * mid[y * w + x] + k[2] * mid[yd * w + x];
      }
  }
  standardize(out, spec.mean, spec.contrast);
  clip_unit(out);
  return {std::move(out), Label::Fake, image_id("fake", index)};
}

std::vector<LabeledImage> generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  std::vector<LabeledImage> out;
  out.reserve(spec.n_real + spec.n_fake);
  for (std::size_t i = 0; i < spec.n_real; ++i) out.push_back(gen_real(spec, i));
  for (std::size_t i = 0; i < spec.n_fake; ++i) out.push_back(gen_fake(spec, i));
  return out;
}

namespace {

std::vector<LabeledImage> interleave(std::vector<LabeledImage> reals,
                                     std::vector<LabeledImage> fakes) {
  std::vector<LabeledImage> out;
  out.reserve(reals.size() + fakes.size());
  for (std::size_t i = 0; i < std::max(reals.size(), fakes.size()); ++i) {
    if (i < reals.size()) out.push_back(std::move(reals[i]));
    if (i < fakes.size()) out.push_back(std::move(fakes[i]));
  }
  return out;
}

}  // namespace

Split split_corpus(const std::vector<LabeledImage>& images, double train_fraction,
                   std::uint64_t seed) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "train fraction must lie in [0,1]");
  }
  std::vector<LabeledImage> by_class[2];
  for (const auto& im : images) by_class[im.label == Label::Fake].push_back(im);
  Rng rng = make_rng(seed, 0x5911);
  std::vector<LabeledImage> train[2], held[2];
  for (int c = 0; c < 2; ++c) {
    auto& v = by_class[c];
    std::shuffle(v.begin(), v.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(v.size())));
    train[c].assign(v.begin(), v.begin() + static_cast<long>(n_train));
    held[c].assign(v.begin() + static_cast<long>(n_train), v.end());
  }
  return {interleave(std::move(train[0]), std::move(train[1])),
          interleave(std::move(held[0]), std::move(held[1]))};
}

std::vector<LabeledImage> balanced_subset(const std::vector<LabeledImage>& images,
                                          std::size_t per_class) {
  std::vector<LabeledImage> reals, fakes;
  for (const auto& im : images) {
    auto& v = im.label == Label::Fake ? fakes : reals;
    if (v.size() < per_class) v.push_back(im);
  }
  return interleave(std::move(reals), std::move(fakes));
}

void export_corpus(const std::filesystem::path& dir, const std::vector<LabeledImage>& images) {
  ensure_writable_dir(dir / "real");
  ensure_writable_dir(dir / "fake");
  std::ostringstream manifest;
  manifest << "filename,label\n";
  for (const auto& im : images) {
    const std::string rel = std::string(to_string(im.label)) + "/" + im.id + ".png";
    const auto png = encode_png(im.pixels);
    write_file_atomic(dir / rel,
                      std::string_view(reinterpret_cast<const char*>(png.data()), png.size()));
    manifest << rel << ',' << to_string(im.label) << '\n';
  }
  write_file_atomic(dir / "manifest.csv", manifest.str());
}

Tensor fit_to(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3) throw Error(ErrorKind::ShapeMismatch, "fit_to needs a (C,H,W) tensor");
  const std::size_t c_n = image.shape()[0], h = image.shape()[1], w = image.shape()[2];
  if (h == height && w == width) return image;
  // Offsets of the output window inside the source; negative means padding.
  const long oy = (static_cast<long>(h) - static_cast<long>(height)) / 2;
  const long ox = (static_cast<long>(w) - static_cast<long>(width)) / 2;
  Tensor out({c_n, height, width});
  for (std::size_t c = 0; c < c_n; ++c)
    for (std::size_t y = 0; y < height; ++y) {
      const auto sy = static_cast<std::size_t>(std::clamp<long>(oy + static_cast<long>(y), 0, static_cast<long>(h) - 1));
      for (std::size_t x = 0; x < width; ++x) {
        const auto sx = static_cast<std::size_t>(std::clamp<long>(ox + static_cast<long>(x), 0, static_cast<long>(w) - 1));
        out[(c * height + y) * width + x] = image[(c * h + sy) * w + sx];
      }
    }
  return out;
}

namespace {

struct Entry {
  std::filesystem::path path;
  std::string name;  // relative path used for sorting and ids
  Label label;
};

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  while (!s.empty() && s.front() == ' ') s.erase(s.begin());
  return s;
}

std::vector<Entry> list_by_subdir(const std::filesystem::path& dir) {
  std::vector<Entry> out;
  for (const auto& [sub, label] : {std::pair{"real", Label::Real}, std::pair{"fake", Label::Fake}}) {
    const auto p = dir / sub;
    if (!std::filesystem::is_directory(p)) continue;
    for (const auto& e : std::filesystem::directory_iterator(p)) {
      if (!e.is_regular_file() || e.path().extension() != ".png") continue;
      out.push_back({e.path(), std::string(sub) + "/" + e.path().filename().string(), label});
    }
  }
  return out;
}

std::vector<Entry> list_by_manifest(const std::filesystem::path& dir, LoadedDataset& result) {
  const auto manifest = dir / "manifest.csv";
  std::ifstream in(manifest);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + manifest.string());
  std::vector<Entry> out;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line == "filename,label") continue;
    }
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) {
      result.skipped.push_back({line, "malformed manifest line"});
      continue;
    }
    const std::string name = trim(line.substr(0, comma));
    const std::string label = trim(line.substr(comma + 1));
    if (label != "real" && label != "fake") {
      result.skipped.push_back({name, "unknown label '" + label + "'"});
      continue;
    }
    out.push_back({dir / name, name, label == "fake" ? Label::Fake : Label::Real});
  }
  return out;
}

}  // namespace

LoadedDataset load_dataset(const std::filesystem::path& dir, Labeling labeling,
                           std::size_t height, std::size_t width) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error(ErrorKind::Io, "dataset directory " + dir.string() + " does not exist");
  }
  LoadedDataset result;
  auto entries = labeling == Labeling::BySubdir ? list_by_subdir(dir) : list_by_manifest(dir, result);
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.name < b.name; });
  for (const auto& e : entries) {
    try {
      result.images.push_back({fit_to(read_png(e.path), height, width), e.label, e.name});
    } catch (const std::exception& ex) {
      result.skipped.push_back({e.path.string(), ex.what()});
    }
  }
  const bool has_real = std::any_of(result.images.begin(), result.images.end(),
                                    [](const auto& im) { return im.label == Label::Real; });
  const bool has_fake = std::any_of(result.images.begin(), result.images.end(),
                                    [](const auto& im) { return im.label == Label::Fake; });
  if (!has_real || !has_fake) {
    throw Error(ErrorKind::SingleClass, "dataset at " + dir.string() + " has an empty class");
  }
  return result;
}

}  // namespace aigi::synth
