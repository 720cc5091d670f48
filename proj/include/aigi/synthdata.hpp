#pragma once

// Deterministic synthetic corpora. Real images are 1/f^beta Gaussian random
// fields with sensor noise; fakes come from the same family rendered at
// reduced resolution, nearest-neighbour upsampled and lightly smoothed. At
// 32x32 the visible trace is the band above half the Nyquist frequency,
// which holds only a few percent of the power a real image has there. Both
// classes share the same global mean and contrast.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "aigi/types.hpp"

namespace aigi::synth {

struct CorpusSpec {
  std::size_t n_real = 1000;
  std::size_t n_fake = 1000;
  std::size_t height = 32;
  std::size_t width = 32;
  std::uint64_t seed = 0;

  double beta = 2.0;                   // spectral exponent of the field
  double sensor_noise = 2.0 / 255.0;   // real images only
  double chroma = 0.3;                 // per-channel field weight vs the shared one
  double mean = 0.5;
  double contrast = 0.15;              // pixel std before clipping

  std::size_t upsample = 2;
  std::array<double, 3> taps{0.1, 0.8, 0.1};

  /// Throws InvalidArgument on empty classes or a resolution that is not a
  /// multiple of 8 and of the upsampling factor.
  void validate() const;
  bool operator==(const CorpusSpec&) const = default;
};

LabeledImage gen_real(const CorpusSpec& spec, std::size_t index);
LabeledImage gen_fake(const CorpusSpec& spec, std::size_t index);

/// All reals followed by all fakes.
std::vector<LabeledImage> generate_corpus(const CorpusSpec& spec);

struct Split {
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> held_out;
};

/// Stratified, seeded split; each class contributes round(train_fraction * n)
/// images to train. Both halves alternate real and fake where possible.
Split split_corpus(const std::vector<LabeledImage>& images, double train_fraction,
                   std::uint64_t seed);

/// The first `per_class` reals and fakes of `images`, alternating.
std::vector<LabeledImage> balanced_subset(const std::vector<LabeledImage>& images,
                                          std::size_t per_class);

/// Writes real/ and fake/ PNG directories plus manifest.csv.
void export_corpus(const std::filesystem::path& dir, const std::vector<LabeledImage>& images);

enum class Labeling { BySubdir, ByManifest };

struct SkippedFile {
  std::string path;
  std::string reason;
};

struct LoadedDataset {
  std::vector<LabeledImage> images;
  std::vector<SkippedFile> skipped;
};

/// Reads PNGs labelled by real/ and fake/ subdirectories or by a
/// `filename,label` manifest.csv, center-cropped or edge-padded to
/// (height, width), sorted by filename. Unreadable files are skipped and
/// reported; an empty class is rejected.
LoadedDataset load_dataset(const std::filesystem::path& dir, Labeling labeling,
                           std::size_t height = 32, std::size_t width = 32);

/// Center crop or edge-replicating pad of a (C,H,W) tensor.
grad::Tensor fit_to(const grad::Tensor& image, std::size_t height, std::size_t width);

}  // namespace aigi::synth
