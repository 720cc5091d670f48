#pragma once

#include <vector>

#include "aigi/config.hpp"
#include "aigi/detector.hpp"
#include "aigi/synthdata.hpp"

namespace aigi::testing {

inline std::vector<LabeledImage> small_corpus(std::size_t per_class, std::uint64_t seed = 0) {
  synth::CorpusSpec spec;
  spec.n_real = spec.n_fake = per_class;
  spec.seed = seed;
  return synth::generate_corpus(spec);
}

/// Reals are flat mid-grey with faint noise, fakes carry a one-pixel
/// checkerboard: trivially separable by any detector that sees texture.
inline std::vector<LabeledImage> separable_toy(std::size_t per_class) {
  std::vector<LabeledImage> out;
  for (std::size_t i = 0; i < per_class; ++i) {
    grad::Tensor real(kDefaultInputShape), fake(kDefaultInputShape);
    for (std::size_t k = 0; k < real.size(); ++k) {
      const std::size_t y = (k / 32) % 32, x = k % 32;
      real[k] = 0.5 + 0.002 * static_cast<double>((k * 7 + i * 13) % 5) - 0.004;
      fake[k] = (x + y + i) % 2 ? 0.7 : 0.3;
    }
    out.push_back({real, Label::Real, "r" + std::to_string(i)});
    out.push_back({fake, Label::Fake, "f" + std::to_string(i)});
  }
  return out;
}

/// Short FeatureProbe fit on a small corpus; enough for attack and defense
/// tests that need a detector which is right most of the time.
inline Detector quick_probe(const std::vector<LabeledImage>& train, std::uint64_t seed = 0,
                            int epochs = 10) {
  TrainOptions o;
  o.epochs = epochs;
  o.lr = 0.1;
  o.seed = seed + 1;
  return train_detector(build_feature_probe(seed), train, o);
}

/// Every pipeline at toy size: 30 images per class, short training, one or
/// two points per grid. Runs end to end in seconds.
inline ExperimentConfig tiny_config(const std::filesystem::path& out) {
  using attack::Method;
  using attack::Norm;
  ExperimentConfig c = default_config();
  c.corpus.n_real = c.corpus.n_fake = 30;
  c.attack_per_class = 4;
  for (auto& d : c.detectors) d.epochs = 4;
  c.whitebox = {AttackGrid::make(Method::PGD, Norm::Linf, {0.0, 2.0 / 255}),
                AttackGrid::make(Method::BIM, Norm::Linf, {8.0 / 255})};
  c.whitebox[0].steps = 5;
  c.transfer = {AttackGrid::make(Method::BIM, Norm::Linf, {8.0 / 255})};
  c.degradations.jpeg_qualities = {30};
  c.degradations.blur_sigmas = {1.0};
  c.degradations.noise_levels = {5};
  c.degradations.attack = {Method::BIM, Norm::Linf, 8.0 / 255};
  for (auto& v : c.defense->variants) {
    v.outer_epochs = 1;
    v.inner_steps = 2;
  }
  c.defense->attacks = {AttackGrid::make(Method::PGD, Norm::Linf, {2.0 / 255})};
  c.defense->attacks[0].steps = 5;
  c.output_dir = out;
  return c;
}

}  // namespace aigi::testing
