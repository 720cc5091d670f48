#pragma once

// Unsupervised adversarial fine-tuning of a FeatureProbe's frozen extractor:
// embeddings of L-infinity perturbed images are pulled back towards the
// original extractor's clean embeddings, then the extractor is frozen again
// under the unchanged linear head.

#include <cstdint>
#include <functional>
#include <span>

#include "aigi/detector.hpp"
#include "aigi/tensor.hpp"

namespace aigi::defense {

struct RobustFinetuneConfig {
  double epsilon = 2.0 / 255.0;
  int inner_steps = 10;
  double inner_relative_step = 0.25;
  int outer_epochs = 10;
  double lr = 0.01;  // Adam step size
  std::uint64_t seed = 0;
  std::size_t batch_size = 16;
  /// Called after each outer epoch with the mean adversarial embedding loss.
  std::function<void(int epoch, double loss)> log;

  static RobustFinetuneConfig r2() { return {}; }
  static RobustFinetuneConfig r4() {
    RobustFinetuneConfig c;
    c.epsilon = 4.0 / 255.0;
    return c;
  }

  void validate() const;
};

/// PGD (L-infinity, random start) maximizing ||embed(x') - target||^2 within
/// the epsilon ball and [0,1].
grad::Tensor embed_attack(const Detector& detector, const grad::Tensor& image,
                          const grad::Tensor& target, double epsilon, int steps,
                          double relative_step, std::uint64_t seed);

/// Same, with the detector's own clean embedding as the target.
grad::Tensor embed_attack(const Detector& detector, const grad::Tensor& image,
                          const RobustFinetuneConfig& config, std::uint64_t seed);

/// Fine-tunes the convolutional extractor parameters with Adam against
/// embed_attack examples, anchored to a frozen copy of the original extractor. The head
/// and the feature normalizer are left untouched. outer_epochs = 0 returns
/// the detector unchanged.
Detector robust_finetune(Detector detector, std::span<const grad::Tensor> images,
                         const RobustFinetuneConfig& config);

/// Mean ||embed(finetuned, x_adv) - embed(original, x)||^2 with x_adv from
/// embed_attack on `finetuned` against the original embedding.
double embedding_drift(const Detector& finetuned, const Detector& original,
                       std::span<const grad::Tensor> images, const RobustFinetuneConfig& config);

}  // namespace aigi::defense
