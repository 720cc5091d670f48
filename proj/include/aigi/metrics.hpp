#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aigi/attack.hpp"
#include "aigi/detector.hpp"
#include "aigi/tensor.hpp"
#include "aigi/types.hpp"

namespace aigi::metrics {

struct ScoredSample {
  double score = 0.0;
  Label label = Label::Real;
  std::string id;
};

/// Fraction of samples whose thresholded prediction (score >= threshold
/// means Fake) matches the label.
double accuracy_at_threshold(std::span<const ScoredSample> samples, double threshold = 0.5);

/// Mann-Whitney statistic P(fake > real) + P(tie)/2, computed exactly.
double auc_roc(std::span<const ScoredSample> samples);

/// Fraction of fakes at or above the smallest threshold whose real
/// false-positive fraction is at most `fpr_target`. Needs >= 20 reals.
double tpr_at_fpr(std::span<const ScoredSample> samples, double fpr_target = 0.05);

/// Flips over attempts; an attempt is a sample predicted correctly before
/// the attack. Empty optional when there were no attempts.
std::optional<double> attack_success_rate(std::span<const attack::Outcome> outcomes);

/// Same, restricted to Fake-labelled samples (the fake-to-real direction).
std::optional<double> fake_to_real_rate(std::span<const attack::Outcome> outcomes);

/// Outcomes from attack results and the pre-attack predictions of the
/// detector that scored them.
std::optional<double> attack_success_rate(std::span<const attack::AdversarialResult> results,
                                          std::span<const Label> pre_labels);

/// PSNR with peak 1.0, capped at 80 dB (the MSE = 0 value).
double psnr(const grad::Tensor& a, const grad::Tensor& b);

/// BT.601 luma of a (3,H,W) image as an (H,W) plane; (1,H,W) and (H,W)
/// inputs pass through.
grad::Tensor luma(const grad::Tensor& image);

/// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5, K1 0.01,
/// K2 0.03, range 1) on luma. Unclipped, in [-1, 1]. Throws if the image
/// is smaller than the window.
double ssim(const grad::Tensor& a, const grad::Tensor& b);

/// ssim clipped to [0, 1], the value that goes into reports.
double ssim_reported(const grad::Tensor& a, const grad::Tensor& b);

/// Squared Euclidean distance of frozen-extractor embeddings divided by
/// the embedding dimension. FeatureProbe detectors only.
double feature_distance(const Detector& detector, const grad::Tensor& a,
                        const grad::Tensor& b);

struct Spectrum {
  grad::Tensor magnitudes;  // (H,W)
  bool centered = true;
  bool log_scaled = true;
};

/// |DFT| of an (H,W) plane with the DC bin moved to (H/2, W/2).
grad::Tensor centered_magnitude(const grad::Tensor& plane);

struct PerturbationSpectrum {
  Spectrum spectrum;               // log(1 + |DFT|) of the mean perturbation
  grad::Tensor mean_perturbation;  // (H,W), channel-averaged
};

PerturbationSpectrum mean_perturbation_spectrum(std::span<const grad::Tensor> originals,
                                                std::span<const grad::Tensor> adversarials);

}  // namespace aigi::metrics
