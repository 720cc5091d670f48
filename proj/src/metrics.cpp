#include "aigi/metrics.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>

#include "aigi/error.hpp"

namespace aigi::metrics {

using grad::Tensor;

double accuracy_at_threshold(std::span<const ScoredSample> samples, double threshold) {
  if (samples.empty()) throw Error(ErrorKind::EmptyInput, "accuracy of an empty sample set");
  std::size_t correct = 0;
  for (const auto& s : samples) correct += label_for_score(s.score, threshold) == s.label;
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

namespace {

struct Split {
  std::vector<double> real, fake;
};

Split split_scores(std::span<const ScoredSample> samples) {
  Split s;
  for (const auto& x : samples) (x.label == Label::Fake ? s.fake : s.real).push_back(x.score);
  return s;
}

}  // namespace

double auc_roc(std::span<const ScoredSample> samples) {
  Split s = split_scores(samples);
  if (s.real.empty() || s.fake.empty()) {
    throw Error(ErrorKind::SingleClass, "AUC needs both real and fake samples");
  }
  std::sort(s.real.begin(), s.real.end());
  // Twice the Mann-Whitney U, kept integral so the ratio is exact.
  std::uint64_t twice_u = 0;
  for (double f : s.fake) {
    const auto lo = std::lower_bound(s.real.begin(), s.real.end(), f);
    const auto hi = std::upper_bound(lo, s.real.end(), f);
    twice_u += 2 * static_cast<std::uint64_t>(lo - s.real.begin()) +
               static_cast<std::uint64_t>(hi - lo);
  }
  const std::uint64_t pairs = 2 * static_cast<std::uint64_t>(s.real.size()) * s.fake.size();
  return static_cast<double>(twice_u) / static_cast<double>(pairs);
}

double tpr_at_fpr(std::span<const ScoredSample> samples, double fpr_target) {
  Split s = split_scores(samples);
  if (s.real.size() < 20) {
    throw Error(ErrorKind::InvalidArgument,
                "TPR at fixed FPR needs at least 20 real samples, got " +
                    std::to_string(s.real.size()));
  }
  if (s.fake.empty()) throw Error(ErrorKind::SingleClass, "TPR needs fake samples");
  std::sort(s.real.begin(), s.real.end());
  std::sort(s.fake.begin(), s.fake.end());

  const auto at_or_above = [](const std::vector<double>& v, double t) {
    return static_cast<std::size_t>(v.end() - std::lower_bound(v.begin(), v.end(), t));
  };
  const double n_real = static_cast<double>(s.real.size());

  // The real-positive fraction only drops as the threshold rises, so the
  // smallest admissible candidate is found by scanning upward. Thresholds
  // between observed scores behave like the next observed score above them.
  std::vector<double> candidates = s.real;
  candidates.insert(candidates.end(), s.fake.begin(), s.fake.end());
  std::sort(candidates.begin(), candidates.end());
  double threshold = INFINITY;
  for (double t : candidates) {
    if (static_cast<double>(at_or_above(s.real, t)) / n_real <= fpr_target) {
      threshold = t;
      break;
    }
  }
  return static_cast<double>(at_or_above(s.fake, threshold)) /
         static_cast<double>(s.fake.size());
}

namespace {

std::optional<double> flip_rate(std::span<const attack::Outcome> outcomes, bool fakes_only) {
  std::size_t attempts = 0, flips = 0;
  for (const auto& o : outcomes) {
    if (fakes_only && o.truth != Label::Fake) continue;
    if (o.pre != o.truth) continue;
    ++attempts;
    flips += o.post != o.pre;
  }
  if (attempts == 0) return std::nullopt;
  return static_cast<double>(flips) / static_cast<double>(attempts);
}

}  // namespace

std::optional<double> attack_success_rate(std::span<const attack::Outcome> outcomes) {
  return flip_rate(outcomes, false);
}

std::optional<double> fake_to_real_rate(std::span<const attack::Outcome> outcomes) {
  return flip_rate(outcomes, true);
}

std::optional<double> attack_success_rate(std::span<const attack::AdversarialResult> results,
                                          std::span<const Label> pre_labels) {
  if (results.size() != pre_labels.size()) {
    throw Error(ErrorKind::InvalidArgument, "results and pre-attack labels are misaligned");
  }
  std::vector<attack::Outcome> outcomes;
  outcomes.reserve(results.size());
  for (std::size_t i = 0; i < results.size(); ++i) {
    outcomes.push_back({results[i].label, pre_labels[i], results[i].post_prediction});
  }
  return attack_success_rate(outcomes);
}

// --- image quality ----------------------------------------------------------

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::ShapeMismatch, std::string(op) + ": shapes differ, " +
                                              grad::shape_str(a.shape()) + " vs " +
                                              grad::shape_str(b.shape()));
  }
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "psnr");
  if (a.empty()) throw Error(ErrorKind::EmptyInput, "psnr of empty images");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return 80.0;
  return std::min(80.0, 10.0 * std::log10(1.0 / mse));
}

Tensor luma(const Tensor& image) {
  if (image.rank() == 2) return image;
  if (image.rank() == 3 && image.shape()[0] == 1) {
    return image.reshaped({image.shape()[1], image.shape()[2]});
  }
  if (image.rank() != 3 || image.shape()[0] != 3) {
    throw Error(ErrorKind::ShapeMismatch, "luma needs a (3,H,W), (1,H,W) or (H,W) tensor, got " +
                                              grad::shape_str(image.shape()));
  }
  const std::size_t h = image.shape()[1], w = image.shape()[2], n = h * w;
  Tensor out({h, w});
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = 0.299 * image[i] + 0.587 * image[n + i] + 0.114 * image[2 * n + i];
  }
  return out;
}

double ssim(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "ssim");
  const Tensor x = luma(a), y = luma(b);
  const std::size_t h = x.shape()[0], w = x.shape()[1];
  constexpr std::size_t k = 11;
  if (h < k || w < k) {
    throw Error(ErrorKind::InvalidArgument, "ssim needs images of at least 11x11, got " +
                                                std::to_string(h) + "x" + std::to_string(w));
  }
  double window[k * k];
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double di = static_cast<double>(i) - 5.0, dj = static_cast<double>(j) - 5.0;
      window[i * k + j] = std::exp(-(di * di + dj * dj) / (2.0 * 1.5 * 1.5));
      total += window[i * k + j];
    }
  for (double& v : window) v /= total;

  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r + k <= h; ++r)
    for (std::size_t c = 0; c + k <= w; ++c) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
          const double wt = window[i * k + j];
          const double xv = x[(r + i) * w + c + j], yv = y[(r + i) * w + c + j];
          mx += wt * xv;
          my += wt * yv;
          sxx += wt * (xv * xv);
          syy += wt * (yv * yv);
          sxy += wt * (xv * yv);
        }
      const double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
      // Every product is grouped symmetrically in x and y, so ssim(a, b) ==
      // ssim(b, a) bit for bit and ssim(a, a) is exactly 1.
      const double num = (2.0 * (mx * my) + c1) * (2.0 * cov + c2);
      const double den = (mx * mx + my * my + c1) * (vx + vy + c2);
      sum += num / den;
      ++count;
    }
  return sum / static_cast<double>(count);
}

double ssim_reported(const Tensor& a, const Tensor& b) { return std::clamp(ssim(a, b), 0.0, 1.0); }

double feature_distance(const Detector& detector, const Tensor& a, const Tensor& b) {
  if (detector.family() != Family::FeatureProbe) {
    throw Error(ErrorKind::WrongFamily, "feature distance needs a feature_probe detector");
  }
  const Tensor fa = embed(detector, a), fb = embed(detector, b);
  double s = 0.0;
  for (std::size_t i = 0; i < fa.size(); ++i) s += (fa[i] - fb[i]) * (fa[i] - fb[i]);
  return s / static_cast<double>(fa.size());
}

// --- spectra ----------------------------------------------------------------

Tensor centered_magnitude(const Tensor& plane) {
  if (plane.rank() != 2 || plane.empty()) {
    throw Error(ErrorKind::ShapeMismatch, "spectrum needs a non-empty (H,W) plane");
  }
  const std::size_t h = plane.shape()[0], w = plane.shape()[1];
  std::vector<std::complex<double>> buf(h * w);
  for (std::size_t i = 0; i < h * w; ++i) buf[i] = plane[i];
  auto* data = reinterpret_cast<fftw_complex*>(buf.data());
  fftw_plan p = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), data, data,
                                 FFTW_FORWARD, FFTW_ESTIMATE);
  fftw_execute(p);
  fftw_destroy_plan(p);

  Tensor out({h, w});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      out[((i + h / 2) % h) * w + (j + w / 2) % w] = std::abs(buf[i * w + j]);
    }
  return out;
}

PerturbationSpectrum mean_perturbation_spectrum(std::span<const Tensor> originals,
                                                std::span<const Tensor> adversarials) {
  if (originals.empty()) throw Error(ErrorKind::EmptyInput, "no perturbations to average");
  if (originals.size() != adversarials.size()) {
    throw Error(ErrorKind::InvalidArgument, "originals and adversarials are misaligned");
  }
  const grad::Shape& shape = originals.front().shape();
  if (shape.size() != 3) {
    throw Error(ErrorKind::ShapeMismatch, "perturbation spectrum needs (C,H,W) images");
  }
  const std::size_t c_n = shape[0], h = shape[1], w = shape[2], n = h * w;
  Tensor mean({h, w});
  for (std::size_t k = 0; k < originals.size(); ++k) {
    check_same_shape(originals[k], adversarials[k], "mean_perturbation_spectrum");
    if (originals[k].shape() != shape) {
      throw Error(ErrorKind::ShapeMismatch, "perturbation spectrum needs equal-shape images");
    }
    for (std::size_t c = 0; c < c_n; ++c)
      for (std::size_t i = 0; i < n; ++i) {
        mean[i] += adversarials[k][c * n + i] - originals[k][c * n + i];
      }
  }
  const double scale = 1.0 / static_cast<double>(originals.size() * c_n);
  for (double& v : mean.data()) v *= scale;

  PerturbationSpectrum out;
  out.spectrum.magnitudes = centered_magnitude(mean);
  for (double& v : out.spectrum.magnitudes.data()) v = std::log1p(v);
  out.mean_perturbation = std::move(mean);
  return out;
}

}  // namespace aigi::metrics
