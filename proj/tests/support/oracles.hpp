#pragma once

// Slow, direct reference implementations used to check the library metrics.

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "aigi/metrics.hpp"
#include "aigi/rng.hpp"

namespace aigi::testing {

/// O(n^2) Mann-Whitney pair count: P(fake > real) + P(tie)/2.
inline double auc_pairs(const std::vector<metrics::ScoredSample>& s) {
  std::uint64_t twice = 0, pairs = 0;
  for (const auto& f : s) {
    if (f.label != Label::Fake) continue;
    for (const auto& r : s) {
      if (r.label != Label::Real) continue;
      twice += f.score > r.score ? 2 : (f.score == r.score ? 1 : 0);
      pairs += 2;
    }
  }
  return static_cast<double>(twice) / static_cast<double>(pairs);
}

/// Best TPR over every threshold whose real positive fraction is within
/// `target`: all observed scores, midpoints between neighbours, and values
/// just outside the observed range.
inline double tpr_scan(const std::vector<metrics::ScoredSample>& s, double target) {
  std::vector<double> scores;
  for (const auto& x : s) scores.push_back(x.score);
  std::sort(scores.begin(), scores.end());
  std::vector<double> thresholds = scores;
  for (std::size_t i = 0; i + 1 < scores.size(); ++i) {
    thresholds.push_back(0.5 * (scores[i] + scores[i + 1]));
  }
  thresholds.push_back(scores.front() - 1.0);
  thresholds.push_back(scores.back() + 1.0);
  double best = 0.0;
  for (double t : thresholds) {
    double reals = 0, real_pos = 0, fakes = 0, fake_pos = 0;
    for (const auto& x : s) {
      if (x.label == Label::Real) {
        ++reals;
        real_pos += x.score >= t;
      } else {
        ++fakes;
        fake_pos += x.score >= t;
      }
    }
    if (real_pos / reals <= target) best = std::max(best, fake_pos / fakes);
  }
  return best;
}

/// Random scored instance; scores are drawn from a coarse grid so ties occur.
inline std::vector<metrics::ScoredSample> random_instance(std::uint64_t seed, std::size_t n,
                                                          int levels = 50) {
  Rng rng = make_rng(seed, 0x0a11);
  std::uniform_int_distribution<int> level(0, levels);
  std::bernoulli_distribution fake(0.5);
  std::vector<metrics::ScoredSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const Label l = fake(rng) ? Label::Fake : Label::Real;
    // Fakes are shifted upwards so the AUC is away from 0.5.
    int k = level(rng);
    if (l == Label::Fake) k = std::min(levels, k + levels / 5);
    out.push_back({static_cast<double>(k) / levels, l, std::to_string(i)});
  }
  out[0].label = Label::Real;
  out[1].label = Label::Fake;
  return out;
}

/// |DFT| of an (H,W) plane by the defining double sum, DC moved to (H/2, W/2).
inline grad::Tensor brute_centered_magnitude(const grad::Tensor& p) {
  const std::size_t h = p.shape()[0], w = p.shape()[1];
  grad::Tensor out({h, w});
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) {
      std::complex<double> acc = 0.0;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double ang = -2.0 * M_PI *
                             (static_cast<double>(u * y) / static_cast<double>(h) +
                              static_cast<double>(v * x) / static_cast<double>(w));
          acc += p[y * w + x] * std::polar(1.0, ang);
        }
      out[((u + h / 2) % h) * w + (v + w / 2) % w] = std::abs(acc);
    }
  return out;
}

/// SSIM straight from the definition on luma planes: Gaussian-weighted
/// local statistics over every valid 11x11 window, averaged.
inline double ssim_direct(const grad::Tensor& a, const grad::Tensor& b) {
  const grad::Tensor x = metrics::luma(a), y = metrics::luma(b);
  const int h = static_cast<int>(x.shape()[0]), w = static_cast<int>(x.shape()[1]);
  double g[11][11], sum = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
      sum += g[i][j];
    }
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  int count = 0;
  for (int r = 0; r + 11 <= h; ++r)
    for (int c = 0; c + 11 <= w; ++c) {
      double mx = 0, my = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double wt = g[i][j] / sum;
          mx += wt * x[(r + i) * w + c + j];
          my += wt * y[(r + i) * w + c + j];
        }
      double vx = 0, vy = 0, cxy = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double wt = g[i][j] / sum;
          const double dx = x[(r + i) * w + c + j] - mx, dy = y[(r + i) * w + c + j] - my;
          vx += wt * dx * dx;
          vy += wt * dy * dy;
          cxy += wt * dx * dy;
        }
      total += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / count;
}

}  // namespace aigi::testing
