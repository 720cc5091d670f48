#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "aigi/error.hpp"
#include "aigi/fsutil.hpp"
#include "aigi/image_io.hpp"
#include "aigi/metrics.hpp"
#include "aigi/synthdata.hpp"

using namespace aigi;
using namespace aigi::synth;
using grad::Tensor;

namespace {

// Two-sample Kolmogorov-Smirnov statistic.
double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

// Mean radial power of the zero-mean luma, indexed by rounded radius in bins.
std::vector<double> radial_power(const std::vector<LabeledImage>& images) {
  std::vector<double> power(23, 0.0), count(23, 0.0);
  for (const auto& im : images) {
    Tensor l = metrics::luma(im.pixels);
    double m = 0.0;
    for (double v : l.data()) m += v;
    m /= static_cast<double>(l.size());
    for (double& v : l.data()) v -= m;
    const Tensor mag = metrics::centered_magnitude(l);
    for (int u = 0; u < 32; ++u)
      for (int v = 0; v < 32; ++v) {
        const auto r = static_cast<std::size_t>(std::lround(std::hypot(u - 16, v - 16)));
        if (r >= power.size()) continue;
        power[r] += mag[u * 32 + v] * mag[u * 32 + v];
        count[r] += 1.0;
      }
  }
  for (std::size_t r = 0; r < power.size(); ++r) power[r] /= std::max(1.0, count[r]);
  return power;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("aigi_test_synth_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("corpus parameters are validated") {
  CorpusSpec s;
  CHECK_NOTHROW(s.validate());
  s.n_fake = 0;
  CHECK_THROWS_AS(s.validate(), Error);
  s = {};
  s.height = 36;
  CHECK_THROWS_AS(s.validate(), Error);
  s = {};
  s.upsample = 3;
  s.height = s.width = 48;
  CHECK_NOTHROW(s.validate());
  s.height = 40;
  CHECK_THROWS_AS(s.validate(), Error);
}

TEST_CASE("generation is deterministic per (parameters, seed, index)") {
  CorpusSpec s;
  s.n_real = s.n_fake = 5;
  const auto a = generate_corpus(s), b = generate_corpus(s);
  REQUIRE(a.size() == 10);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].pixels == b[i].pixels);
    CHECK(a[i].id == b[i].id);
    CHECK(a[i].label == (i < 5 ? Label::Real : Label::Fake));
    CHECK(a[i].pixels.shape() == grad::Shape{3, 32, 32});
    for (double v : a[i].pixels.data()) REQUIRE((v >= 0.0 && v <= 1.0));
  }
  CHECK(gen_real(s, 3).pixels == a[3].pixels);
  CHECK_FALSE(gen_real(s, 3).pixels == gen_real(s, 4).pixels);
  s.seed = 1;
  CHECK_FALSE(gen_real(s, 3).pixels == a[3].pixels);
  std::set<std::string> ids;
  for (const auto& im : a) ids.insert(im.id);
  CHECK(ids.size() == a.size());
}

TEST_CASE("real images follow the 1/f^beta power law") {
  CorpusSpec s;
  s.n_real = s.n_fake = 40;
  s.sensor_noise = 0.0;
  std::vector<LabeledImage> reals;
  for (std::size_t i = 0; i < 40; ++i) reals.push_back(gen_real(s, i));
  const auto p = radial_power(reals);
  // Least-squares slope of log power against log radius over radii 2..12.
  double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
  for (int r = 2; r <= 12; ++r) {
    const double x = std::log(r), y = std::log(p[r]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++n;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  CHECK(std::abs(slope + s.beta) <= 0.5);
}

TEST_CASE("fakes lack the high-frequency band real images have") {
  CorpusSpec s;
  s.n_real = s.n_fake = 40;
  const auto all = generate_corpus(s);
  const std::vector<LabeledImage> reals(all.begin(), all.begin() + 40), fakes(all.begin() + 40, all.end());
  const auto pr = radial_power(reals), pf = radial_power(fakes);
  double hr = 0, hf = 0, lr = 0, lf = 0;
  for (int r = 16; r <= 22; ++r) {
    hr += pr[r];
    hf += pf[r];
  }
  for (int r = 1; r <= 4; ++r) {
    lr += pr[r];
    lf += pf[r];
  }
  CHECK(hf < 0.1 * hr);
  // The low band is comparable: the difference is not a global rescaling.
  CHECK(lf > 0.5 * lr);
  CHECK(lf < 2.0 * lr);
}

TEST_CASE("pixel histograms of the two classes match") {
  CorpusSpec s;
  s.n_real = s.n_fake = 100;
  std::vector<double> reals, fakes;
  for (const auto& im : generate_corpus(s)) {
    auto& v = im.label == Label::Real ? reals : fakes;
    v.insert(v.end(), im.pixels.data().begin(), im.pixels.data().end());
  }
  CHECK(ks_statistic(reals, fakes) <= 0.05);
}

TEST_CASE("split is stratified, disjoint and seeded") {
  CorpusSpec s;
  s.n_real = 30;
  s.n_fake = 20;
  const auto all = generate_corpus(s);
  const auto a = split_corpus(all, 0.8, 1);
  CHECK(a.train.size() == 24 + 16);
  CHECK(a.held_out.size() == 6 + 4);
  std::set<std::string> ids;
  for (const auto& im : a.train) ids.insert(im.id);
  for (const auto& im : a.held_out) CHECK(ids.insert(im.id).second);
  CHECK(ids.size() == all.size());
  CHECK(std::count_if(a.held_out.begin(), a.held_out.end(), [](auto& im) { return im.label == Label::Fake; }) == 4);

  const auto b = split_corpus(all, 0.8, 1), c = split_corpus(all, 0.8, 2);
  bool same = true, differs = false;
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    same = same && a.train[i].id == b.train[i].id;
    differs = differs || a.train[i].id != c.train[i].id;
  }
  CHECK(same);
  CHECK(differs);
  CHECK(a.held_out[0].label != a.held_out[1].label);

  const auto sub = balanced_subset(a.held_out, 3);
  REQUIRE(sub.size() == 6);
  for (std::size_t i = 0; i + 1 < sub.size(); i += 2) CHECK(sub[i].label != sub[i + 1].label);
}

TEST_CASE("fit_to crops centrally and pads by edge replication") {
  Tensor t({1, 4, 6});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  const Tensor crop = fit_to(t, 2, 2);
  CHECK(crop[0] == 8.0);  // row 1, column 2
  CHECK(crop[3] == 15.0);
  const Tensor pad = fit_to(t, 6, 8);
  CHECK(pad[0] == 0.0);                   // top-left replicates the corner
  CHECK(pad[1 * 8 + 1] == 0.0);           // (1,1) maps to source (0,0)
  CHECK(pad[5 * 8 + 7] == 23.0);          // bottom-right corner
  CHECK(fit_to(t, 4, 6) == t);
}

TEST_CASE("export and reload by subdirectory or manifest") {
  const auto dir = scratch("roundtrip");
  CorpusSpec s;
  s.n_real = 3;
  s.n_fake = 2;
  const auto images = generate_corpus(s);
  export_corpus(dir, images);
  CHECK(read_file(dir / "manifest.csv").rfind("filename,label\n", 0) == 0);

  for (Labeling l : {Labeling::BySubdir, Labeling::ByManifest}) {
    const auto loaded = load_dataset(dir, l);
    REQUIRE(loaded.images.size() == 5);
    CHECK(loaded.skipped.empty());
    for (std::size_t i = 1; i < loaded.images.size(); ++i) CHECK(loaded.images[i - 1].id < loaded.images[i].id);
    for (const auto& im : loaded.images) {
      const auto it = std::find_if(images.begin(), images.end(), [&](const auto& o) {
        return im.id == std::string(to_string(o.label)) + "/" + o.id + ".png";
      });
      REQUIRE(it != images.end());
      CHECK(im.label == it->label);
      CHECK(im.pixels == quantize_8bit(it->pixels));
    }
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("loader skips unreadable files, resizes, rejects an empty class") {
  const auto dir = scratch("loader");
  CorpusSpec s;
  s.n_real = s.n_fake = 2;
  export_corpus(dir, generate_corpus(s));
  write_file_atomic(dir / "fake" / "broken.png", "not a png");
  Tensor big({3, 40, 36});
  for (std::size_t i = 0; i < big.size(); ++i) big[i] = static_cast<double>(i % 255) / 255.0;
  write_png(dir / "real" / "big.png", big);

  const auto loaded = load_dataset(dir, Labeling::BySubdir);
  CHECK(loaded.images.size() == 5);
  REQUIRE(loaded.skipped.size() == 1);
  CHECK(loaded.skipped[0].path.find("broken.png") != std::string::npos);
  const auto it = std::find_if(loaded.images.begin(), loaded.images.end(),
                               [](const auto& im) { return im.id == "real/big.png"; });
  REQUIRE(it != loaded.images.end());
  CHECK(it->pixels == fit_to(quantize_8bit(big), 32, 32));

  {
    std::ofstream m(dir / "manifest.csv", std::ios::app);
    m << "real/missing.png,real\nfake/x.png,synthetic\n";
  }
  const auto by_manifest = load_dataset(dir, Labeling::ByManifest);
  CHECK(by_manifest.images.size() == 4);
  CHECK(by_manifest.skipped.size() == 2);

  std::filesystem::remove_all(dir / "fake");
  CHECK_THROWS_AS(load_dataset(dir, Labeling::BySubdir), Error);
  CHECK_THROWS_AS(load_dataset(dir / "nope", Labeling::BySubdir), Error);
  std::filesystem::remove_all(dir);
}
