#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "aigi/attack.hpp"
#include "aigi/config.hpp"
#include "aigi/error.hpp"
#include "aigi/image_io.hpp"
#include "aigi/metrics.hpp"
#include "aigi/rng.hpp"
#include "support/fixtures.hpp"

using namespace aigi;
using namespace aigi::attack;
using grad::Tensor;

namespace {

// Logistic model z = w.x + b with cross-entropy on label y; the input
// gradient is (sigmoid(z) - y) w, so its sign pattern never changes.
struct Logistic {
  Tensor w;
  double b = 0.1;
  double y = 1.0;

  double z(const Tensor& x) const {
    double s = b;
    for (std::size_t i = 0; i < x.size(); ++i) s += w[i] * x[i];
    return s;
  }
  LossGradient operator()(const Tensor& x) const {
    const double zz = z(x), p = 1.0 / (1.0 + std::exp(-zz));
    LossGradient lg;
    lg.loss = y > 0.5 ? std::log1p(std::exp(-zz)) : std::log1p(std::exp(zz));
    lg.score = p;
    lg.input_grad = Tensor(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) lg.input_grad[i] = (p - y) * w[i];
    return lg;
  }
};

Logistic logistic(std::uint64_t seed, double y) {
  Rng rng = make_rng(seed, 3);
  std::normal_distribution<double> n(0.0, 1.0);
  Logistic m;
  m.w = Tensor({3, 2, 2});
  for (double& v : m.w.data()) v = n(rng);
  m.y = y;
  return m;
}

Tensor grey(double v = 0.5) {
  Tensor t({3, 2, 2});
  for (double& x : t.data()) x = v;
  return t;
}

struct Trained {
  std::vector<LabeledImage> train, held;
  Detector probe;
};

const Trained& trained() {
  static const Trained t = [] {
    Trained r{testing::small_corpus(30, 0), testing::small_corpus(15, 99),
              build_feature_probe(0)};
    r.probe = testing::quick_probe(r.train);
    return r;
  }();
  return t;
}

}  // namespace

TEST_CASE("configs: defaults and validation") {
  const auto f = AttackConfig::fgsm(Norm::Linf, 0.1);
  CHECK(f.steps == 1);
  CHECK(f.relative_step == 1.0);
  CHECK_FALSE(f.random_start);
  const auto b = AttackConfig::bim(Norm::Linf, 0.1);
  CHECK(b.steps == 10);
  CHECK(b.relative_step == doctest::Approx(0.2));
  const auto p = AttackConfig::pgd(Norm::L2, 0.1, 5);
  CHECK(p.steps == 40);
  CHECK(p.relative_step == doctest::Approx(1.0 / 30));
  CHECK(p.random_start);
  CHECK(p.step_size() == doctest::Approx(0.1 / 30));

  auto bad = f;
  bad.steps = 2;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = b;
  bad.epsilon = -1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = p;
  bad.random_start = false;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = b;
  bad.relative_step = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK(method_from_string("bim") == Method::BIM);
  CHECK(norm_from_string("l2") == Norm::L2);
  CHECK_THROWS_AS(method_from_string("cw"), Error);
}

TEST_CASE("fgsm on a logistic model equals the closed form") {
  for (double y : {0.0, 1.0}) {
    const Logistic m = logistic(1, y);
    const Tensor x = grey();
    const double sgn = (1.0 / (1.0 + std::exp(-m.z(x))) - y) > 0 ? 1.0 : -1.0;
    double wn = 0.0;
    for (double v : m.w.data()) wn += v * v;
    wn = std::sqrt(wn);

    const auto linf = iterate(x, AttackConfig::fgsm(Norm::Linf, 0.03), m);
    const auto l2 = iterate(x, AttackConfig::fgsm(Norm::L2, 0.3), m);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double s = m.w[i] > 0 ? sgn : -sgn;
      CHECK(linf.adversarial[i] == doctest::Approx(0.5 + 0.03 * s).epsilon(1e-14));
      CHECK(l2.adversarial[i] == doctest::Approx(0.5 + 0.3 * sgn * m.w[i] / wn).epsilon(1e-14));
    }
    CHECK(linf.final_loss > linf.initial_loss);
    CHECK(l2.final_loss > l2.initial_loss);
  }
}

TEST_CASE("bim on a logistic model walks to the corner and stops there") {
  const Logistic m = logistic(2, 1.0);
  const Tensor x = grey();
  const auto r = iterate(x, AttackConfig::bim(Norm::Linf, 0.05), m);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = m.w[i] > 0 ? -1.0 : 1.0;  // y = 1 pushes the logit down
    CHECK(r.adversarial[i] == doctest::Approx(0.5 + 0.05 * s).epsilon(1e-14));
  }
  // Near the top of the range the clip to [0,1] wins over the ball.
  const auto edge = iterate(grey(0.99), AttackConfig::bim(Norm::Linf, 0.05), m);
  for (double v : edge.adversarial.data()) CHECK(v <= 1.0);
}

TEST_CASE("epsilon zero returns the input") {
  const Logistic m = logistic(3, 0.0);
  const Tensor x = grey(0.3);
  for (const auto& c : {AttackConfig::fgsm(Norm::Linf, 0.0), AttackConfig::bim(Norm::L2, 0.0),
                        AttackConfig::pgd(Norm::Linf, 0.0, 4), AttackConfig::pgd(Norm::L2, 0.0, 4)}) {
    CHECK(iterate(x, c, m).adversarial == x);
  }
}

TEST_CASE("projection examples") {
  Tensor d({4});
  d[0] = 0.3;
  d[1] = -0.05;
  d[2] = -0.2;
  d[3] = 0.0;
  const Tensor li = project(d, Norm::Linf, 0.1);
  CHECK(li[0] == 0.1);
  CHECK(li[1] == -0.05);
  CHECK(li[2] == -0.1);
  CHECK(li[3] == 0.0);

  Tensor e({2});
  e[0] = 3.0;
  e[1] = 4.0;
  const Tensor l2 = project(e, Norm::L2, 1.0);
  CHECK(l2[0] == doctest::Approx(0.6));
  CHECK(l2[1] == doctest::Approx(0.8));
  CHECK(project(e, Norm::L2, 5.0) == e);
  CHECK(project(e, Norm::L2, 6.0) == e);
}

TEST_CASE("verify_constraint: zero slack continuous, half-step quantized") {
  const Tensor x = grey();
  Tensor y = x;
  y[0] += 0.1;
  const double d = y[0] - x[0];
  CHECK(verify_constraint(x, y, Norm::Linf, d, false));
  CHECK_FALSE(verify_constraint(x, y, Norm::Linf, std::nextafter(d, 0.0), false));
  CHECK(verify_constraint(x, y, Norm::Linf, 0.1 - 0.4 / 255, true));
  CHECK_FALSE(verify_constraint(x, y, Norm::Linf, 0.1 - 0.6 / 255, true));
  CHECK(verify_constraint(x, y, Norm::L2, 0.1, false));
  CHECK(verify_constraint(x, y, Norm::L2, 0.1 - std::sqrt(12.0) * 0.49 / 255, true));
}

TEST_CASE("fgsm is bim with one full step, bit for bit") {
  const auto& t = trained();
  for (Norm norm : {Norm::Linf, Norm::L2}) {
    for (std::size_t i = 0; i < 6; ++i) {
      const auto& im = t.held[i];
      const double eps = norm == Norm::Linf ? 4.0 / 255 : 0.5;
      const auto f = fgsm(t.probe, im.pixels, im.label, AttackConfig::fgsm(norm, eps));
      const auto b = bim(t.probe, im.pixels, im.label, AttackConfig::bim(norm, eps, 1, 1.0));
      CHECK(f.adversarial == b.adversarial);
      CHECK(f.post_score == b.post_score);
    }
  }
  CHECK_THROWS_AS(fgsm(t.probe, t.held[0].pixels, t.held[0].label, AttackConfig::bim(Norm::Linf, 0.1)),
                  Error);
}

TEST_CASE("adversarial outputs stay in range and in the ball, also after png export") {
  const auto& t = trained();
  const auto dir = std::filesystem::temp_directory_path() / "aigi_test_attack";
  std::filesystem::remove_all(dir);
  int checked = 0;
  for (Norm norm : {Norm::Linf, Norm::L2}) {
    for (double eps : default_epsilons(norm)) {
      for (Method m : {Method::FGSM, Method::BIM, Method::PGD}) {
        const auto grid = AttackGrid::make(m, norm, {eps});
        const auto results = attack_batch(t.probe, std::span(t.held).first(4), grid.at(eps, 7));
        for (std::size_t i = 0; i < results.size(); ++i) {
          const auto& r = results[i];
          const auto& x = t.held[i].pixels;
          REQUIRE_FALSE(r.flagged);
          for (double v : r.adversarial.data()) REQUIRE((v >= 0.0 && v <= 1.0));
          REQUIRE(verify_constraint(x, r.adversarial, norm, eps, false));
          const auto png = encode_png(r.adversarial);
          REQUIRE(verify_constraint(x, decode_png(png), norm, eps, true));
          ++checked;
        }
      }
    }
  }
  CHECK(checked == 2 * 9 * 3 * 4);

  const auto r = attack_batch(t.probe, std::span(t.held).first(1), AttackConfig::pgd(Norm::Linf, 0.03, 1));
  export_result(dir, r[0]);
  const auto stem = r[0].original_id + "_" + r[0].config.label();
  CHECK(std::filesystem::exists(dir / (stem + ".png")));
  CHECK(std::filesystem::exists(dir / (stem + ".json")));
  CHECK(linf_distance(read_png(dir / (stem + ".png")), quantize_8bit(r[0].adversarial)) == 0.0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("iterations do not lose ground: final loss >= initial on nearly every image") {
  const auto& t = trained();
  int total = 0, ok = 0;
  for (const auto& c : {AttackConfig::bim(Norm::Linf, 2.0 / 255), AttackConfig::pgd(Norm::Linf, 2.0 / 255, 3),
                        AttackConfig::bim(Norm::L2, 0.5), AttackConfig::pgd(Norm::L2, 0.5, 3)}) {
    for (const auto& r : attack_batch(t.probe, t.held, c)) {
      ++total;
      ok += r.final_loss >= r.initial_loss;
    }
  }
  CHECK(ok >= 0.99 * total);
}

TEST_CASE("bim reaches at least the fgsm loss on most images") {
  const auto& t = trained();
  const double eps = 2.0 / 255;
  const auto f = attack_batch(t.probe, t.held, AttackConfig::fgsm(Norm::Linf, eps));
  const auto b = attack_batch(t.probe, t.held, AttackConfig::bim(Norm::Linf, eps));
  int ok = 0;
  for (std::size_t i = 0; i < f.size(); ++i) ok += b[i].final_loss >= f[i].final_loss;
  CHECK(ok >= 0.9 * static_cast<double>(f.size()));
}

TEST_CASE("attack_batch: order, seeding, determinism, empty input") {
  const auto& t = trained();
  const auto c = AttackConfig::pgd(Norm::Linf, 4.0 / 255, 21);
  const auto a = attack_batch(t.probe, t.held, c);
  const auto again = attack_batch(t.probe, t.held, c);
  REQUIRE(a.size() == t.held.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].original_id == t.held[i].id);
    CHECK(a[i].adversarial == again[i].adversarial);
    CHECK(a[i].success == again[i].success);
  }
  // Seeds are per image id, so a result does not depend on its position.
  std::vector<LabeledImage> reversed(t.held.rbegin(), t.held.rend());
  const auto r = attack_batch(t.probe, reversed, c);
  CHECK(r.back().adversarial == a.front().adversarial);

  auto other = c;
  other.seed = 22;
  CHECK_FALSE(attack_batch(t.probe, std::span(t.held).first(1), other)[0].adversarial == a[0].adversarial);
  CHECK(attack_batch(t.probe, {}, c).empty());
}

TEST_CASE("failures come back flagged instead of throwing") {
  const auto& t = trained();
  std::vector<LabeledImage> odd{{Tensor({3, 16, 16}), Label::Fake, "small"}, t.held[0]};
  const auto r = attack_batch(t.probe, odd, AttackConfig::bim(Norm::Linf, 0.01));
  REQUIRE(r.size() == 2);
  CHECK(r[0].flagged);
  CHECK_FALSE(r[0].flag_reason.empty());
  CHECK(r[0].original_id == "small");
  CHECK_FALSE(r[1].flagged);
}

TEST_CASE("pgd success rate does not decrease with the budget") {
  const auto& t = trained();
  // 5e-3 sits above 1/255, so the grid is walked in sorted order.
  auto grid = default_epsilons(Norm::Linf);
  std::sort(grid.begin(), grid.end());
  double prev = -1.0;
  for (double eps : grid) {
    const auto results = attack_batch(t.probe, t.held, AttackConfig::pgd(Norm::Linf, eps, 5));
    std::vector<Outcome> outcomes;
    for (const auto& r : results) outcomes.push_back(r.outcome());
    const double asr = metrics::attack_success_rate(outcomes).value_or(0.0);
    CAPTURE(eps);
    CHECK(asr >= prev);
    prev = asr;
  }
  CHECK(prev > 0.9);
}
