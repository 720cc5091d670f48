#include "doctest.h"

#include <random>

#include "aigi/attack.hpp"
#include "aigi/defense.hpp"
#include "aigi/error.hpp"
#include "aigi/rng.hpp"
#include "support/fixtures.hpp"

using namespace aigi;
using namespace aigi::defense;
using grad::Tensor;

namespace {

std::vector<Tensor> pool(std::size_t per_class, std::uint64_t seed) {
  std::vector<Tensor> out;
  for (const auto& im : testing::small_corpus(per_class, seed)) out.push_back(im.pixels);
  return out;
}

RobustFinetuneConfig small_config() {
  RobustFinetuneConfig c;
  c.outer_epochs = 3;
  c.inner_steps = 4;
  c.batch_size = 8;
  c.seed = 5;
  return c;
}

double sq_dist(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

TEST_CASE("config presets and validation") {
  CHECK(RobustFinetuneConfig::r2().epsilon == doctest::Approx(2.0 / 255));
  CHECK(RobustFinetuneConfig::r4().epsilon == doctest::Approx(4.0 / 255));
  CHECK(RobustFinetuneConfig::r2().inner_steps == 10);
  CHECK(RobustFinetuneConfig::r2().inner_relative_step == doctest::Approx(0.25));
  auto c = RobustFinetuneConfig::r2();
  c.epsilon = 0.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = RobustFinetuneConfig::r2();
  c.outer_epochs = -1;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("embedding attack: identity at zero, stays in the ball, beats random noise") {
  const Detector d = build_feature_probe(0);
  const auto images = pool(10, 3);
  const double eps = 2.0 / 255;
  CHECK(embed_attack(d, images[0], embed(d, images[0]), 0.0, 10, 0.25, 1) == images[0]);

  Rng rng = make_rng(17, 0);
  std::bernoulli_distribution coin(0.5);
  int wins = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Tensor& x = images[i];
    const Tensor target = embed(d, x);
    const Tensor adv = embed_attack(d, x, target, eps, 10, 0.25, i);
    REQUIRE(attack::verify_constraint(x, adv, attack::Norm::Linf, eps, false));
    for (double v : adv.data()) REQUIRE((v >= 0.0 && v <= 1.0));
    Tensor noise = x;
    for (double& v : noise.data()) v = std::clamp(v + (coin(rng) ? eps : -eps), 0.0, 1.0);
    wins += sq_dist(embed(d, adv), target) > sq_dist(embed(d, noise), target);
  }
  CHECK(wins >= 0.95 * static_cast<double>(images.size()));
  CHECK_THROWS_AS(embed_attack(build_compact_cnn(0), images[0], RobustFinetuneConfig::r2(), 0), Error);
}

TEST_CASE("fine-tuning keeps the head, re-freezes the extractor and records provenance") {
  const auto train = testing::small_corpus(12);
  const Detector base = testing::quick_probe(train, 0, 3);
  const auto images = pool(12, 0);
  const auto cfg = small_config();
  const Detector tuned = robust_finetune(base, images, cfg);

  for (const auto& name : base.head_parameters()) {
    CHECK(tuned.graph().param(name).value == base.graph().param(name).value);
  }
  CHECK_FALSE(tuned.graph().param("extractor.conv1.w").value ==
              base.graph().param("extractor.conv1.w").value);
  // The feature normalizer is not tuned.
  CHECK(tuned.graph().param("extractor.norm.w").value == base.graph().param("extractor.norm.w").value);
  for (const auto& name : tuned.extractor_parameters()) CHECK(tuned.is_frozen(name));
  CHECK(tuned.trainable_count() == base.trainable_count());
  REQUIRE(tuned.metadata().defense.has_value());
  CHECK(tuned.metadata().defense->epsilon == cfg.epsilon);
  CHECK(tuned.metadata().defense->seed == cfg.seed);

  const Detector again = robust_finetune(base, images, cfg);
  CHECK(again.graph().param("extractor.conv2.w").value == tuned.graph().param("extractor.conv2.w").value);

  // Head training after fine-tuning still leaves the extractor alone.
  TrainOptions o;
  o.epochs = 1;
  const Detector retrained = train_detector(tuned, train, o);
  CHECK(retrained.graph().param("extractor.conv1.w").value == tuned.graph().param("extractor.conv1.w").value);
}

TEST_CASE("fine-tuning reduces adversarial embedding drift") {
  // A few dozen Adam steps overshoot on this sharp objective and raise the
  // drift; it comes down once there are a few hundred.
  const Detector base = build_feature_probe(0);
  const auto images = pool(400, 0);
  const auto held = pool(6, 50);
  auto cfg = small_config();
  cfg.outer_epochs = 5;
  cfg.batch_size = 16;
  const Detector tuned = robust_finetune(base, images, cfg);
  const double before = embedding_drift(base, base, held, cfg);
  const double after = embedding_drift(tuned, base, held, cfg);
  CHECK(after < before);
}

TEST_CASE("zero outer epochs is the identity, wrong family and empty pools are rejected") {
  const Detector base = build_feature_probe(1);
  auto cfg = small_config();
  cfg.outer_epochs = 0;
  const Detector same = robust_finetune(base, pool(2, 0), cfg);
  for (auto id : base.graph().parameters()) {
    const auto& p = base.graph().param(id);
    CHECK(same.graph().param(p.name).value == p.value);
  }
  CHECK_FALSE(same.metadata().defense.has_value());
  CHECK_THROWS_AS(robust_finetune(build_compact_cnn(0), pool(2, 0), small_config()), Error);
  CHECK_THROWS_AS(robust_finetune(base, {}, small_config()), Error);
}

TEST_CASE("robust variants survive a checkpoint round trip with provenance") {
  const auto dir = std::filesystem::temp_directory_path() / "aigi_test_defense";
  std::filesystem::create_directories(dir);
  auto cfg = small_config();
  cfg.outer_epochs = 1;
  const Detector tuned = robust_finetune(build_feature_probe(0), pool(4, 0), cfg);
  save_detector(dir / "r2.ckpt", tuned);
  const Detector back = load_detector(dir / "r2.ckpt");
  REQUIRE(back.metadata().defense.has_value());
  CHECK(*back.metadata().defense == *tuned.metadata().defense);
  CHECK(back.graph().param("extractor.conv1.w").value == tuned.graph().param("extractor.conv1.w").value);
  std::filesystem::remove_all(dir);
}
