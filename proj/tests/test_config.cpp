#include "doctest.h"

#include <filesystem>

#include "aigi/config.hpp"
#include "aigi/error.hpp"
#include "aigi/fsutil.hpp"
#include "aigi/rng.hpp"

using namespace aigi;
using attack::Method;
using attack::Norm;

namespace {

std::filesystem::path write_tmp(const std::string& name, const std::string& body) {
  const auto p = std::filesystem::temp_directory_path() / ("aigi_test_config_" + name + ".json");
  write_file_atomic(p, body);
  return p;
}

}  // namespace

TEST_CASE("default config: four detectors, full grids, two defense variants") {
  const auto c = default_config();
  REQUIRE(c.detectors.size() == 4);
  CHECK(c.detectors[0].family == Family::FeatureProbe);
  CHECK(c.detectors[1].family == Family::FeatureProbe);
  CHECK(c.detectors[0].seed == c.detectors[1].seed);
  CHECK(c.detectors[0].train_seed != c.detectors[1].train_seed);
  CHECK(c.detectors[2].family == Family::CompactCnn);
  CHECK(c.detectors[3].family == Family::CompactCnn);
  CHECK(c.detectors[2].seed != c.detectors[3].seed);
  CHECK(c.corpus.n_real == 1000);
  CHECK(c.corpus.n_fake == 1000);

  CHECK(c.whitebox.size() == 6);
  for (const auto& g : c.whitebox) {
    CHECK(g.epsilons == default_epsilons(g.norm));
    if (g.method == Method::PGD) {
      CHECK(g.steps == 40);
      CHECK(g.relative_step == doctest::Approx(1.0 / 30));
    }
  }
  const auto li = default_epsilons(Norm::Linf);
  for (double e : {1e-4, 5e-4, 1e-3, 5e-3}) CHECK(std::count(li.begin(), li.end(), e) == 1);
  const auto l2 = default_epsilons(Norm::L2);
  for (double e : {0.0625, 0.125, 0.25, 0.5}) CHECK(std::count(l2.begin(), l2.end(), e) == 1);

  CHECK(c.transfer.size() == 6);
  CHECK(c.degradations.jpeg_qualities == std::vector<int>{90, 60, 30});
  CHECK(c.degradations.blur_sigmas.size() == 10);
  CHECK(c.degradations.noise_levels.size() == 7);
  CHECK_FALSE(c.degradations.attacker_pre_degrade);
  REQUIRE(c.defense.has_value());
  CHECK(c.defense->variants.size() == 2);
  CHECK(c.defense->variants[0].epsilon == doctest::Approx(2.0 / 255));
  CHECK(c.defense->variants[1].epsilon == doctest::Approx(4.0 / 255));
  CHECK_FALSE(c.defense->retrain_head);
}

TEST_CASE("grid points carry the method defaults") {
  const auto f = AttackGrid::make(Method::FGSM, Norm::L2, {1.0}).at(1.0, 9);
  CHECK(f == attack::AttackConfig::fgsm(Norm::L2, 1.0));
  const auto b = AttackGrid::make(Method::BIM, Norm::Linf, {0.1}).at(0.1, 9);
  CHECK(b == attack::AttackConfig::bim(Norm::Linf, 0.1));
  const auto p = AttackGrid::make(Method::PGD, Norm::Linf, {0.1}).at(0.1, 9);
  CHECK(p == attack::AttackConfig::pgd(Norm::Linf, 0.1, 9));
}

TEST_CASE("json round trip preserves every field") {
  auto c = default_config();
  c.dataset = "/data/images";
  c.labeling = synth::Labeling::ByManifest;
  c.detectors[1].checkpoint = "ck/probe_b.ckpt";
  c.detectors[1].train_fresh = false;
  c.detectors[2].augment.jpeg = true;
  c.degradations.attacker_pre_degrade = true;
  c.defense->retrain_head = true;
  c.attack_per_class = 7;
  override_seed(c, 42);
  const auto back = config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.detectors == c.detectors);
  CHECK(back.whitebox == c.whitebox);
  CHECK(back.degradations == c.degradations);
  CHECK(back.corpus == c.corpus);
  CHECK(back.defense->retrain_head);
  CHECK(config_hash(back) == config_hash(c));
}

TEST_CASE("load_config merges over the defaults") {
  const auto p = write_tmp("merge", R"({"corpus": {"n_real": 10, "n_fake": 12},
                                         "output_dir": "elsewhere",
                                         "attack_per_class": 5})");
  const auto c = load_config(p);
  CHECK(c.corpus.n_real == 10);
  CHECK(c.corpus.n_fake == 12);
  CHECK(c.corpus.height == 32);
  CHECK(c.output_dir == "elsewhere");
  CHECK(c.attack_per_class == 5);
  CHECK(c.detectors == default_config().detectors);
  std::filesystem::remove(p);

  const auto bad = write_tmp("bad", "{not json");
  CHECK_THROWS_AS(load_config(bad), Error);
  std::filesystem::remove(bad);
  const auto wrong = write_tmp("wrong", R"({"whitebox": [{"method": "cw", "norm": "linf", "epsilons": [0.1]}]})");
  CHECK_THROWS_AS(load_config(wrong), Error);
  std::filesystem::remove(wrong);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), Error);
}

TEST_CASE("seed override re-derives every sub-seed") {
  auto a = default_config();
  auto b = default_config();
  override_seed(b, 7);
  CHECK(b.global_seed == 7);
  CHECK(b.corpus.seed == 7);
  CHECK(b.attack_seed == mix_seed(7, 1));
  CHECK(b.noise_seed == mix_seed(7, 2));
  CHECK(b.defense->variants[1].seed == mix_seed(7, 4));
  CHECK(a.attack_seed != b.attack_seed);
  CHECK(config_hash(a) != config_hash(b));
  override_seed(b, 0);
  CHECK(config_hash(a) == config_hash(b));
}
