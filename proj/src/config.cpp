#include "aigi/config.hpp"

#include "aigi/degrade.hpp"
#include "aigi/error.hpp"
#include "aigi/fsutil.hpp"
#include "aigi/rng.hpp"

namespace aigi {

using attack::Method;
using attack::Norm;
using nlohmann::json;

attack::AttackConfig AttackGrid::at(double epsilon, std::uint64_t seed) const {
  switch (method) {
    case Method::FGSM: return attack::AttackConfig::fgsm(norm, epsilon);
    case Method::BIM: return attack::AttackConfig::bim(norm, epsilon, steps, relative_step);
    case Method::PGD: break;
  }
  return attack::AttackConfig::pgd(norm, epsilon, seed, steps, relative_step);
}

std::vector<double> default_epsilons(Norm norm) {
  if (norm == Norm::Linf) {
    return {0.0, 1e-4, 5e-4, 1e-3, 5e-3, 1.0 / 255, 2.0 / 255, 4.0 / 255, 8.0 / 255};
  }
  return {0.0, 0.0625, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};
}

AttackGrid AttackGrid::make(Method method, Norm norm, std::vector<double> epsilons) {
  AttackGrid g;
  g.method = method;
  g.norm = norm;
  g.epsilons = std::move(epsilons);
  if (method == Method::FGSM) {
    g.steps = 1;
    g.relative_step = 1.0;
  } else if (method == Method::BIM) {
    g.steps = 10;
    g.relative_step = 0.2;
  }
  return g;
}

namespace {

AttackGrid grid(Method method, Norm norm, std::vector<double> epsilons) {
  return AttackGrid::make(method, norm, std::move(epsilons));
}

DetectorSpec probe(std::string name, std::uint64_t seed, std::uint64_t train_seed, AugmentFlags aug) {
  DetectorSpec d;
  d.name = std::move(name);
  d.family = Family::FeatureProbe;
  d.seed = seed;
  d.train_seed = train_seed;
  d.lr = 0.1;
  d.augment = aug;
  return d;
}

DetectorSpec cnn(std::string name, std::uint64_t seed, std::uint64_t train_seed) {
  DetectorSpec d;
  d.name = std::move(name);
  d.family = Family::CompactCnn;
  d.seed = seed;
  d.train_seed = train_seed;
  d.lr = 0.05;
  d.augment.flip = true;
  d.augment.noise = true;
  return d;
}

}  // namespace

ExperimentConfig default_config() {
  ExperimentConfig c;
  AugmentFlags flip;
  flip.flip = true;
  // Both probes sit on the same frozen extractor and differ in training.
  c.detectors = {probe("probe_a", 0, 1, {}), probe("probe_b", 0, 2, flip), cnn("cnn_a", 1, 3),
                 cnn("cnn_b", 2, 4)};
  for (Method m : {Method::FGSM, Method::BIM, Method::PGD}) {
    for (Norm n : {Norm::Linf, Norm::L2}) c.whitebox.push_back(grid(m, n, default_epsilons(n)));
  }
  for (Method m : {Method::FGSM, Method::BIM, Method::PGD}) {
    c.transfer.push_back(grid(m, Norm::Linf, {8.0 / 255}));
    c.transfer.push_back(grid(m, Norm::L2, {8.0}));
  }
  c.degradations.jpeg_qualities = degrade::jpeg_grid();
  c.degradations.blur_sigmas = degrade::blur_grid();
  c.degradations.noise_levels = degrade::noise_grid();

  DefenseSettings d;
  d.detector = 0;
  d.names = {"r2", "r4"};
  d.variants = {defense::RobustFinetuneConfig::r2(), defense::RobustFinetuneConfig::r4()};
  for (Method m : {Method::FGSM, Method::BIM, Method::PGD}) {
    d.attacks.push_back(grid(m, Norm::Linf, {0.0, 1.0 / 255, 2.0 / 255, 4.0 / 255, 8.0 / 255}));
    d.attacks.push_back(grid(m, Norm::L2, {0.0, 1.0, 2.0, 4.0, 8.0}));
  }
  c.defense = std::move(d);
  override_seed(c, 0);
  return c;
}

void override_seed(ExperimentConfig& c, std::uint64_t seed) {
  c.global_seed = seed;
  c.corpus.seed = seed;
  c.attack_seed = mix_seed(seed, 1);
  c.noise_seed = mix_seed(seed, 2);
  if (c.defense) {
    for (std::size_t i = 0; i < c.defense->variants.size(); ++i) {
      c.defense->variants[i].seed = mix_seed(seed, 3 + i);
    }
  }
}

// --- JSON -------------------------------------------------------------------

namespace {

json grid_json(const AttackGrid& g) {
  return {{"method", attack::to_string(g.method)},
          {"norm", attack::to_string(g.norm)},
          {"epsilons", g.epsilons},
          {"steps", g.steps},
          {"relative_step", g.relative_step}};
}

AttackGrid grid_from(const json& j) {
  AttackGrid g;
  g.method = attack::method_from_string(j.at("method").get<std::string>());
  g.norm = attack::norm_from_string(j.at("norm").get<std::string>());
  g = grid(g.method, g.norm, j.at("epsilons").get<std::vector<double>>());
  if (j.contains("steps")) g.steps = j.at("steps").get<int>();
  if (j.contains("relative_step")) g.relative_step = j.at("relative_step").get<double>();
  return g;
}

json grids_json(const std::vector<AttackGrid>& gs) {
  json a = json::array();
  for (const auto& g : gs) a.push_back(grid_json(g));
  return a;
}

std::vector<AttackGrid> grids_from(const json& j) {
  std::vector<AttackGrid> out;
  for (const auto& g : j) out.push_back(grid_from(g));
  return out;
}

json augment_json(const AugmentFlags& a) {
  return {{"noise", a.noise}, {"flip", a.flip}, {"jpeg", a.jpeg}};
}

AugmentFlags augment_from(const json& j) {
  AugmentFlags a;
  a.noise = j.value("noise", false);
  a.flip = j.value("flip", false);
  a.jpeg = j.value("jpeg", false);
  return a;
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  const auto& s = c.corpus;
  json j;
  j["corpus"] = {{"n_real", s.n_real},
                 {"n_fake", s.n_fake},
                 {"height", s.height},
                 {"width", s.width},
                 {"seed", s.seed},
                 {"beta", s.beta},
                 {"sensor_noise", s.sensor_noise},
                 {"chroma", s.chroma},
                 {"mean", s.mean},
                 {"contrast", s.contrast},
                 {"upsample", s.upsample},
                 {"taps", s.taps}};
  if (c.dataset) {
    j["dataset"] = {{"path", c.dataset->string()},
                    {"labeling", c.labeling == synth::Labeling::BySubdir ? "by-subdir" : "by-manifest"}};
  }
  j["train_fraction"] = c.train_fraction;
  j["split_seed"] = c.split_seed;
  j["attack_per_class"] = c.attack_per_class;

  json dets = json::array();
  for (const auto& d : c.detectors) {
    json dj = {{"name", d.name},
               {"family", to_string(d.family)},
               {"seed", d.seed},
               {"train_seed", d.train_seed},
               {"epochs", d.epochs},
               {"lr", d.lr},
               {"augment", augment_json(d.augment)},
               {"feature_dim", d.feature_dim},
               {"train_fresh", d.train_fresh}};
    if (d.checkpoint) dj["checkpoint"] = d.checkpoint->string();
    dets.push_back(std::move(dj));
  }
  j["detectors"] = std::move(dets);
  j["whitebox"] = grids_json(c.whitebox);
  j["transfer"] = grids_json(c.transfer);
  j["degradations"] = {{"jpeg_qualities", c.degradations.jpeg_qualities},
                       {"blur_sigmas", c.degradations.blur_sigmas},
                       {"noise_levels", c.degradations.noise_levels},
                       {"attack",
                        {{"method", attack::to_string(c.degradations.attack.method)},
                         {"norm", attack::to_string(c.degradations.attack.norm)},
                         {"epsilon", c.degradations.attack.epsilon}}},
                       {"attacker_pre_degrade", c.degradations.attacker_pre_degrade}};
  if (c.defense) {
    json vs = json::array();
    for (std::size_t i = 0; i < c.defense->variants.size(); ++i) {
      const auto& v = c.defense->variants[i];
      vs.push_back({{"name", i < c.defense->names.size() ? c.defense->names[i] : "r" + std::to_string(i)},
                    {"epsilon", v.epsilon},
                    {"inner_steps", v.inner_steps},
                    {"inner_relative_step", v.inner_relative_step},
                    {"outer_epochs", v.outer_epochs},
                    {"lr", v.lr},
                    {"seed", v.seed},
                    {"batch_size", v.batch_size}});
    }
    j["defense"] = {{"detector", c.defense->detector},
                    {"variants", std::move(vs)},
                    {"attacks", grids_json(c.defense->attacks)},
                    {"retrain_head", c.defense->retrain_head}};
  }
  j["output_dir"] = c.output_dir.string();
  j["global_seed"] = c.global_seed;
  j["attack_seed"] = c.attack_seed;
  j["noise_seed"] = c.noise_seed;
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  try {
    ExperimentConfig c;
    const auto& s = j.at("corpus");
    c.corpus.n_real = s.at("n_real").get<std::size_t>();
    c.corpus.n_fake = s.at("n_fake").get<std::size_t>();
    c.corpus.height = s.at("height").get<std::size_t>();
    c.corpus.width = s.at("width").get<std::size_t>();
    c.corpus.seed = s.at("seed").get<std::uint64_t>();
    c.corpus.beta = s.at("beta").get<double>();
    c.corpus.sensor_noise = s.at("sensor_noise").get<double>();
    c.corpus.chroma = s.at("chroma").get<double>();
    c.corpus.mean = s.at("mean").get<double>();
    c.corpus.contrast = s.at("contrast").get<double>();
    c.corpus.upsample = s.at("upsample").get<std::size_t>();
    c.corpus.taps = s.at("taps").get<std::array<double, 3>>();
    c.corpus.validate();

    if (j.contains("dataset") && !j.at("dataset").is_null()) {
      const auto& d = j.at("dataset");
      c.dataset = d.at("path").get<std::string>();
      const auto labeling = d.value("labeling", std::string("by-subdir"));
      if (labeling == "by-subdir") {
        c.labeling = synth::Labeling::BySubdir;
      } else if (labeling == "by-manifest") {
        c.labeling = synth::Labeling::ByManifest;
      } else {
        throw Error(ErrorKind::InvalidArgument, "unknown labeling '" + labeling + "'");
      }
    }
    c.train_fraction = j.at("train_fraction").get<double>();
    c.split_seed = j.at("split_seed").get<std::uint64_t>();
    c.attack_per_class = j.at("attack_per_class").get<std::size_t>();

    for (const auto& dj : j.at("detectors")) {
      DetectorSpec d;
      d.name = dj.at("name").get<std::string>();
      d.family = family_from_string(dj.at("family").get<std::string>());
      d.seed = dj.at("seed").get<std::uint64_t>();
      d.train_seed = dj.value("train_seed", d.seed);
      d.epochs = dj.value("epochs", d.epochs);
      d.lr = dj.value("lr", d.family == Family::FeatureProbe ? 0.1 : 0.05);
      if (dj.contains("augment")) d.augment = augment_from(dj.at("augment"));
      d.feature_dim = dj.value("feature_dim", d.feature_dim);
      d.train_fresh = dj.value("train_fresh", true);
      if (dj.contains("checkpoint") && !dj.at("checkpoint").is_null()) {
        d.checkpoint = dj.at("checkpoint").get<std::string>();
      }
      if (!d.train_fresh && !d.checkpoint) {
        throw Error(ErrorKind::InvalidArgument,
                    "detector '" + d.name + "' needs a checkpoint or train_fresh");
      }
      c.detectors.push_back(std::move(d));
    }
    c.whitebox = grids_from(j.at("whitebox"));
    c.transfer = grids_from(j.at("transfer"));

    const auto& dg = j.at("degradations");
    c.degradations.jpeg_qualities = dg.at("jpeg_qualities").get<std::vector<int>>();
    c.degradations.blur_sigmas = dg.at("blur_sigmas").get<std::vector<double>>();
    c.degradations.noise_levels = dg.at("noise_levels").get<std::vector<int>>();
    const auto& da = dg.at("attack");
    c.degradations.attack.method = attack::method_from_string(da.at("method").get<std::string>());
    c.degradations.attack.norm = attack::norm_from_string(da.at("norm").get<std::string>());
    c.degradations.attack.epsilon = da.at("epsilon").get<double>();
    c.degradations.attacker_pre_degrade = dg.value("attacker_pre_degrade", false);

    if (j.contains("defense") && !j.at("defense").is_null()) {
      const auto& dj = j.at("defense");
      DefenseSettings d;
      d.detector = dj.at("detector").get<std::size_t>();
      for (const auto& vj : dj.at("variants")) {
        defense::RobustFinetuneConfig v;
        d.names.push_back(vj.at("name").get<std::string>());
        v.epsilon = vj.at("epsilon").get<double>();
        v.inner_steps = vj.value("inner_steps", v.inner_steps);
        v.inner_relative_step = vj.value("inner_relative_step", v.inner_relative_step);
        v.outer_epochs = vj.value("outer_epochs", v.outer_epochs);
        v.lr = vj.value("lr", v.lr);
        v.seed = vj.value("seed", v.seed);
        v.batch_size = vj.value("batch_size", v.batch_size);
        v.validate();
        d.variants.push_back(std::move(v));
      }
      d.attacks = grids_from(dj.at("attacks"));
      d.retrain_head = dj.value("retrain_head", false);
      c.defense = std::move(d);
    }
    c.output_dir = j.at("output_dir").get<std::string>();
    c.global_seed = j.at("global_seed").get<std::uint64_t>();
    c.attack_seed = j.at("attack_seed").get<std::uint64_t>();
    c.noise_seed = j.at("noise_seed").get<std::uint64_t>();
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("malformed config: ") + e.what());
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  json user;
  try {
    user = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, "config " + path.string() + " is not JSON: " + e.what());
  }
  json merged = to_json(default_config());
  merged.merge_patch(user);
  return config_from_json(merged);
}

std::uint64_t config_hash(const ExperimentConfig& config) {
  return hash_string(to_json(config).dump());
}

}  // namespace aigi
