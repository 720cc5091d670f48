#include "aigi/attack.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "aigi/error.hpp"
#include "aigi/fsutil.hpp"
#include "aigi/image_io.hpp"
#include "aigi/metrics.hpp"
#include "aigi/rng.hpp"
#include "json.hpp"

namespace aigi::attack {

using grad::Tensor;

const char* to_string(Method method) {
  switch (method) {
    case Method::FGSM: return "fgsm";
    case Method::BIM: return "bim";
    case Method::PGD: return "pgd";
  }
  return "?";
}

const char* to_string(Norm norm) { return norm == Norm::Linf ? "linf" : "l2"; }

Method method_from_string(const std::string& name) {
  if (name == "fgsm") return Method::FGSM;
  if (name == "bim") return Method::BIM;
  if (name == "pgd") return Method::PGD;
  throw Error(ErrorKind::InvalidArgument, "unknown attack method '" + name + "'");
}

Norm norm_from_string(const std::string& name) {
  if (name == "linf") return Norm::Linf;
  if (name == "l2") return Norm::L2;
  throw Error(ErrorKind::InvalidArgument, "unknown norm '" + name + "'");
}

AttackConfig AttackConfig::fgsm(Norm norm, double epsilon) {
  return {Method::FGSM, norm, epsilon, 1, 1.0, false, 0};
}

AttackConfig AttackConfig::bim(Norm norm, double epsilon, int steps, double relative_step) {
  return {Method::BIM, norm, epsilon, steps, relative_step, false, 0};
}

AttackConfig AttackConfig::pgd(Norm norm, double epsilon, std::uint64_t seed, int steps,
                               double relative_step) {
  return {Method::PGD, norm, epsilon, steps, relative_step, true, seed};
}

void AttackConfig::validate() const {
  const auto fail = [](const std::string& msg) { throw Error(ErrorKind::InvalidArgument, msg); };
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) fail("epsilon must be finite and >= 0");
  if (steps < 1) fail("steps must be >= 1");
  if (!(relative_step > 0.0 && relative_step <= 1.0)) fail("relative_step must lie in (0,1]");
  if (method == Method::FGSM && (steps != 1 || relative_step != 1.0)) {
    fail("FGSM requires steps = 1 and relative_step = 1");
  }
  if (method == Method::PGD && !random_start) fail("PGD requires a random start");
  if (method == Method::BIM && random_start) fail("BIM does not use a random start");
}

std::string AttackConfig::label() const {
  std::ostringstream out;
  out << to_string(method) << '_' << to_string(norm) << "_eps" << std::setprecision(6) << epsilon;
  return out.str();
}

// --- geometry ---------------------------------------------------------------

namespace {

double norm2(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

void check_same_shape(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::ShapeMismatch,
                "shapes differ: " + grad::shape_str(a.shape()) + " vs " + grad::shape_str(b.shape()));
  }
}

}  // namespace

Tensor project(const Tensor& delta, Norm norm, double epsilon) {
  Tensor out = delta;
  if (norm == Norm::Linf) {
    for (double& v : out.data()) v = std::clamp(v, -epsilon, epsilon);
    return out;
  }
  const double n = norm2(delta);
  if (n > epsilon) {
    const double s = epsilon / n;
    for (double& v : out.data()) v *= s;
  }
  return out;
}

double linf_distance(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b);
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double l2_distance(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

bool verify_constraint(const Tensor& original, const Tensor& adversarial, Norm norm,
                       double epsilon, bool quantized) {
  const double half_step = 0.5 / 255.0;
  if (norm == Norm::Linf) {
    return linf_distance(original, adversarial) <= epsilon + (quantized ? half_step : 0.0);
  }
  const double slack =
      quantized ? std::sqrt(static_cast<double>(original.size())) * half_step : 0.0;
  return l2_distance(original, adversarial) <= epsilon + slack;
}

// --- the ascent loop --------------------------------------------------------

namespace {

// x = clip_[0,1](origin + project(x - origin)), followed by a last-ulp
// correction so floating-point rounding in the subtraction can never leave
// the ball.
void project_into_ball(Tensor& x, const Tensor& origin, Norm norm, double epsilon) {
  Tensor delta(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) delta[i] = x[i] - origin[i];
  delta = project(delta, norm, epsilon);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(origin[i] + delta[i], 0.0, 1.0);

  if (norm == Norm::Linf) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      while (std::abs(x[i] - origin[i]) > epsilon) x[i] = std::nextafter(x[i], origin[i]);
    }
    return;
  }
  double n = l2_distance(x, origin);
  while (n > epsilon) {
    const double s = epsilon / n * (1.0 - 1e-12);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = std::clamp(origin[i] + (x[i] - origin[i]) * s, 0.0, 1.0);
    }
    n = l2_distance(x, origin);
  }
}

void random_start(Tensor& x, const Tensor& origin, const AttackConfig& config) {
  Rng rng = make_rng(config.seed, 0x5747);
  const double eps = config.epsilon;
  if (config.norm == Norm::Linf) {
    std::uniform_real_distribution<double> u(-eps, eps);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = origin[i] + u(rng);
  } else {
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor dir(x.shape());
    for (double& v : dir.data()) v = normal(rng);
    const double n = norm2(dir);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double radius =
        eps * std::pow(unit(rng), 1.0 / static_cast<double>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = origin[i] + (n > 0.0 ? dir[i] * radius / n : 0.0);
    }
  }
  project_into_ball(x, origin, config.norm, eps);
}

}  // namespace

IterateResult iterate(const Tensor& image, const AttackConfig& config,
                      const LossGradientFn& loss_gradient) {
  config.validate();
  IterateResult r;
  Tensor x = image;
  if (config.random_start) random_start(x, image, config);

  const double alpha = config.step_size();
  bool any_step = false;
  bool have_initial = false;
  for (int step = 0; step < config.steps; ++step) {
    const LossGradient lg = loss_gradient(x);
    if (!have_initial && !config.random_start) {
      r.initial_loss = lg.loss;
      have_initial = true;
    }
    const Tensor& g = lg.input_grad;
    if (config.norm == Norm::Linf) {
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
        x[i] += alpha * s;
      }
      any_step = true;
    } else {
      const double n = norm2(g);
      if (n > 0.0) {
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += alpha * g[i] / n;
        any_step = true;
      }
    }
    project_into_ball(x, image, config.norm, config.epsilon);
  }

  if (config.norm == Norm::L2 && !any_step) {
    r.zero_gradient = true;
    x = image;
  }
  if (!have_initial) r.initial_loss = loss_gradient(image).loss;
  r.final_loss = loss_gradient(x).loss;
  r.adversarial = std::move(x);
  return r;
}

// --- attacks on detectors ---------------------------------------------------

namespace {

AdversarialResult attack_detector(const Detector& d, const Tensor& image, Label label,
                                  const AttackConfig& config, Method expected) {
  if (config.method != expected) {
    throw Error(ErrorKind::InvalidArgument,
                std::string("expected a ") + to_string(expected) + " config, got " +
                    to_string(config.method));
  }
  AdversarialResult r;
  r.label = label;
  r.config = config;
  r.pre_score = score(d, image);
  r.pre_prediction = label_for_score(r.pre_score, d.threshold());

  auto it = iterate(image, config, [&](const Tensor& x) {
    return loss_and_input_gradient(d, x, label);
  });
  if (it.zero_gradient) {
    r.flagged = true;
    r.flag_reason = "zero gradient";
  }
  r.initial_loss = it.initial_loss;
  r.final_loss = it.final_loss;
  r.adversarial = std::move(it.adversarial);
  r.post_score = score(d, r.adversarial);
  r.post_prediction = label_for_score(r.post_score, d.threshold());
  r.success = r.pre_prediction != r.post_prediction;
  r.linf = linf_distance(image, r.adversarial);
  r.l2 = l2_distance(image, r.adversarial);
  r.quality.psnr = metrics::psnr(image, r.adversarial);
  r.quality.ssim = metrics::ssim_reported(image, r.adversarial);
  return r;
}

}  // namespace

AdversarialResult fgsm(const Detector& d, const Tensor& image, Label label,
                       const AttackConfig& config) {
  return attack_detector(d, image, label, config, Method::FGSM);
}

AdversarialResult bim(const Detector& d, const Tensor& image, Label label,
                      const AttackConfig& config) {
  return attack_detector(d, image, label, config, Method::BIM);
}

AdversarialResult pgd(const Detector& d, const Tensor& image, Label label,
                      const AttackConfig& config) {
  return attack_detector(d, image, label, config, Method::PGD);
}

AdversarialResult run_attack(const Detector& d, const Tensor& image, Label label,
                             const AttackConfig& config) {
  return attack_detector(d, image, label, config, config.method);
}

std::vector<AdversarialResult> attack_batch(const Detector& d,
                                            std::span<const LabeledImage> images,
                                            const AttackConfig& config,
                                            const BatchOptions& options) {
  std::vector<AdversarialResult> out;
  out.reserve(images.size());
  for (const auto& im : images) {
    AttackConfig per_image = config;
    per_image.seed = mix_seed(config.seed, hash_string(im.id));
    AdversarialResult r;
    try {
      r = run_attack(d, im.pixels, im.label, per_image);
      if (options.quality_reference) {
        r.quality.feature_distance =
            metrics::feature_distance(*options.quality_reference, im.pixels, r.adversarial);
      }
    } catch (const std::exception& e) {
      r = AdversarialResult{};
      r.adversarial = im.pixels;
      r.label = im.label;
      r.config = per_image;
      r.flagged = true;
      r.flag_reason = e.what();
      r.quality.psnr = 80.0;
    }
    r.original_id = im.id;
    out.push_back(std::move(r));
  }
  return out;
}

// --- export -----------------------------------------------------------------

namespace {

std::string safe_stem(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  }
  return out;
}

}  // namespace

void export_result(const std::filesystem::path& dir, const AdversarialResult& r) {
  ensure_writable_dir(dir);
  const std::string stem = safe_stem(r.original_id + "_" + r.config.label());
  const auto png = encode_png(r.adversarial);
  write_file_atomic(dir / (stem + ".png"),
                    std::string_view(reinterpret_cast<const char*>(png.data()), png.size()));

  nlohmann::json j = {
      {"original_id", r.original_id},
      {"label", to_string(r.label)},
      {"config",
       {{"method", to_string(r.config.method)},
        {"norm", to_string(r.config.norm)},
        {"epsilon", r.config.epsilon},
        {"steps", r.config.steps},
        {"relative_step", r.config.relative_step},
        {"random_start", r.config.random_start},
        {"seed", r.config.seed}}},
      {"linf", r.linf},
      {"l2", r.l2},
      {"success", r.success},
      {"pre_score", r.pre_score},
      {"post_score", r.post_score},
      {"flagged", r.flagged},
      {"psnr", r.quality.psnr},
      {"ssim", r.quality.ssim}};
  if (r.flagged) j["flag_reason"] = r.flag_reason;
  if (r.quality.feature_distance) j["feature_distance"] = *r.quality.feature_distance;
  write_file_atomic(dir / (stem + ".json"), j.dump(2) + "\n");
}

}  // namespace aigi::attack
