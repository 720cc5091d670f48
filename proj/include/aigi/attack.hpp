#pragma once

// White-box gradient attacks (FGSM, BIM, PGD) under L-infinity and L2
// budgets. Attacks run on continuous [0,1] tensors; 8-bit quantization only
// happens on export.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aigi/detector.hpp"
#include "aigi/tensor.hpp"
#include "aigi/types.hpp"

namespace aigi::attack {

enum class Method { FGSM, BIM, PGD };
enum class Norm { Linf, L2 };

const char* to_string(Method method);
const char* to_string(Norm norm);
Method method_from_string(const std::string& name);
Norm norm_from_string(const std::string& name);

struct AttackConfig {
  Method method = Method::PGD;
  Norm norm = Norm::Linf;
  double epsilon = 8.0 / 255.0;
  int steps = 40;
  double relative_step = 1.0 / 30.0;
  bool random_start = true;
  std::uint64_t seed = 0;

  double step_size() const { return relative_step * epsilon; }

  static AttackConfig fgsm(Norm norm, double epsilon);
  static AttackConfig bim(Norm norm, double epsilon, int steps = 10, double relative_step = 0.2);
  static AttackConfig pgd(Norm norm, double epsilon, std::uint64_t seed = 0, int steps = 40,
                          double relative_step = 1.0 / 30.0);

  /// Throws InvalidArgument unless the method's invariants hold.
  void validate() const;
  std::string label() const;

  bool operator==(const AttackConfig&) const = default;
};

struct Quality {
  double psnr = 0.0;
  double ssim = 1.0;
  std::optional<double> feature_distance;
};

/// Ground truth plus the detector's predictions before and after an attack.
struct Outcome {
  Label truth = Label::Real;
  Label pre = Label::Real;
  Label post = Label::Real;
};

struct AdversarialResult {
  grad::Tensor adversarial;
  std::string original_id;
  Label label = Label::Real;
  AttackConfig config;
  Label pre_prediction = Label::Real;
  Label post_prediction = Label::Real;
  double pre_score = 0.0;
  double post_score = 0.0;
  bool success = false;  // predicted label flipped
  bool flagged = false;
  std::string flag_reason;
  Quality quality;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double linf = 0.0;  // ||adversarial - original||_inf
  double l2 = 0.0;

  Outcome outcome() const { return {label, pre_prediction, post_prediction}; }
};

/// Projection onto the epsilon ball: clamp (Linf) or rescale (L2).
grad::Tensor project(const grad::Tensor& delta, Norm norm, double epsilon);

/// ||adversarial - original||_p <= epsilon + slack. With `quantized` the
/// slack is 0.5/255 per coordinate (Linf) or sqrt(d) * 0.5/255 (L2);
/// otherwise it is zero.
bool verify_constraint(const grad::Tensor& original, const grad::Tensor& adversarial, Norm norm,
                       double epsilon, bool quantized);

double linf_distance(const grad::Tensor& a, const grad::Tensor& b);
double l2_distance(const grad::Tensor& a, const grad::Tensor& b);

/// Loss to maximize and its gradient at x.
using LossGradientFn = std::function<LossGradient(const grad::Tensor& x)>;

struct IterateResult {
  grad::Tensor adversarial;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  bool zero_gradient = false;
};

/// The shared ascent loop: optional random start, `steps` signed (Linf) or
/// normalized (L2) gradient steps of size relative_step * epsilon, each
/// followed by projection onto the ball and clipping to [0,1].
IterateResult iterate(const grad::Tensor& image, const AttackConfig& config,
                      const LossGradientFn& loss_gradient);

AdversarialResult fgsm(const Detector& detector, const grad::Tensor& image, Label label,
                       const AttackConfig& config);
AdversarialResult bim(const Detector& detector, const grad::Tensor& image, Label label,
                      const AttackConfig& config);
AdversarialResult pgd(const Detector& detector, const grad::Tensor& image, Label label,
                      const AttackConfig& config);

/// Dispatches on config.method.
AdversarialResult run_attack(const Detector& detector, const grad::Tensor& image, Label label,
                             const AttackConfig& config);

struct BatchOptions {
  /// FeatureProbe used for the feature-distance quality figure; none skips it.
  const Detector* quality_reference = nullptr;
};

/// One result per image, in input order. Each image's random start is seeded
/// from config.seed and the image id. Per-image failures come back as
/// flagged results.
std::vector<AdversarialResult> attack_batch(const Detector& detector,
                                            std::span<const LabeledImage> images,
                                            const AttackConfig& config,
                                            const BatchOptions& options = {});

/// Writes `<stem>.png` (8-bit) and `<stem>.json` with the config,
/// perturbation norms and success flag.
void export_result(const std::filesystem::path& dir, const AdversarialResult& result);

}  // namespace aigi::attack
