#pragma once

// Experiment configuration: one JSON document with explicit seeds for the
// corpus, detector training, attacks and noise.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "aigi/attack.hpp"
#include "aigi/defense.hpp"
#include "aigi/detector.hpp"
#include "aigi/synthdata.hpp"
#include "json.hpp"

namespace aigi {

struct DetectorSpec {
  std::string name;
  Family family = Family::FeatureProbe;
  std::uint64_t seed = 0;        // initialization (frozen extractor for FeatureProbe)
  std::uint64_t train_seed = 0;  // shuffling and augmentation
  int epochs = 20;
  double lr = 0.1;
  AugmentFlags augment;
  std::size_t feature_dim = 64;
  /// Load this checkpoint instead of training when set and train_fresh is false.
  std::optional<std::filesystem::path> checkpoint;
  bool train_fresh = true;

  bool operator==(const DetectorSpec&) const = default;
};

/// One attack method and norm swept over a list of budgets.
struct AttackGrid {
  attack::Method method = attack::Method::PGD;
  attack::Norm norm = attack::Norm::Linf;
  std::vector<double> epsilons;
  int steps = 40;
  double relative_step = 1.0 / 30.0;

  /// Grid with the method's default step count and relative step.
  static AttackGrid make(attack::Method method, attack::Norm norm, std::vector<double> epsilons);

  attack::AttackConfig at(double epsilon, std::uint64_t seed) const;
  bool operator==(const AttackGrid&) const = default;
};

/// Single attack setting used by the degradation regimes.
struct AttackPoint {
  attack::Method method = attack::Method::PGD;
  attack::Norm norm = attack::Norm::Linf;
  double epsilon = 8.0 / 255.0;

  AttackGrid grid() const { return AttackGrid::make(method, norm, {epsilon}); }
  bool operator==(const AttackPoint&) const = default;
};

struct DegradationGrids {
  std::vector<int> jpeg_qualities;
  std::vector<double> blur_sigmas;
  std::vector<int> noise_levels;
  AttackPoint attack;  // regime used for white-box and black-box sweeps
  /// Attack the already-degraded image, then degrade again on upload.
  bool attacker_pre_degrade = false;

  bool operator==(const DegradationGrids&) const = default;
};

struct DefenseSettings {
  std::size_t detector = 0;  // index into detectors; must be a FeatureProbe
  std::vector<std::string> names;
  std::vector<defense::RobustFinetuneConfig> variants;
  std::vector<AttackGrid> attacks;  // white-box grids for the comparison
  /// Retrain the linear head on the fine-tuned features with the base
  /// detector's training settings.
  bool retrain_head = false;
};

struct ExperimentConfig {
  synth::CorpusSpec corpus;
  std::optional<std::filesystem::path> dataset;  // replaces the synthetic corpus
  synth::Labeling labeling = synth::Labeling::BySubdir;
  double train_fraction = 0.8;
  std::uint64_t split_seed = 1;
  std::size_t attack_per_class = 50;  // held-out images per class that get attacked

  std::vector<DetectorSpec> detectors;
  std::vector<AttackGrid> whitebox;
  std::vector<AttackGrid> transfer;
  DegradationGrids degradations;
  std::optional<DefenseSettings> defense;

  std::filesystem::path output_dir = "out";
  std::uint64_t global_seed = 0;
  std::uint64_t attack_seed = 0;
  std::uint64_t noise_seed = 0;
};

/// Four detectors (two FeatureProbes sharing one frozen extractor, two
/// CompactCnns), the full attack grids, the degradation grids and the
/// R2/R4 defense variants.
ExperimentConfig default_config();

/// Sub-quantization budgets plus {1,2,4,8}/255 (Linf) or {1,2,4,8} (L2), with 0.
std::vector<double> default_epsilons(attack::Norm norm);

nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const nlohmann::json& j);

/// Missing keys keep their default_config() values.
ExperimentConfig load_config(const std::filesystem::path& path);

/// Replaces the global seed and re-derives the corpus, attack and noise seeds.
void override_seed(ExperimentConfig& config, std::uint64_t seed);

/// FNV-1a of the canonical JSON serialization.
std::uint64_t config_hash(const ExperimentConfig& config);

}  // namespace aigi
