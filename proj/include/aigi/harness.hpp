#pragma once

// Experiment pipelines: benign evaluation, white-box sweeps, black-box
// transfer matrices, post-attack degradation sweeps and the robust-backbone
// comparison. Each pipeline is a pure function of the workspace and its
// seeds.

#include <cstddef>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "aigi/attack.hpp"
#include "aigi/config.hpp"
#include "aigi/degrade.hpp"
#include "aigi/detector.hpp"
#include "aigi/report.hpp"
#include "aigi/synthdata.hpp"

namespace aigi::harness {

struct NamedDetector {
  std::string name;
  Detector detector;
};

struct Workspace {
  ExperimentConfig config;
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> held_out;
  std::vector<LabeledImage> attack_set;  // balanced subset of held_out
  std::vector<NamedDetector> detectors;
  std::vector<synth::SkippedFile> skipped;

  /// First FeatureProbe; the reference for feature-distance figures.
  const Detector* quality_reference() const;
  std::size_t index_of(const std::string& name) const;
};

using Logger = std::function<void(const std::string&)>;

struct PrepareOptions {
  bool save_checkpoints = true;  // <output_dir>/detectors/<name>.ckpt
  Logger log;
};

/// Checks that output_dir is writable, builds or loads the image pool,
/// splits it and trains (or loads) every detector.
Workspace prepare(const ExperimentConfig& config, const PrepareOptions& options = {});

/// The attack used against detector `index` for a grid point. The seed
/// depends on the global attack seed and the detector name only, so every
/// pipeline crafts the same examples for the same setting.
attack::AttackConfig attack_for(const Workspace& ws, std::size_t index, const AttackGrid& grid,
                                double epsilon);

/// Attack results on the workspace's attack set, keyed by detector and
/// attack. Only settings reused across pipelines (transfer grids and the
/// degradation attack) are retained.
class AttackCache {
 public:
  explicit AttackCache(const ExperimentConfig& config);

  const std::vector<attack::AdversarialResult>& get(const Workspace& ws, std::size_t index,
                                                    const attack::AttackConfig& config);
  bool retains(const attack::AttackConfig& config) const;
  void put(std::size_t index, const attack::AttackConfig& config,
           std::vector<attack::AdversarialResult> results);

 private:
  using Setting = std::tuple<attack::Method, attack::Norm, double>;
  std::set<Setting> retained_;
  std::map<std::pair<std::size_t, std::string>, std::vector<attack::AdversarialResult>> results_;
};

/// Runs `config` against detector `index` on the attack set. Epsilon = 0
/// returns the clean images without running the attack.
std::vector<attack::AdversarialResult> attack_set(const Workspace& ws, std::size_t index,
                                                  const attack::AttackConfig& config);

/// Identity followed by every JPEG, blur and noise grid point.
std::vector<degrade::DegradationConfig> degradation_points(const DegradationGrids& grids);

/// Applies `point` to one image; noise is seeded from the noise seed and the image id.
grad::Tensor degrade_image(const ExperimentConfig& config, degrade::DegradationConfig point,
                           const grad::Tensor& image, const std::string& id);

/// Clean accuracy at 0.5, AUC and TPR@5%FPR per detector on the held-out split.
EvalReport run_benign(const Workspace& ws);

/// Observer for every white-box grid point (used by acceptance checks).
using ResultsObserver = std::function<void(std::size_t detector, const attack::AttackConfig&,
                                           const std::vector<attack::AdversarialResult>&)>;

/// Every (detector, grid, epsilon) on the attack set: attacked-set accuracy,
/// AUC, TPR, ASR (both directions and fake-to-real) and mean quality.
/// Mean-perturbation spectra at each grid's largest epsilon go to
/// report.spectra.
EvalReport run_whitebox(const Workspace& ws, AttackCache& cache,
                        const ResultsObserver& observer = {});

/// One n x n ASR matrix per transfer grid point plus per-(source, target) rows.
EvalReport run_transfer_matrix(const Workspace& ws, AttackCache& cache);

/// Benign, white-box and black-box regimes under each JPEG, blur and noise
/// grid point, degrading after the attack.
EvalReport run_degradation_sweep(const Workspace& ws, AttackCache& cache);

/// Fine-tunes the configured FeatureProbe into each defense variant and
/// compares clean AUC, white-box AUC and transfer AUC with the undefended
/// detector. Variants are returned through `variants` when given.
EvalReport run_defense_eval(const Workspace& ws, AttackCache& cache,
                            std::vector<NamedDetector>* variants = nullptr);

Provenance provenance_for(const ExperimentConfig& config);

}  // namespace aigi::harness
