#pragma once

// Toy forensic detectors: a frozen random convolutional feature extractor
// with a single trainable linear probe (FeatureProbe), and a fully trainable
// CNN whose first convolution keeps full resolution (CompactCnn). Both emit
// a fake-probability through a sigmoid head.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "aigi/graph.hpp"
#include "aigi/types.hpp"

namespace aigi {

enum class Family { FeatureProbe, CompactCnn };

const char* to_string(Family family);
Family family_from_string(const std::string& name);

struct AugmentFlags {
  bool noise = false;  // Gaussian noise, std uniform in [0, 3/255]
  bool flip = false;   // horizontal flip with probability 1/2
  bool jpeg = false;   // JPEG round trip at quality 30..95 with probability 1/2

  bool any() const { return noise || flip || jpeg; }
  bool operator==(const AugmentFlags&) const = default;
};

struct DefenseProvenance {
  double epsilon = 0.0;
  int inner_steps = 0;
  double inner_relative_step = 0.0;
  int outer_epochs = 0;
  double lr = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const DefenseProvenance&) const = default;
};

struct DetectorMetadata {
  std::uint64_t seed = 0;        // initialization seed
  std::uint64_t train_seed = 0;  // shuffling/augmentation seed
  int epochs = 0;
  double lr = 0.0;
  AugmentFlags augment;
  std::vector<double> loss_history;  // mean training loss per epoch
  std::optional<DefenseProvenance> defense;
};

struct DetectorNodes {
  grad::NodeId image = 0;
  grad::NodeId label = 0;
  grad::NodeId logit = 0;
  grad::NodeId score = 0;
  grad::NodeId loss = 0;
  std::optional<grad::NodeId> features;
  std::optional<grad::NodeId> embed_target;
  std::optional<grad::NodeId> embed_loss;
};

class Detector {
 public:
  Detector(Family family, grad::Graph graph, DetectorNodes nodes,
           std::set<std::string> frozen, grad::Shape input_shape,
           std::size_t feature_dim);

  Family family() const { return family_; }
  const grad::Graph& graph() const { return graph_; }
  grad::Graph& graph() { return graph_; }
  const DetectorNodes& nodes() const { return nodes_; }
  const grad::Shape& input_shape() const { return input_shape_; }
  std::size_t feature_dim() const { return feature_dim_; }
  double threshold() const { return threshold_; }

  const std::set<std::string>& frozen() const { return frozen_; }
  void set_frozen(std::set<std::string> frozen) { frozen_ = std::move(frozen); }
  bool is_frozen(const std::string& name) const { return frozen_.count(name) > 0; }

  std::vector<grad::NodeId> trainable_parameters() const;
  std::size_t trainable_count() const;

  /// Parameter names of the feature extractor (empty for CompactCnn).
  std::vector<std::string> extractor_parameters() const;
  std::vector<std::string> head_parameters() const;

  DetectorMetadata& metadata() { return metadata_; }
  const DetectorMetadata& metadata() const { return metadata_; }

 private:
  Family family_;
  grad::Graph graph_;
  DetectorNodes nodes_;
  std::set<std::string> frozen_;
  grad::Shape input_shape_;
  std::size_t feature_dim_;
  double threshold_ = 0.5;
  DetectorMetadata metadata_;
};

inline const grad::Shape kDefaultInputShape{3, 32, 32};

Detector build_feature_probe(std::uint64_t seed, std::size_t feature_dim = 64,
                             grad::Shape input_shape = kDefaultInputShape);
Detector build_compact_cnn(std::uint64_t seed, grad::Shape input_shape = kDefaultInputShape);

struct TrainOptions {
  int epochs = 20;
  double lr = 0.05;
  AugmentFlags augment;
  std::uint64_t seed = 0;
  std::size_t batch_size = 16;
};

/// Minibatch SGD on binary cross-entropy over the non-frozen parameters.
/// Throws on single-class data or a non-finite loss.
Detector train_detector(Detector detector, std::span<const LabeledImage> train,
                        const TrainOptions& options);

double score(const Detector& detector, const grad::Tensor& image);
std::vector<double> score_all(const Detector& detector, std::span<const LabeledImage> images);

/// Fake iff score >= threshold.
Label label_for_score(double score, double threshold = 0.5);
Label predict_label(const Detector& detector, const grad::Tensor& image,
                    double threshold = 0.5);

struct LossGradient {
  double loss = 0.0;
  double score = 0.0;
  grad::Tensor input_grad;
};

/// Binary cross-entropy of the detector's score against `label`, and its
/// gradient with respect to the image.
LossGradient loss_and_input_gradient(const Detector& detector, const grad::Tensor& image,
                                     Label label);
double loss_value(const Detector& detector, const grad::Tensor& image, Label label);

/// Frozen-extractor embedding. FeatureProbe only.
grad::Tensor embed(const Detector& detector, const grad::Tensor& image);

/// ||embed(image) - target||^2 and its image gradient. FeatureProbe only.
LossGradient embedding_loss_and_input_gradient(const Detector& detector,
                                               const grad::Tensor& image,
                                               const grad::Tensor& target);

void save_detector(const std::filesystem::path& path, const Detector& detector);
Detector load_detector(const std::filesystem::path& path);

}  // namespace aigi
