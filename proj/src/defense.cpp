#include "aigi/defense.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aigi/attack.hpp"
#include "aigi/error.hpp"
#include "aigi/rng.hpp"

namespace aigi::defense {

using grad::NodeId;
using grad::Tensor;

void RobustFinetuneConfig::validate() const {
  const auto fail = [](const std::string& m) { throw Error(ErrorKind::InvalidArgument, m); };
  if (!(epsilon > 0.0)) fail("fine-tuning epsilon must be > 0");
  if (inner_steps < 1) fail("inner_steps must be >= 1");
  if (!(inner_relative_step > 0.0 && inner_relative_step <= 1.0)) {
    fail("inner_relative_step must lie in (0,1]");
  }
  if (outer_epochs < 0) fail("outer_epochs must be >= 0");
  if (!(lr > 0.0)) fail("lr must be > 0");
  if (batch_size == 0) fail("batch_size must be > 0");
}

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;

void require_probe(const Detector& d) {
  if (d.family() != Family::FeatureProbe) {
    throw Error(ErrorKind::WrongFamily,
                std::string("robust fine-tuning needs a feature_probe detector, got ") +
                    to_string(d.family()));
  }
}

}  // namespace

Tensor embed_attack(const Detector& d, const Tensor& image, const Tensor& target, double epsilon,
                    int steps, double relative_step, std::uint64_t seed) {
  require_probe(d);
  if (epsilon == 0.0) return image;
  const auto config = attack::AttackConfig::pgd(attack::Norm::Linf, epsilon, seed, steps,
                                                relative_step);
  return attack::iterate(image, config,
                         [&](const Tensor& x) {
                           return embedding_loss_and_input_gradient(d, x, target);
                         })
      .adversarial;
}

Tensor embed_attack(const Detector& d, const Tensor& image, const RobustFinetuneConfig& config,
                    std::uint64_t seed) {
  return embed_attack(d, image, embed(d, image), config.epsilon, config.inner_steps,
                      config.inner_relative_step, seed);
}

Detector robust_finetune(Detector d, std::span<const Tensor> images,
                         const RobustFinetuneConfig& config) {
  require_probe(d);
  config.validate();
  if (config.outer_epochs == 0) return d;
  if (images.empty()) throw Error(ErrorKind::EmptyInput, "robust fine-tuning needs images");

  // Anchors: the original extractor's clean embeddings.
  std::vector<Tensor> targets;
  targets.reserve(images.size());
  for (const auto& x : images) targets.push_back(embed(d, x));

  grad::Graph& g = d.graph();
  const auto& n = d.nodes();
  std::vector<NodeId> tuned;
  for (NodeId id : g.parameters()) {
    if (g.param(id).name.rfind("extractor.conv", 0) == 0) tuned.push_back(id);
  }
  const grad::GradTargets grad_targets{tuned, {}};

  Rng rng = make_rng(config.seed, 0xdef);
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::vector<double>> m, v;
  for (NodeId id : tuned) {
    m.emplace_back(g.param(id).value.size(), 0.0);
    v.emplace_back(g.param(id).value.size(), 0.0);
  }
  std::uint64_t draw = 0;
  long t = 0;
  for (int epoch = 0; epoch < config.outer_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      g.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const Tensor adv = embed_attack(d, images[i], targets[i], config.epsilon,
                                        config.inner_steps, config.inner_relative_step,
                                        mix_seed(config.seed, draw++));
        const grad::Feeds feeds{{n.image, adv}, {*n.embed_target, targets[i]}};
        const auto act = grad::forward_eval(g, feeds, {*n.embed_loss});
        batch_loss += act[*n.embed_loss].item();
        if (!std::isfinite(act[*n.embed_loss].item())) {
          throw Error(ErrorKind::TrainingDiverged, "non-finite embedding loss during fine-tuning");
        }
        const auto grads = grad::backward_grad(g, *n.embed_loss, act, grad_targets);
        for (NodeId id : tuned) {
          auto& p = g.param(id);
          const Tensor& gr = grads.params.at(p.name);
          for (std::size_t j = 0; j < gr.size(); ++j) p.gradient[j] += gr[j];
        }
      }
      // Adam on the batch-mean gradient.
      ++t;
      const double inv = 1.0 / static_cast<double>(end - start);
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
      for (std::size_t p = 0; p < tuned.size(); ++p) {
        auto& param = g.param(tuned[p]);
        for (std::size_t j = 0; j < param.value.size(); ++j) {
          const double gr = param.gradient[j] * inv;
          m[p][j] = kBeta1 * m[p][j] + (1.0 - kBeta1) * gr;
          v[p][j] = kBeta2 * v[p][j] + (1.0 - kBeta2) * gr * gr;
          param.value[j] -= config.lr * (m[p][j] / c1) / (std::sqrt(v[p][j] / c2) + 1e-8);
        }
      }
      loss_sum += batch_loss;
    }
    if (config.log) config.log(epoch, loss_sum / static_cast<double>(order.size()));
  }
  g.zero_grad();

  std::set<std::string> frozen = d.frozen();
  for (const auto& name : d.extractor_parameters()) frozen.insert(name);
  d.set_frozen(std::move(frozen));
  d.metadata().defense = DefenseProvenance{config.epsilon,      config.inner_steps,
                                           config.inner_relative_step, config.outer_epochs,
                                           config.lr,           config.seed};
  return d;
}

double embedding_drift(const Detector& finetuned, const Detector& original,
                       std::span<const Tensor> images, const RobustFinetuneConfig& config) {
  require_probe(finetuned);
  require_probe(original);
  if (images.empty()) throw Error(ErrorKind::EmptyInput, "embedding drift needs images");
  double total = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Tensor target = embed(original, images[i]);
    const Tensor adv = embed_attack(finetuned, images[i], target, config.epsilon,
                                    config.inner_steps, config.inner_relative_step,
                                    mix_seed(config.seed ^ 0xd21f7, i));
    const Tensor e = embed(finetuned, adv);
    double s = 0.0;
    for (std::size_t k = 0; k < e.size(); ++k) s += (e[k] - target[k]) * (e[k] - target[k]);
    total += s;
  }
  return total / static_cast<double>(images.size());
}

}  // namespace aigi::defense
