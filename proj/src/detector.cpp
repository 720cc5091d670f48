#include "aigi/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "aigi/checkpoint.hpp"
#include "aigi/degrade.hpp"
#include "aigi/error.hpp"
#include "aigi/rng.hpp"
#include "aigi/synthdata.hpp"
#include "json.hpp"

namespace aigi {

using grad::Graph;
using grad::NodeId;
using grad::Padding;
using grad::Shape;
using grad::Tensor;
using nlohmann::json;

const char* to_string(Family family) {
  return family == Family::FeatureProbe ? "feature_probe" : "compact_cnn";
}

Family family_from_string(const std::string& name) {
  if (name == "feature_probe") return Family::FeatureProbe;
  if (name == "compact_cnn") return Family::CompactCnn;
  throw Error(ErrorKind::InvalidArgument, "unknown detector family '" + name + "'");
}

Detector::Detector(Family family, Graph graph, DetectorNodes nodes,
                   std::set<std::string> frozen, Shape input_shape,
                   std::size_t feature_dim)
    : family_(family),
      graph_(std::move(graph)),
      nodes_(nodes),
      frozen_(std::move(frozen)),
      input_shape_(std::move(input_shape)),
      feature_dim_(feature_dim) {}

std::vector<NodeId> Detector::trainable_parameters() const {
  std::vector<NodeId> out;
  for (NodeId id : graph_.parameters()) {
    if (!is_frozen(graph_.param(id).name)) out.push_back(id);
  }
  return out;
}

std::size_t Detector::trainable_count() const {
  std::size_t total = 0;
  for (NodeId id : trainable_parameters()) total += graph_.param(id).value.size();
  return total;
}

std::vector<std::string> Detector::extractor_parameters() const {
  std::vector<std::string> out;
  for (NodeId id : graph_.parameters()) {
    const auto& name = graph_.param(id).name;
    if (name.rfind("extractor.", 0) == 0) out.push_back(name);
  }
  return out;
}

std::vector<std::string> Detector::head_parameters() const {
  std::vector<std::string> out;
  for (NodeId id : graph_.parameters()) {
    const auto& name = graph_.param(id).name;
    if (name.rfind("head.", 0) == 0) out.push_back(name);
  }
  return out;
}

// --- architectures ----------------------------------------------------------

namespace {

Tensor he_normal(Rng& rng, Shape shape, std::size_t fan_in) {
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = normal(rng);
  return t;
}

NodeId conv_layer(Graph& g, Rng& rng, NodeId x, const std::string& prefix,
                  std::size_t out_c, std::size_t k, std::size_t stride) {
  const std::size_t in_c = g.node(x).shape[0];
  auto w = g.parameter(prefix + ".w", he_normal(rng, {out_c, in_c, k, k}, in_c * k * k));
  auto b = g.parameter(prefix + ".b", Tensor({out_c}));
  return g.relu(g.conv2d(x, w, b, stride, Padding::Same));
}

void check_input_shape(const Shape& s) {
  if (s.size() != 3 || s[0] != 3 || s[1] % 4 || s[2] % 4) {
    throw Error(ErrorKind::InvalidArgument,
                "detector input must be (3,H,W) with H, W multiples of 4, got " +
                    grad::shape_str(s));
  }
}

struct Head {
  NodeId logit, score, loss;
};

Head add_head(Graph& g, Rng& rng, NodeId features, NodeId label) {
  const std::size_t dim = g.node(features).shape[0];
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  Tensor w({1, dim});
  for (double& v : w.data()) v = 0.1 * normal(rng);
  auto hw = g.parameter("head.w", std::move(w));
  auto hb = g.parameter("head.b", Tensor({1}));
  Head h;
  h.logit = g.linear(features, hw, hb, "logit");
  h.score = g.sigmoid(h.logit, "score");
  h.loss = g.bce_with_logits(h.logit, label, "loss");
  return h;
}

// Bias the first convolution so it sees inputs centred on mid-grey.
void center_first_layer(Graph& g, const std::string& prefix) {
  const Tensor& w = g.param(prefix + ".w").value;
  Tensor& b = g.param(prefix + ".b").value;
  const std::size_t per_out = w.size() / b.size();
  for (std::size_t o = 0; o < b.size(); ++o) {
    double s = 0.0;
    for (std::size_t i = 0; i < per_out; ++i) s += w[o * per_out + i];
    b[o] = -0.5 * s;
  }
}

// Fits the frozen feature normalizer over a fixed set of generic textures
// drawn from the detector seed: per-feature centering and one shared scale
// giving unit mean variance.
void standardize_features(Graph& g, NodeId image, NodeId pooled, const Shape& input_shape,
                          std::uint64_t seed) {
  synth::CorpusSpec generic;
  generic.n_real = 64;
  generic.n_fake = 1;
  generic.height = input_shape[1];
  generic.width = input_shape[2];
  generic.seed = mix_seed(seed, 0x6e6f726d);
  const std::size_t dim = g.node(pooled).shape[0];
  std::vector<double> sum(dim), sum_sq(dim);
  for (std::size_t i = 0; i < generic.n_real; ++i) {
    const Tensor x = synth::gen_real(generic, i).pixels;
    const Tensor f = grad::forward_eval(g, {{image, x}}, {pooled})[pooled];
    for (std::size_t k = 0; k < dim; ++k) {
      sum[k] += f[k];
      sum_sq[k] += f[k] * f[k];
    }
  }
  Tensor& w = g.param("extractor.norm.w").value;
  Tensor& b = g.param("extractor.norm.b").value;
  const double n = static_cast<double>(generic.n_real);
  double total_var = 0.0;
  for (std::size_t k = 0; k < dim; ++k) {
    const double mean = sum[k] / n;
    total_var += std::max(0.0, sum_sq[k] / n - mean * mean);
  }
  const double rms = std::sqrt(total_var / static_cast<double>(dim));
  const double scale = rms > 0.0 ? 1.0 / rms : 1.0;
  for (std::size_t k = 0; k < dim; ++k) {
    w[k * dim + k] = scale;
    b[k] = -sum[k] / n * scale;
  }
}

}  // namespace

Detector build_feature_probe(std::uint64_t seed, std::size_t feature_dim, Shape input_shape) {
  if (feature_dim < 8) {
    throw Error(ErrorKind::InvalidArgument, "feature_dim must be at least 8");
  }
  check_input_shape(input_shape);
  Rng rng = make_rng(seed, 0xfea7);
  Graph g;
  DetectorNodes n;
  n.image = g.input("image", input_shape);
  n.label = g.input("label", {1});

  auto h = conv_layer(g, rng, n.image, "extractor.conv1", 8, 3, 2);
  h = conv_layer(g, rng, h, "extractor.conv2", 16, 3, 2);
  h = conv_layer(g, rng, h, "extractor.conv3", feature_dim, 1, 1);
  const Shape hs = g.node(h).shape;
  h = g.avg_pool2d(h, hs[1], hs[2]);
  const NodeId pooled = g.flatten(h, "pooled");
  const NodeId norm_w = g.parameter("extractor.norm.w", Tensor({feature_dim, feature_dim}));
  const NodeId norm_b = g.parameter("extractor.norm.b", Tensor({feature_dim}));
  n.features = g.linear(pooled, norm_w, norm_b, "features");

  const Head head = add_head(g, rng, *n.features, n.label);
  n.logit = head.logit;
  n.score = head.score;
  n.loss = head.loss;

  n.embed_target = g.input("embed_target", {feature_dim});
  n.embed_loss = g.squared_distance(*n.features, *n.embed_target, "embed_loss");

  center_first_layer(g, "extractor.conv1");
  standardize_features(g, n.image, pooled, input_shape, seed);

  std::set<std::string> frozen;
  for (NodeId id : g.parameters()) {
    const auto& name = g.param(id).name;
    if (name.rfind("extractor.", 0) == 0) frozen.insert(name);
  }
  Detector d(Family::FeatureProbe, std::move(g), n, std::move(frozen), std::move(input_shape),
             feature_dim);
  d.metadata().seed = seed;
  return d;
}

Detector build_compact_cnn(std::uint64_t seed, Shape input_shape) {
  check_input_shape(input_shape);
  Rng rng = make_rng(seed, 0xc0c0);
  Graph g;
  DetectorNodes n;
  n.image = g.input("image", input_shape);
  n.label = g.input("label", {1});

  // Full-resolution first layer; downsampling starts at the second conv.
  auto h = conv_layer(g, rng, n.image, "conv1", 8, 3, 1);
  h = conv_layer(g, rng, h, "conv2", 8, 3, 2);
  h = conv_layer(g, rng, h, "conv3", 16, 3, 2);
  const Shape hs = g.node(h).shape;
  h = g.avg_pool2d(h, hs[1], hs[2]);
  auto pooled = g.flatten(h, "pooled");

  const Head head = add_head(g, rng, pooled, n.label);
  n.logit = head.logit;
  n.score = head.score;
  n.loss = head.loss;

  Detector d(Family::CompactCnn, std::move(g), n, {}, std::move(input_shape), 16);
  d.metadata().seed = seed;
  return d;
}

// --- scoring ----------------------------------------------------------------

namespace {

void check_image(const Detector& d, const Tensor& image) {
  if (image.shape() != d.input_shape()) {
    throw Error(ErrorKind::ShapeMismatch, "image shape " + grad::shape_str(image.shape()) +
                                              " does not match detector input " +
                                              grad::shape_str(d.input_shape()));
  }
}

void require_probe(const Detector& d, const char* op) {
  if (d.family() != Family::FeatureProbe || !d.nodes().features) {
    throw Error(ErrorKind::WrongFamily,
                std::string(op) + " needs a feature_probe detector, got " + to_string(d.family()));
  }
}

}  // namespace

double score(const Detector& d, const Tensor& image) {
  check_image(d, image);
  const NodeId s = d.nodes().score;
  return grad::forward_eval(d.graph(), {{d.nodes().image, image}}, {s})[s].item();
}

std::vector<double> score_all(const Detector& d, std::span<const LabeledImage> images) {
  std::vector<double> out;
  out.reserve(images.size());
  for (const auto& im : images) out.push_back(score(d, im.pixels));
  return out;
}

Label label_for_score(double s, double threshold) {
  return s >= threshold ? Label::Fake : Label::Real;
}

Label predict_label(const Detector& d, const Tensor& image, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "threshold must lie in (0,1)");
  }
  return label_for_score(score(d, image), threshold);
}

LossGradient loss_and_input_gradient(const Detector& d, const Tensor& image, Label label) {
  check_image(d, image);
  const auto& n = d.nodes();
  grad::Feeds feeds{{n.image, image}, {n.label, Tensor::scalar(label_value(label))}};
  const auto act = grad::forward_eval(d.graph(), feeds, {n.loss, n.score});
  auto grads = grad::backward_grad(d.graph(), n.loss, act, grad::GradTargets::inputs_only({n.image}));
  return {act[n.loss].item(), act[n.score].item(), std::move(grads.inputs.at(n.image))};
}

double loss_value(const Detector& d, const Tensor& image, Label label) {
  check_image(d, image);
  const auto& n = d.nodes();
  grad::Feeds feeds{{n.image, image}, {n.label, Tensor::scalar(label_value(label))}};
  return grad::forward_eval(d.graph(), feeds, {n.loss})[n.loss].item();
}

Tensor embed(const Detector& d, const Tensor& image) {
  require_probe(d, "embed");
  check_image(d, image);
  const NodeId f = *d.nodes().features;
  return grad::forward_eval(d.graph(), {{d.nodes().image, image}}, {f})[f];
}

LossGradient embedding_loss_and_input_gradient(const Detector& d, const Tensor& image,
                                               const Tensor& target) {
  require_probe(d, "embedding loss");
  check_image(d, image);
  const auto& n = d.nodes();
  grad::Feeds feeds{{n.image, image}, {*n.embed_target, target}};
  const auto act = grad::forward_eval(d.graph(), feeds, {*n.embed_loss});
  auto grads = grad::backward_grad(d.graph(), *n.embed_loss, act,
                                   grad::GradTargets::inputs_only({n.image}));
  return {act[*n.embed_loss].item(), 0.0, std::move(grads.inputs.at(n.image))};
}

// --- training ---------------------------------------------------------------

namespace {

Tensor augment_image(const Tensor& image, const AugmentFlags& flags, Rng& rng) {
  Tensor out = image;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (flags.flip && unit(rng) < 0.5) {
    const std::size_t c_n = out.shape()[0], h = out.shape()[1], w = out.shape()[2];
    for (std::size_t c = 0; c < c_n; ++c)
      for (std::size_t y = 0; y < h; ++y)
        std::reverse(out.data().begin() + static_cast<long>((c * h + y) * w),
                     out.data().begin() + static_cast<long>((c * h + y + 1) * w));
  }
  if (flags.jpeg && unit(rng) < 0.5) {
    std::uniform_int_distribution<int> quality(30, 95);
    out = degrade::jpeg_roundtrip(out, quality(rng));
  }
  if (flags.noise) {
    const double std_dev = unit(rng) * 3.0 / 255.0;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : out.data()) v = std::clamp(v + std_dev * normal(rng), 0.0, 1.0);
  }
  return out;
}

}  // namespace

Detector train_detector(Detector d, std::span<const LabeledImage> train,
                        const TrainOptions& options) {
  if (!(options.lr > 0.0)) throw Error(ErrorKind::InvalidArgument, "learning rate must be > 0");
  if (options.batch_size == 0) throw Error(ErrorKind::InvalidArgument, "batch size must be > 0");
  const bool has_real = std::any_of(train.begin(), train.end(),
                                    [](const auto& im) { return im.label == Label::Real; });
  const bool has_fake = std::any_of(train.begin(), train.end(),
                                    [](const auto& im) { return im.label == Label::Fake; });
  if (!has_real || !has_fake) {
    throw Error(ErrorKind::SingleClass, "training set must contain both labels");
  }
  if (options.epochs <= 0) return d;

  const auto& n = d.nodes();
  Graph& g = d.graph();
  const auto trainable = d.trainable_parameters();
  const grad::GradTargets targets{trainable, {}};

  Rng rng = make_rng(options.seed, 0x7a1);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      g.zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const LabeledImage& sample = train[order[k]];
        Tensor x = options.augment.any() ? augment_image(sample.pixels, options.augment, rng)
                                         : sample.pixels;
        grad::Feeds feeds{{n.image, std::move(x)},
                          {n.label, Tensor::scalar(label_value(sample.label))}};
        const auto act = grad::forward_eval(g, feeds, {n.loss});
        const double loss = act[n.loss].item();
        if (!std::isfinite(loss)) {
          throw Error(ErrorKind::TrainingDiverged,
                      "non-finite training loss in epoch " + std::to_string(epoch));
        }
        epoch_loss += loss;
        const auto grads = grad::backward_grad(g, n.loss, act, targets);
        for (NodeId id : trainable) {
          auto& p = g.param(id);
          const Tensor& gr = grads.params.at(p.name);
          for (std::size_t i = 0; i < gr.size(); ++i) p.gradient[i] += gr[i];
        }
      }
      const double step = options.lr / static_cast<double>(end - start);
      for (NodeId id : trainable) {
        auto& p = g.param(id);
        for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] -= step * p.gradient[i];
      }
    }
    d.metadata().loss_history.push_back(epoch_loss / static_cast<double>(train.size()));
  }
  g.zero_grad();
  d.metadata().train_seed = options.seed;
  d.metadata().epochs += options.epochs;
  d.metadata().lr = options.lr;
  d.metadata().augment = options.augment;
  return d;
}

// --- persistence ------------------------------------------------------------

namespace {

json metadata_json(const Detector& d) {
  const auto& m = d.metadata();
  json j = {{"family", to_string(d.family())},
            {"seed", m.seed},
            {"feature_dim", d.feature_dim()},
            {"input_shape", d.input_shape()},
            {"threshold", d.threshold()},
            {"train_seed", m.train_seed},
            {"epochs", m.epochs},
            {"lr", m.lr},
            {"augment", {{"noise", m.augment.noise}, {"flip", m.augment.flip}, {"jpeg", m.augment.jpeg}}},
            {"loss_history", m.loss_history},
            {"frozen", d.frozen()}};
  if (m.defense) {
    const auto& p = *m.defense;
    j["defense"] = {{"epsilon", p.epsilon},       {"inner_steps", p.inner_steps},
                    {"inner_relative_step", p.inner_relative_step},
                    {"outer_epochs", p.outer_epochs}, {"lr", p.lr}, {"seed", p.seed}};
  }
  return j;
}

}  // namespace

void save_detector(const std::filesystem::path& path, const Detector& d) {
  grad::save_checkpoint(path, grad::snapshot(d.graph(), metadata_json(d).dump()));
}

Detector load_detector(const std::filesystem::path& path) {
  const auto ck = grad::load_checkpoint(path);
  json j;
  try {
    j = json::parse(ck.header);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, "detector checkpoint header is not JSON: " + std::string(e.what()));
  }
  try {
    const Family family = family_from_string(j.at("family").get<std::string>());
    const auto seed = j.at("seed").get<std::uint64_t>();
    const auto shape = j.at("input_shape").get<Shape>();
    Detector d = family == Family::FeatureProbe
                     ? build_feature_probe(seed, j.at("feature_dim").get<std::size_t>(), shape)
                     : build_compact_cnn(seed, shape);
    grad::restore(d.graph(), ck);
    d.set_frozen(j.at("frozen").get<std::set<std::string>>());
    auto& m = d.metadata();
    m.train_seed = j.at("train_seed").get<std::uint64_t>();
    m.epochs = j.at("epochs").get<int>();
    m.lr = j.at("lr").get<double>();
    m.augment.noise = j.at("augment").at("noise").get<bool>();
    m.augment.flip = j.at("augment").at("flip").get<bool>();
    m.augment.jpeg = j.at("augment").at("jpeg").get<bool>();
    m.loss_history = j.at("loss_history").get<std::vector<double>>();
    if (j.contains("defense")) {
      const auto& p = j.at("defense");
      m.defense = DefenseProvenance{p.at("epsilon").get<double>(),
                                    p.at("inner_steps").get<int>(),
                                    p.at("inner_relative_step").get<double>(),
                                    p.at("outer_epochs").get<int>(),
                                    p.at("lr").get<double>(),
                                    p.at("seed").get<std::uint64_t>()};
    }
    return d;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, "malformed detector header: " + std::string(e.what()));
  }
}

}  // namespace aigi
