#pragma once

// Minimal static-graph reverse-mode differentiation over dense tensors.
//
// Image-shaped activations use (channels, height, width) layout. Nodes are
// appended in topological order; an op may only reference earlier nodes.

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "aigi/tensor.hpp"

namespace aigi::grad {

using NodeId = std::size_t;

enum class OpKind {
  Input,
  Parameter,
  Linear,           // W (out, in) . x (in) + b (out)
  Conv2d,           // x (C,H,W), W (O,C,K,K), b (O)
  Relu,
  Sigmoid,
  AvgPool2d,        // non-overlapping windows
  Flatten,
  Add,
  Scale,
  BceWithLogits,    // binary cross-entropy of sigmoid(logit) against target
  SquaredDistance,  // sum of squared differences
};

const char* to_string(OpKind kind);

enum class Padding { Same, Valid };

struct OpAttrs {
  std::size_t stride = 1;
  Padding padding = Padding::Same;
  std::size_t pool_h = 1;
  std::size_t pool_w = 1;
  double factor = 1.0;
};

struct Node {
  OpKind kind = OpKind::Input;
  std::vector<NodeId> inputs;
  Shape shape;
  OpAttrs attrs;
  std::string name;
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor gradient;  // accumulator, same shape as value
};

class Graph {
 public:
  NodeId input(std::string name, Shape shape);
  NodeId parameter(std::string name, Tensor init);

  NodeId linear(NodeId x, NodeId weight, NodeId bias, std::string name = {});
  NodeId conv2d(NodeId x, NodeId weight, NodeId bias, std::size_t stride,
                Padding padding, std::string name = {});
  NodeId relu(NodeId x, std::string name = {});
  NodeId sigmoid(NodeId x, std::string name = {});
  NodeId avg_pool2d(NodeId x, std::size_t pool_h, std::size_t pool_w,
                    std::string name = {});
  NodeId flatten(NodeId x, std::string name = {});
  NodeId add(NodeId a, NodeId b, std::string name = {});
  NodeId scale(NodeId x, double factor, std::string name = {});
  NodeId bce_with_logits(NodeId logit, NodeId target, std::string name = {});
  NodeId squared_distance(NodeId a, NodeId b, std::string name = {});

  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const;
  const std::vector<NodeId>& inputs() const { return input_ids_; }
  const std::vector<NodeId>& parameters() const { return param_ids_; }

  std::optional<NodeId> find(std::string_view name) const;

  Parameter& param(NodeId id);
  const Parameter& param(NodeId id) const;
  Parameter& param(std::string_view name);
  const Parameter& param(std::string_view name) const;

  /// Total scalar count over all parameters.
  std::size_t parameter_count() const;

  void zero_grad();

 private:
  NodeId push(Node node);
  void check_id(NodeId id, NodeId for_node) const;

  std::vector<Node> nodes_;
  std::vector<NodeId> input_ids_;
  std::vector<NodeId> param_ids_;
  std::map<NodeId, std::size_t> param_slot_;
  std::vector<Parameter> params_;
  std::map<std::string, NodeId, std::less<>> by_name_;
};

using Feeds = std::map<NodeId, Tensor>;
/// Activation per node id; nodes that were not evaluated hold empty tensors.
using Activations = std::vector<Tensor>;

Activations forward_eval(const Graph& graph, const Feeds& feeds);

/// Evaluates only the ancestors of `targets`; only the inputs those
/// ancestors reach need feeds.
Activations forward_eval(const Graph& graph, const Feeds& feeds,
                         const std::vector<NodeId>& targets);

struct GradTargets {
  std::vector<NodeId> params;
  std::vector<NodeId> inputs;

  static GradTargets all(const Graph& graph);
  static GradTargets inputs_only(std::vector<NodeId> ids);
};

struct Gradients {
  std::map<std::string, Tensor> params;
  std::map<NodeId, Tensor> inputs;
};

Gradients backward_grad(const Graph& graph, NodeId loss, const Feeds& feeds);

/// Backward pass over precomputed activations; only the requested targets
/// and the nodes between them and the loss are differentiated.
Gradients backward_grad(const Graph& graph, NodeId loss,
                        const Activations& activations,
                        const GradTargets& targets);

struct GradCheckFailure {
  std::string what;  // parameter name or "input:<id>"
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::vector<GradCheckFailure> failures;

  bool passed() const { return failures.empty(); }
};

using GradientFn =
    std::function<Gradients(const Graph&, NodeId, const Feeds&)>;

/// Compares analytic gradients against central finite differences
/// (step 1e-5) for every parameter and fed input coordinate. Relative
/// error is |a - n| / max(|a|, |n|, 1e-3).
GradCheckReport grad_check(const Graph& graph, NodeId loss, const Feeds& feeds,
                           double tolerance, GradientFn gradient_fn = {});

}  // namespace aigi::grad
