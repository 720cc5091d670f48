#include "aigi/graph.hpp"

#include <algorithm>
#include <cmath>

#include "aigi/error.hpp"

namespace aigi::grad {

const char* to_string(OpKind kind) {
  switch (kind) {
    case OpKind::Input: return "input";
    case OpKind::Parameter: return "parameter";
    case OpKind::Linear: return "linear";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::AvgPool2d: return "avg_pool2d";
    case OpKind::Flatten: return "flatten";
    case OpKind::Add: return "add";
    case OpKind::Scale: return "scale";
    case OpKind::BceWithLogits: return "bce_with_logits";
    case OpKind::SquaredDistance: return "squared_distance";
  }
  return "unknown";
}

namespace {

[[noreturn]] void shape_error(NodeId id, const std::string& msg) {
  throw Error(ErrorKind::ShapeMismatch,
              "node " + std::to_string(id) + ": " + msg);
}

struct ConvGeometry {
  std::size_t in_c, in_h, in_w;
  std::size_t out_c, out_h, out_w;
  std::size_t k, stride;
  std::size_t pad_top, pad_left;
};

ConvGeometry conv_geometry(const Shape& x, const Shape& w, std::size_t stride,
                           Padding padding) {
  ConvGeometry g{};
  g.in_c = x[0];
  g.in_h = x[1];
  g.in_w = x[2];
  g.out_c = w[0];
  g.k = w[2];
  g.stride = stride;
  if (padding == Padding::Same) {
    g.out_h = (g.in_h + stride - 1) / stride;
    g.out_w = (g.in_w + stride - 1) / stride;
    const std::size_t need_h = (g.out_h - 1) * stride + g.k;
    const std::size_t need_w = (g.out_w - 1) * stride + g.k;
    g.pad_top = need_h > g.in_h ? (need_h - g.in_h) / 2 : 0;
    g.pad_left = need_w > g.in_w ? (need_w - g.in_w) / 2 : 0;
  } else {
    g.out_h = (g.in_h - g.k) / stride + 1;
    g.out_w = (g.in_w - g.k) / stride + 1;
    g.pad_top = 0;
    g.pad_left = 0;
  }
  return g;
}

// Output columns ox for which ix = ox*stride + kx - pad lies in [0, in_w).
void valid_range(std::size_t offset_k, std::size_t pad, std::size_t stride,
                 std::size_t in_len, std::size_t out_len, std::size_t& lo,
                 std::size_t& hi) {
  // ix = ox*stride + offset_k - pad >= 0  =>  ox >= ceil((pad - offset_k)/stride)
  lo = 0;
  if (pad > offset_k) lo = (pad - offset_k + stride - 1) / stride;
  // ix < in_len  =>  ox*stride < in_len + pad - offset_k
  const std::size_t limit = in_len + pad;
  if (limit <= offset_k) {
    hi = lo;
    return;
  }
  hi = std::min(out_len, (limit - offset_k + stride - 1) / stride);
  if (hi < lo) hi = lo;
}

void conv_forward(const ConvGeometry& g, const double* x, const double* w,
                  const double* b, double* out) {
  const std::size_t out_plane = g.out_h * g.out_w;
  for (std::size_t o = 0; o < g.out_c; ++o) {
    double* op = out + o * out_plane;
    std::fill(op, op + out_plane, b[o]);
    for (std::size_t c = 0; c < g.in_c; ++c) {
      const double* xp = x + c * g.in_h * g.in_w;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        std::size_t oy_lo, oy_hi;
        valid_range(ky, g.pad_top, g.stride, g.in_h, g.out_h, oy_lo, oy_hi);
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const double wv = w[((o * g.in_c + c) * g.k + ky) * g.k + kx];
          std::size_t ox_lo, ox_hi;
          valid_range(kx, g.pad_left, g.stride, g.in_w, g.out_w, ox_lo, ox_hi);
          for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
            const std::size_t iy = oy * g.stride + ky - g.pad_top;
            const double* row = xp + iy * g.in_w + kx - g.pad_left;
            double* orow = op + oy * g.out_w;
            if (g.stride == 1) {
              for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) orow[ox] += wv * row[ox];
            } else {
              for (std::size_t ox = ox_lo; ox < ox_hi; ++ox)
                orow[ox] += wv * row[ox * g.stride];
            }
          }
        }
      }
    }
  }
}

// Accumulates into gx (may be null), gw and gb (may be null).
void conv_backward(const ConvGeometry& g, const double* x, const double* w,
                   const double* gout, double* gx, double* gw, double* gb) {
  const std::size_t out_plane = g.out_h * g.out_w;
  for (std::size_t o = 0; o < g.out_c; ++o) {
    const double* gp = gout + o * out_plane;
    if (gb) {
      double s = 0.0;
      for (std::size_t i = 0; i < out_plane; ++i) s += gp[i];
      gb[o] += s;
    }
    for (std::size_t c = 0; c < g.in_c; ++c) {
      const double* xp = x + c * g.in_h * g.in_w;
      double* gxp = gx ? gx + c * g.in_h * g.in_w : nullptr;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        std::size_t oy_lo, oy_hi;
        valid_range(ky, g.pad_top, g.stride, g.in_h, g.out_h, oy_lo, oy_hi);
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const std::size_t widx = ((o * g.in_c + c) * g.k + ky) * g.k + kx;
          const double wv = w[widx];
          std::size_t ox_lo, ox_hi;
          valid_range(kx, g.pad_left, g.stride, g.in_w, g.out_w, ox_lo, ox_hi);
          double acc = 0.0;
          for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
            const std::size_t iy = oy * g.stride + ky - g.pad_top;
            const std::size_t base = iy * g.in_w + kx - g.pad_left;
            const double* grow = gp + oy * g.out_w;
            const double* row = xp + base;
            if (g.stride == 1) {
              for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) acc += grow[ox] * row[ox];
              if (gxp) {
                double* gxrow = gxp + base;
                for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) gxrow[ox] += wv * grow[ox];
              }
            } else {
              for (std::size_t ox = ox_lo; ox < ox_hi; ++ox)
                acc += grow[ox] * row[ox * g.stride];
              if (gxp) {
                double* gxrow = gxp + base;
                for (std::size_t ox = ox_lo; ox < ox_hi; ++ox)
                  gxrow[ox * g.stride] += wv * grow[ox];
              }
            }
          }
          if (gw) gw[widx] += acc;
        }
      }
    }
  }
}

double sigmoid_value(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
double softplus(double z) {
  if (z > 0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

}  // namespace

// --- construction -----------------------------------------------------------

NodeId Graph::push(Node node) {
  const NodeId id = nodes_.size();
  if (!node.name.empty()) {
    if (by_name_.count(node.name)) {
      throw Error(ErrorKind::InvalidArgument, "duplicate node name " + node.name);
    }
    by_name_.emplace(node.name, id);
  }
  nodes_.push_back(std::move(node));
  return id;
}

void Graph::check_id(NodeId id, NodeId for_node) const {
  if (id >= nodes_.size()) {
    throw Error(ErrorKind::InvalidArgument,
                "node " + std::to_string(for_node) + " references unknown node " +
                    std::to_string(id));
  }
}

const Node& Graph::node(NodeId id) const {
  if (id >= nodes_.size()) {
    throw Error(ErrorKind::InvalidArgument, "unknown node " + std::to_string(id));
  }
  return nodes_[id];
}

NodeId Graph::input(std::string name, Shape shape) {
  if (shape.empty()) shape_error(nodes_.size(), "input needs a shape");
  Node n;
  n.kind = OpKind::Input;
  n.shape = std::move(shape);
  n.name = std::move(name);
  const NodeId id = push(std::move(n));
  input_ids_.push_back(id);
  return id;
}

NodeId Graph::parameter(std::string name, Tensor init) {
  if (name.empty()) {
    throw Error(ErrorKind::InvalidArgument, "parameters must be named");
  }
  Node n;
  n.kind = OpKind::Parameter;
  n.shape = init.shape();
  n.name = name;
  const NodeId id = push(std::move(n));
  param_ids_.push_back(id);
  param_slot_.emplace(id, params_.size());
  Tensor zero(init.shape());
  params_.push_back(Parameter{std::move(name), std::move(init), std::move(zero)});
  return id;
}

NodeId Graph::linear(NodeId x, NodeId weight, NodeId bias, std::string name) {
  const NodeId id = nodes_.size();
  check_id(x, id);
  check_id(weight, id);
  check_id(bias, id);
  const Shape& xs = nodes_[x].shape;
  const Shape& ws = nodes_[weight].shape;
  const Shape& bs = nodes_[bias].shape;
  if (xs.size() != 1) shape_error(id, "linear expects a 1-D input, got " + shape_str(xs));
  if (ws.size() != 2 || ws[1] != xs[0]) {
    shape_error(id, "linear weight " + shape_str(ws) + " incompatible with input " +
                        shape_str(xs));
  }
  if (bs != Shape{ws[0]}) shape_error(id, "linear bias shape " + shape_str(bs));
  Node n;
  n.kind = OpKind::Linear;
  n.inputs = {x, weight, bias};
  n.shape = {ws[0]};
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::conv2d(NodeId x, NodeId weight, NodeId bias, std::size_t stride,
                     Padding padding, std::string name) {
  const NodeId id = nodes_.size();
  check_id(x, id);
  check_id(weight, id);
  check_id(bias, id);
  const Shape& xs = nodes_[x].shape;
  const Shape& ws = nodes_[weight].shape;
  const Shape& bs = nodes_[bias].shape;
  if (xs.size() != 3) shape_error(id, "conv2d expects (C,H,W) input, got " + shape_str(xs));
  if (ws.size() != 4 || ws[1] != xs[0] || ws[2] != ws[3]) {
    shape_error(id, "conv2d weight " + shape_str(ws) + " incompatible with input " +
                        shape_str(xs));
  }
  if (bs != Shape{ws[0]}) shape_error(id, "conv2d bias shape " + shape_str(bs));
  if (stride == 0) shape_error(id, "conv2d stride must be positive");
  if (padding == Padding::Valid && (xs[1] < ws[2] || xs[2] < ws[2])) {
    shape_error(id, "valid conv2d kernel larger than input");
  }
  const ConvGeometry g = conv_geometry(xs, ws, stride, padding);
  Node n;
  n.kind = OpKind::Conv2d;
  n.inputs = {x, weight, bias};
  n.shape = {g.out_c, g.out_h, g.out_w};
  n.attrs.stride = stride;
  n.attrs.padding = padding;
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::relu(NodeId x, std::string name) {
  check_id(x, nodes_.size());
  Node n;
  n.kind = OpKind::Relu;
  n.inputs = {x};
  n.shape = nodes_[x].shape;
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::sigmoid(NodeId x, std::string name) {
  check_id(x, nodes_.size());
  Node n;
  n.kind = OpKind::Sigmoid;
  n.inputs = {x};
  n.shape = nodes_[x].shape;
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::avg_pool2d(NodeId x, std::size_t pool_h, std::size_t pool_w,
                         std::string name) {
  const NodeId id = nodes_.size();
  check_id(x, id);
  const Shape& xs = nodes_[x].shape;
  if (xs.size() != 3) shape_error(id, "avg_pool2d expects (C,H,W), got " + shape_str(xs));
  if (pool_h == 0 || pool_w == 0 || xs[1] % pool_h || xs[2] % pool_w) {
    shape_error(id, "pool window must tile the input " + shape_str(xs));
  }
  Node n;
  n.kind = OpKind::AvgPool2d;
  n.inputs = {x};
  n.shape = {xs[0], xs[1] / pool_h, xs[2] / pool_w};
  n.attrs.pool_h = pool_h;
  n.attrs.pool_w = pool_w;
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::flatten(NodeId x, std::string name) {
  check_id(x, nodes_.size());
  Node n;
  n.kind = OpKind::Flatten;
  n.inputs = {x};
  n.shape = {shape_size(nodes_[x].shape)};
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b, std::string name) {
  const NodeId id = nodes_.size();
  check_id(a, id);
  check_id(b, id);
  if (nodes_[a].shape != nodes_[b].shape) {
    shape_error(id, "add of " + shape_str(nodes_[a].shape) + " and " +
                        shape_str(nodes_[b].shape));
  }
  Node n;
  n.kind = OpKind::Add;
  n.inputs = {a, b};
  n.shape = nodes_[a].shape;
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::scale(NodeId x, double factor, std::string name) {
  check_id(x, nodes_.size());
  Node n;
  n.kind = OpKind::Scale;
  n.inputs = {x};
  n.shape = nodes_[x].shape;
  n.attrs.factor = factor;
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::bce_with_logits(NodeId logit, NodeId target, std::string name) {
  const NodeId id = nodes_.size();
  check_id(logit, id);
  check_id(target, id);
  if (shape_size(nodes_[logit].shape) != 1 || shape_size(nodes_[target].shape) != 1) {
    shape_error(id, "bce_with_logits expects scalar logit and target");
  }
  Node n;
  n.kind = OpKind::BceWithLogits;
  n.inputs = {logit, target};
  n.shape = {1};
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::squared_distance(NodeId a, NodeId b, std::string name) {
  const NodeId id = nodes_.size();
  check_id(a, id);
  check_id(b, id);
  if (nodes_[a].shape != nodes_[b].shape) {
    shape_error(id, "squared_distance of " + shape_str(nodes_[a].shape) + " and " +
                        shape_str(nodes_[b].shape));
  }
  Node n;
  n.kind = OpKind::SquaredDistance;
  n.inputs = {a, b};
  n.shape = {1};
  n.name = std::move(name);
  return push(std::move(n));
}

std::optional<NodeId> Graph::find(std::string_view name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

Parameter& Graph::param(NodeId id) {
  auto it = param_slot_.find(id);
  if (it == param_slot_.end()) {
    throw Error(ErrorKind::InvalidArgument,
                "node " + std::to_string(id) + " is not a parameter");
  }
  return params_[it->second];
}

const Parameter& Graph::param(NodeId id) const {
  return const_cast<Graph*>(this)->param(id);
}

Parameter& Graph::param(std::string_view name) {
  auto id = find(name);
  if (!id) throw Error(ErrorKind::InvalidArgument, "unknown parameter " + std::string(name));
  return param(*id);
}

const Parameter& Graph::param(std::string_view name) const {
  return const_cast<Graph*>(this)->param(name);
}

std::size_t Graph::parameter_count() const {
  std::size_t total = 0;
  for (const Parameter& p : params_) total += p.value.size();
  return total;
}

void Graph::zero_grad() {
  for (Parameter& p : params_) p.gradient.fill(0.0);
}

// --- forward ----------------------------------------------------------------

namespace {

void eval_node(const Graph& graph, NodeId id, Activations& act) {
  const Node& n = graph.node(id);
  Tensor out(n.shape);
  double* o = out.data().data();
  switch (n.kind) {
    case OpKind::Input:
    case OpKind::Parameter:
      return;  // handled by caller
    case OpKind::Linear: {
      const Tensor& x = act[n.inputs[0]];
      const Tensor& w = act[n.inputs[1]];
      const Tensor& b = act[n.inputs[2]];
      const std::size_t rows = n.shape[0];
      const std::size_t cols = x.size();
      for (std::size_t r = 0; r < rows; ++r) {
        double s = b[r];
        const double* wr = w.data().data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) s += wr[c] * x[c];
        o[r] = s;
      }
      break;
    }
    case OpKind::Conv2d: {
      const Tensor& x = act[n.inputs[0]];
      const Tensor& w = act[n.inputs[1]];
      const Tensor& b = act[n.inputs[2]];
      const ConvGeometry g = conv_geometry(x.shape(), w.shape(), n.attrs.stride,
                                           n.attrs.padding);
      conv_forward(g, x.data().data(), w.data().data(), b.data().data(), o);
      break;
    }
    case OpKind::Relu: {
      const Tensor& x = act[n.inputs[0]];
      for (std::size_t i = 0; i < x.size(); ++i) o[i] = x[i] > 0.0 ? x[i] : 0.0;
      break;
    }
    case OpKind::Sigmoid: {
      const Tensor& x = act[n.inputs[0]];
      for (std::size_t i = 0; i < x.size(); ++i) o[i] = sigmoid_value(x[i]);
      break;
    }
    case OpKind::AvgPool2d: {
      const Tensor& x = act[n.inputs[0]];
      const std::size_t c_n = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
      const std::size_t ph = n.attrs.pool_h, pw = n.attrs.pool_w;
      const std::size_t oh = h / ph, ow = w / pw;
      const double inv = 1.0 / static_cast<double>(ph * pw);
      for (std::size_t c = 0; c < c_n; ++c)
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) {
            double s = 0.0;
            for (std::size_t dy = 0; dy < ph; ++dy)
              for (std::size_t dx = 0; dx < pw; ++dx)
                s += x[(c * h + oy * ph + dy) * w + ox * pw + dx];
            o[(c * oh + oy) * ow + ox] = s * inv;
          }
      break;
    }
    case OpKind::Flatten: {
      const Tensor& x = act[n.inputs[0]];
      std::copy(x.data().begin(), x.data().end(), o);
      break;
    }
    case OpKind::Add: {
      const Tensor& a = act[n.inputs[0]];
      const Tensor& b = act[n.inputs[1]];
      for (std::size_t i = 0; i < a.size(); ++i) o[i] = a[i] + b[i];
      break;
    }
    case OpKind::Scale: {
      const Tensor& x = act[n.inputs[0]];
      for (std::size_t i = 0; i < x.size(); ++i) o[i] = n.attrs.factor * x[i];
      break;
    }
    case OpKind::BceWithLogits: {
      const double z = act[n.inputs[0]][0];
      const double y = act[n.inputs[1]][0];
      // -[y log s(z) + (1-y) log(1-s(z))] = softplus(z) - y z
      o[0] = softplus(z) - y * z;
      break;
    }
    case OpKind::SquaredDistance: {
      const Tensor& a = act[n.inputs[0]];
      const Tensor& b = act[n.inputs[1]];
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
      }
      o[0] = s;
      break;
    }
  }
  act[id] = std::move(out);
}

Activations run_forward(const Graph& graph, const Feeds& feeds,
                        const std::vector<bool>& needed) {
  Activations act(graph.size());
  for (NodeId id = 0; id < graph.size(); ++id) {
    if (!needed[id]) continue;
    const Node& n = graph.node(id);
    if (n.kind == OpKind::Input) {
      auto it = feeds.find(id);
      if (it == feeds.end()) {
        throw Error(ErrorKind::MissingFeed,
                    "missing feed for input node " + std::to_string(id) +
                        (n.name.empty() ? "" : " (" + n.name + ")"));
      }
      if (it->second.shape() != n.shape) {
        throw Error(ErrorKind::ShapeMismatch,
                    "node " + std::to_string(id) + ": feed shape " +
                        shape_str(it->second.shape()) + " does not match " +
                        shape_str(n.shape));
      }
      act[id] = it->second;
    } else if (n.kind == OpKind::Parameter) {
      act[id] = graph.param(id).value;
    } else {
      eval_node(graph, id, act);
    }
  }
  return act;
}

}  // namespace

Activations forward_eval(const Graph& graph, const Feeds& feeds) {
  return run_forward(graph, feeds, std::vector<bool>(graph.size(), true));
}

Activations forward_eval(const Graph& graph, const Feeds& feeds,
                         const std::vector<NodeId>& targets) {
  std::vector<bool> needed(graph.size(), false);
  for (NodeId t : targets) needed.at(t) = true;
  for (NodeId id = graph.size(); id-- > 0;) {
    if (!needed[id]) continue;
    for (NodeId in : graph.node(id).inputs) needed[in] = true;
  }
  return run_forward(graph, feeds, needed);
}

// --- backward ---------------------------------------------------------------

GradTargets GradTargets::all(const Graph& graph) {
  return GradTargets{graph.parameters(), graph.inputs()};
}

GradTargets GradTargets::inputs_only(std::vector<NodeId> ids) {
  return GradTargets{{}, std::move(ids)};
}

namespace {

void accumulate(Tensor& slot, const Tensor& delta) {
  if (slot.empty()) {
    slot = delta;
    return;
  }
  for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += delta[i];
}

Tensor& slot_for(Activations& adj, NodeId id, const Shape& shape) {
  if (adj[id].empty()) adj[id] = Tensor(shape);
  return adj[id];
}

}  // namespace

Gradients backward_grad(const Graph& graph, NodeId loss, const Feeds& feeds) {
  const GradTargets targets = GradTargets::all(graph);
  const Activations act = forward_eval(graph, feeds, {loss});
  return backward_grad(graph, loss, act, targets);
}

Gradients backward_grad(const Graph& graph, NodeId loss,
                        const Activations& act, const GradTargets& targets) {
  const Node& loss_node = graph.node(loss);
  if (shape_size(loss_node.shape) != 1) {
    throw Error(ErrorKind::NonScalarLoss,
                "loss node " + std::to_string(loss) + " has shape " +
                    shape_str(loss_node.shape));
  }
  if (act.size() != graph.size() || act[loss].empty()) {
    throw Error(ErrorKind::InvalidArgument, "activations do not cover the loss node");
  }

  std::vector<bool> wants(graph.size(), false);
  for (NodeId p : targets.params) wants.at(p) = true;
  for (NodeId i : targets.inputs) wants.at(i) = true;
  for (NodeId id = 0; id < graph.size(); ++id) {
    for (NodeId in : graph.node(id).inputs) {
      if (wants[in]) {
        wants[id] = true;
        break;
      }
    }
  }

  Activations adj(graph.size());
  adj[loss] = Tensor(loss_node.shape, 1.0);

  for (NodeId id = loss + 1; id-- > 0;) {
    if (adj[id].empty() || !wants[id]) continue;
    const Node& n = graph.node(id);
    const Tensor& g = adj[id];
    switch (n.kind) {
      case OpKind::Input:
      case OpKind::Parameter:
        break;
      case OpKind::Linear: {
        const NodeId xi = n.inputs[0], wi = n.inputs[1], bi = n.inputs[2];
        const Tensor& x = act[xi];
        const Tensor& w = act[wi];
        const std::size_t rows = n.shape[0], cols = x.size();
        if (wants[xi]) {
          Tensor& gx = slot_for(adj, xi, x.shape());
          for (std::size_t r = 0; r < rows; ++r) {
            const double* wr = w.data().data() + r * cols;
            for (std::size_t c = 0; c < cols; ++c) gx[c] += wr[c] * g[r];
          }
        }
        if (wants[wi]) {
          Tensor& gw = slot_for(adj, wi, w.shape());
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) gw[r * cols + c] += g[r] * x[c];
        }
        if (wants[bi]) {
          Tensor& gb = slot_for(adj, bi, graph.node(bi).shape);
          for (std::size_t r = 0; r < rows; ++r) gb[r] += g[r];
        }
        break;
      }
      case OpKind::Conv2d: {
        const NodeId xi = n.inputs[0], wi = n.inputs[1], bi = n.inputs[2];
        const Tensor& x = act[xi];
        const Tensor& w = act[wi];
        const ConvGeometry geo =
            conv_geometry(x.shape(), w.shape(), n.attrs.stride, n.attrs.padding);
        double* gx = wants[xi] ? slot_for(adj, xi, x.shape()).data().data() : nullptr;
        double* gw = wants[wi] ? slot_for(adj, wi, w.shape()).data().data() : nullptr;
        double* gb =
            wants[bi] ? slot_for(adj, bi, graph.node(bi).shape).data().data() : nullptr;
        conv_backward(geo, x.data().data(), w.data().data(), g.data().data(), gx, gw, gb);
        break;
      }
      case OpKind::Relu: {
        const NodeId xi = n.inputs[0];
        if (!wants[xi]) break;
        const Tensor& x = act[xi];
        Tensor& gx = slot_for(adj, xi, x.shape());
        for (std::size_t i = 0; i < x.size(); ++i)
          if (x[i] > 0.0) gx[i] += g[i];
        break;
      }
      case OpKind::Sigmoid: {
        const NodeId xi = n.inputs[0];
        if (!wants[xi]) break;
        const Tensor& y = act[id];
        Tensor& gx = slot_for(adj, xi, y.shape());
        for (std::size_t i = 0; i < y.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
        break;
      }
      case OpKind::AvgPool2d: {
        const NodeId xi = n.inputs[0];
        if (!wants[xi]) break;
        const Shape& xs = graph.node(xi).shape;
        Tensor& gx = slot_for(adj, xi, xs);
        const std::size_t c_n = xs[0], h = xs[1], w = xs[2];
        const std::size_t ph = n.attrs.pool_h, pw = n.attrs.pool_w;
        const std::size_t oh = h / ph, ow = w / pw;
        const double inv = 1.0 / static_cast<double>(ph * pw);
        for (std::size_t c = 0; c < c_n; ++c)
          for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const double v = g[(c * oh + oy) * ow + ox] * inv;
              for (std::size_t dy = 0; dy < ph; ++dy)
                for (std::size_t dx = 0; dx < pw; ++dx)
                  gx[(c * h + oy * ph + dy) * w + ox * pw + dx] += v;
            }
        break;
      }
      case OpKind::Flatten: {
        const NodeId xi = n.inputs[0];
        if (!wants[xi]) break;
        accumulate(adj[xi], g.reshaped(graph.node(xi).shape));
        break;
      }
      case OpKind::Add: {
        for (NodeId in : n.inputs)
          if (wants[in]) accumulate(adj[in], g);
        break;
      }
      case OpKind::Scale: {
        const NodeId xi = n.inputs[0];
        if (!wants[xi]) break;
        Tensor& gx = slot_for(adj, xi, n.shape);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += n.attrs.factor * g[i];
        break;
      }
      case OpKind::BceWithLogits: {
        const NodeId zi = n.inputs[0], yi = n.inputs[1];
        const double z = act[zi][0];
        const double y = act[yi][0];
        if (wants[zi]) slot_for(adj, zi, graph.node(zi).shape)[0] += g[0] * (sigmoid_value(z) - y);
        if (wants[yi]) slot_for(adj, yi, graph.node(yi).shape)[0] += g[0] * (-z);
        break;
      }
      case OpKind::SquaredDistance: {
        const NodeId ai = n.inputs[0], bi = n.inputs[1];
        const Tensor& a = act[ai];
        const Tensor& b = act[bi];
        if (wants[ai]) {
          Tensor& ga = slot_for(adj, ai, a.shape());
          for (std::size_t i = 0; i < a.size(); ++i) ga[i] += 2.0 * g[0] * (a[i] - b[i]);
        }
        if (wants[bi]) {
          Tensor& gb = slot_for(adj, bi, b.shape());
          for (std::size_t i = 0; i < a.size(); ++i) gb[i] -= 2.0 * g[0] * (a[i] - b[i]);
        }
        break;
      }
    }
  }

  Gradients out;
  for (NodeId p : targets.params) {
    const Parameter& param = graph.param(p);
    out.params[param.name] = adj[p].empty() ? Tensor(param.value.shape()) : adj[p];
  }
  for (NodeId i : targets.inputs) {
    out.inputs[i] = adj[i].empty() ? Tensor(graph.node(i).shape) : adj[i];
  }
  return out;
}

// --- gradient check ---------------------------------------------------------

GradCheckReport grad_check(const Graph& graph, NodeId loss, const Feeds& feeds,
                           double tolerance, GradientFn gradient_fn) {
  constexpr double kStep = 1e-5;
  constexpr double kFloor = 1e-3;
  if (!gradient_fn) {
    gradient_fn = [](const Graph& g, NodeId l, const Feeds& f) {
      return backward_grad(g, l, f);
    };
  }
  const Gradients analytic = gradient_fn(graph, loss, feeds);

  GradCheckReport report;
  report.tolerance = tolerance;

  auto record = [&](const std::string& what, std::size_t index, double a, double num) {
    const double denom = std::max({std::abs(a), std::abs(num), kFloor});
    const double rel = std::abs(a - num) / denom;
    ++report.coordinates;
    report.max_rel_error = std::max(report.max_rel_error, rel);
    if (!(rel <= tolerance)) report.failures.push_back({what, index, a, num, rel});
  };

  Graph probe = graph;
  auto loss_at = [&](const Graph& g, const Feeds& f) {
    return forward_eval(g, f, {loss})[loss].item();
  };

  for (NodeId p : graph.parameters()) {
    Parameter& param = probe.param(p);
    const Tensor& a = analytic.params.at(param.name);
    for (std::size_t i = 0; i < param.value.size(); ++i) {
      const double saved = param.value[i];
      param.value[i] = saved + kStep;
      const double up = loss_at(probe, feeds);
      param.value[i] = saved - kStep;
      const double down = loss_at(probe, feeds);
      param.value[i] = saved;
      record(param.name, i, a[i], (up - down) / (2.0 * kStep));
    }
  }

  Feeds shifted = feeds;
  for (const auto& [id, tensor] : feeds) {
    auto it = analytic.inputs.find(id);
    if (it == analytic.inputs.end()) continue;
    Tensor& t = shifted.at(id);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + kStep;
      const double up = loss_at(graph, shifted);
      t[i] = saved - kStep;
      const double down = loss_at(graph, shifted);
      t[i] = saved;
      record("input:" + std::to_string(id), i, it->second[i],
             (up - down) / (2.0 * kStep));
    }
  }
  return report;
}

}  // namespace aigi::grad
