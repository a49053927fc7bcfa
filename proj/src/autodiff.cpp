// SPDX-License-Identifier: Apache-2.0

#include "advlora/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "advlora/error.hpp"

namespace advlora::autodiff {

namespace {

constexpr double kMinRowNorm = 1e-12;

// True when b's shape equals the trailing axes of a (including rank-0 b).
bool is_trailing(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  return std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()));
}

void check_broadcast(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape() || is_trailing(a.shape(), b.shape())) return;
  throw DimensionError(std::string(op) + ": shapes " + shape_to_string(a.shape()) + " and " +
                       shape_to_string(b.shape()) + " do not broadcast");
}

// Sums a tensor of shape `full` down to its trailing shape `target`.
Tensor reduce_to(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  Tensor out(target);
  const std::size_t inner = out.size();
  for (std::size_t i = 0; i < g.size(); ++i) out[i % inner] += g[i];
  return out;
}

void add_into(std::optional<Tensor>& slot, const Tensor& g) {
  if (!slot) {
    slot = g;
    return;
  }
  auto dst = slot->data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Graph& graph_of(Var a) {
  if (a.graph == nullptr) throw ContractError("variable is not attached to a graph");
  return *a.graph;
}

Graph& common_graph(Var a, Var b) {
  if (a.graph != b.graph) throw ContractError("operands belong to different graphs");
  return graph_of(a);
}

}  // namespace

const Tensor& Var::value() const { return graph_of(*this).value(*this); }

const Tensor& GradientMap::operator[](Var leaf) const {
  if (!contains(leaf)) throw ContractError("no gradient recorded for node " + std::to_string(leaf.id));
  return *grads_[leaf.id];
}

Var Graph::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.kind = OpKind::kLeaf;
  node.requires_grad = requires_grad;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var record(OpKind kind, Var a, std::optional<Var> b, double scalar, Tensor value) {
  Graph& g = graph_of(a);
  Graph::Node node;
  node.kind = kind;
  node.inputs[0] = a.id;
  node.num_inputs = 1;
  node.requires_grad = g.nodes_[a.id].requires_grad;
  if (b) {
    node.inputs[1] = b->id;
    node.num_inputs = 2;
    node.requires_grad = node.requires_grad || g.nodes_[b->id].requires_grad;
  }
  node.scalar = scalar;
  node.value = std::move(value);
  g.nodes_.push_back(std::move(node));
  return Var{&g, g.nodes_.size() - 1};
}

GradientMap Graph::backward(Var loss) const {
  if (loss.graph != this) throw ContractError("loss belongs to another graph");
  const Tensor& lv = nodes_[loss.id].value;
  if (lv.size() != 1) throw ContractError("backward needs a scalar loss, got " + shape_to_string(lv.shape()));

  std::vector<std::optional<Tensor>> grads(nodes_.size());
  grads[loss.id] = Tensor::full(lv.shape(), 1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!grads[i] || node.kind == OpKind::kLeaf) continue;
    if (node.requires_grad) accumulate_backward(node, *grads[i], grads);
    grads[i].reset();
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& node = nodes_[i];
    if (node.kind == OpKind::kLeaf && node.requires_grad) {
      if (!grads[i]) grads[i] = Tensor(node.value.shape());
    } else {
      grads[i].reset();
    }
  }
  return GradientMap(std::move(grads));
}

void Graph::accumulate_backward(const Node& node, const Tensor& g,
                                std::vector<std::optional<Tensor>>& grads) const {
  const std::size_t ia = node.inputs[0];
  const std::size_t ib = node.inputs[1];
  const Node& a = nodes_[ia];
  const bool need_a = a.requires_grad;
  const bool need_b = node.num_inputs == 2 && nodes_[ib].requires_grad;
  const Tensor& av = a.value;
  const Tensor& y = node.value;

  switch (node.kind) {
    case OpKind::kLeaf:
      break;
    case OpKind::kMatmul: {
      const Tensor& bv = nodes_[ib].value;
      if (need_a) add_into(grads[ia], advlora::matmul(g, advlora::transpose(bv)));
      if (need_b) add_into(grads[ib], advlora::matmul(advlora::transpose(av), g));
      break;
    }
    case OpKind::kTranspose:
      if (need_a) add_into(grads[ia], advlora::transpose(g));
      break;
    case OpKind::kAdd:
    case OpKind::kSub: {
      if (need_a) add_into(grads[ia], g);
      if (need_b) {
        Tensor gb = reduce_to(g, nodes_[ib].value.shape());
        if (node.kind == OpKind::kSub)
          for (double& v : gb.data()) v = -v;
        add_into(grads[ib], gb);
      }
      break;
    }
    case OpKind::kMul: {
      const Tensor& bv = nodes_[ib].value;
      const std::size_t inner = bv.size();
      if (need_a) {
        Tensor ga(av.shape());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * bv[i % inner];
        add_into(grads[ia], ga);
      }
      if (need_b) {
        Tensor full(av.shape());
        for (std::size_t i = 0; i < g.size(); ++i) full[i] = g[i] * av[i];
        add_into(grads[ib], reduce_to(full, bv.shape()));
      }
      break;
    }
    case OpKind::kScalarMul: {
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = node.scalar * g[i];
      add_into(grads[ia], ga);
      break;
    }
    case OpKind::kTanh: {
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * (1.0 - y[i] * y[i]);
      add_into(grads[ia], ga);
      break;
    }
    case OpKind::kRelu: {
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = av[i] > 0.0 ? g[i] : 0.0;
      add_into(grads[ia], ga);
      break;
    }
    case OpKind::kExp: {
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * y[i];
      add_into(grads[ia], ga);
      break;
    }
    case OpKind::kLog: {
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] / av[i];
      add_into(grads[ia], ga);
      break;
    }
    case OpKind::kSum:
    case OpKind::kMean: {
      const double scale = node.kind == OpKind::kMean ? 1.0 / static_cast<double>(av.size()) : 1.0;
      add_into(grads[ia], Tensor::full(av.shape(), g.item() * scale));
      break;
    }
    case OpKind::kL2NormalizeRows: {
      // dx = (g - y (y . g)) / |x| per row.
      const std::size_t m = av.rows(), n = av.cols();
      Tensor ga({m, n});
      for (std::size_t r = 0; r < m; ++r) {
        double norm = 0.0, dot = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
          norm += av(r, c) * av(r, c);
          dot += y(r, c) * g(r, c);
        }
        norm = std::sqrt(norm);
        for (std::size_t c = 0; c < n; ++c) ga(r, c) = (g(r, c) - y(r, c) * dot) / norm;
      }
      add_into(grads[ia], ga);
      break;
    }
    case OpKind::kLogSumExpRows: {
      const std::size_t m = av.rows(), n = av.cols();
      Tensor ga({m, n});
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) ga(r, c) = g[r] * std::exp(av(r, c) - y[r]);
      add_into(grads[ia], ga);
      break;
    }
    case OpKind::kDiagonal: {
      const std::size_t n = av.rows();
      Tensor ga({n, n});
      for (std::size_t i = 0; i < n; ++i) ga(i, i) = g[i];
      add_into(grads[ia], ga);
      break;
    }
  }
}

Var matmul(Var a, Var b) {
  common_graph(a, b);
  return record(OpKind::kMatmul, a, b, 0.0, advlora::matmul(a.value(), b.value()));
}

Var transpose(Var a) { return record(OpKind::kTranspose, a, std::nullopt, 0.0, advlora::transpose(a.value())); }

namespace {

template <typename F>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  const std::size_t inner = b.size();
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i % inner]);
  return out;
}

template <typename F>
Tensor unary(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace

Var add(Var a, Var b) {
  common_graph(a, b);
  if (a.shape() != b.shape() && is_trailing(b.shape(), a.shape())) std::swap(a, b);
  check_broadcast("add", a.value(), b.value());
  return record(OpKind::kAdd, a, b, 0.0, broadcast_binary(a.value(), b.value(), std::plus<>()));
}

Var sub(Var a, Var b) {
  common_graph(a, b);
  check_broadcast("sub", a.value(), b.value());
  return record(OpKind::kSub, a, b, 0.0, broadcast_binary(a.value(), b.value(), std::minus<>()));
}

Var mul(Var a, Var b) {
  common_graph(a, b);
  if (a.shape() != b.shape() && is_trailing(b.shape(), a.shape())) std::swap(a, b);
  check_broadcast("mul", a.value(), b.value());
  return record(OpKind::kMul, a, b, 0.0, broadcast_binary(a.value(), b.value(), std::multiplies<>()));
}

Var scalar_mul(double c, Var a) {
  return record(OpKind::kScalarMul, a, std::nullopt, c, unary(a.value(), [c](double v) { return c * v; }));
}

Var tanh(Var a) {
  return record(OpKind::kTanh, a, std::nullopt, 0.0, unary(a.value(), [](double v) { return std::tanh(v); }));
}

Var relu(Var a) {
  return record(OpKind::kRelu, a, std::nullopt, 0.0, unary(a.value(), [](double v) { return v > 0.0 ? v : 0.0; }));
}

Var exp(Var a) {
  Tensor y = unary(a.value(), [](double v) { return std::exp(v); });
  if (!y.all_finite()) throw DomainError("exp overflow");
  return record(OpKind::kExp, a, std::nullopt, 0.0, std::move(y));
}

Var log(Var a) {
  for (double v : a.value().data())
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  return record(OpKind::kLog, a, std::nullopt, 0.0, unary(a.value(), [](double v) { return std::log(v); }));
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return record(OpKind::kSum, a, std::nullopt, 0.0, Tensor::scalar(s));
}

Var mean(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return record(OpKind::kMean, a, std::nullopt, 0.0, Tensor::scalar(s / static_cast<double>(a.value().size())));
}

Var l2_normalize_rows(Var a) {
  const Tensor& x = a.value();
  if (x.rank() != 2) throw DimensionError("l2_normalize_rows expects a matrix, got " + shape_to_string(x.shape()));
  Tensor y(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double norm = 0.0;
    for (double v : x.row(r)) norm += v * v;
    norm = std::sqrt(norm);
    if (!(norm > kMinRowNorm)) throw DegenerateInputError("row " + std::to_string(r) + " has near-zero norm");
    auto out = y.row(r);
    auto in = x.row(r);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] = in[c] / norm;
  }
  return record(OpKind::kL2NormalizeRows, a, std::nullopt, 0.0, std::move(y));
}

Var logsumexp_rows(Var a) {
  const Tensor& x = a.value();
  if (x.rank() != 2 || x.cols() == 0) throw DimensionError("logsumexp_rows expects a non-empty matrix");
  Tensor y({x.rows()});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - mx);
    y[r] = mx + std::log(s);
  }
  return record(OpKind::kLogSumExpRows, a, std::nullopt, 0.0, std::move(y));
}

Var diagonal(Var a) {
  const Tensor& x = a.value();
  if (x.rank() != 2 || x.rows() != x.cols()) throw DimensionError("diagonal of non-square " + shape_to_string(x.shape()));
  Tensor y({x.rows()});
  for (std::size_t i = 0; i < x.rows(); ++i) y[i] = x(i, i);
  return record(OpKind::kDiagonal, a, std::nullopt, 0.0, std::move(y));
}

}  // namespace advlora::autodiff
