// SPDX-License-Identifier: Apache-2.0

// Define-by-run reverse-mode differentiation over dense tensors.
//
// A Graph records every operation applied to its variables in creation order,
// which is a topological order by construction. backward() walks the record in
// reverse once and returns the gradient of a scalar loss for every leaf created
// with requires_grad, whether it is a model parameter or an input batch being
// attacked.
//
// Broadcasting is deliberately narrow: binary ops accept operands of identical
// shape, or a second operand whose shape equals the trailing axes of the first
// (a bias row added to every row, a rank-0 scalar scaling a matrix).

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "advlora/tensor.hpp"

namespace advlora::autodiff {

class Graph;

enum class OpKind : std::uint8_t {
  kLeaf,
  kMatmul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kScalarMul,
  kTanh,
  kRelu,
  kExp,
  kLog,
  kSum,
  kMean,
  kL2NormalizeRows,
  kLogSumExpRows,
  kDiagonal,
};

// Handle to a node of a Graph. Cheap to copy; only valid while its graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class GradientMap {
 public:
  explicit GradientMap(std::vector<std::optional<Tensor>> grads) : grads_(std::move(grads)) {}

  // Gradient with respect to a requires_grad leaf. Leaves the loss does not
  // depend on get zeros.
  const Tensor& operator[](Var leaf) const;
  bool contains(Var v) const { return v.id < grads_.size() && grads_[v.id].has_value(); }

 private:
  std::vector<std::optional<Tensor>> grads_;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var parameter(Tensor value) { return leaf(std::move(value), true); }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  OpKind kind(Var v) const { return nodes_[v.id].kind; }

  // Gradients of a rank-0 (or single element) loss for every requires_grad leaf.
  GradientMap backward(Var loss) const;

 private:
  friend Var record(OpKind kind, Var a, std::optional<Var> b, double scalar, Tensor value);

  struct Node {
    OpKind kind = OpKind::kLeaf;
    std::size_t inputs[2] = {0, 0};
    std::uint8_t num_inputs = 0;
    bool requires_grad = false;
    double scalar = 0.0;
    Tensor value;
  };

  std::vector<Node> nodes_;

  void accumulate_backward(const Node& node, const Tensor& grad, std::vector<std::optional<Tensor>>& grads) const;
};

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
// Hadamard product under the broadcast rules above.
Var mul(Var a, Var b);
Var scalar_mul(double c, Var a);
Var tanh(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var sum(Var a);
Var mean(Var a);
// Divides each row by its Euclidean norm. Rows with norm <= 1e-12 are rejected.
Var l2_normalize_rows(Var a);
// log(sum_j exp(a_ij)) per row, evaluated stably; [m x n] -> [m].
Var logsumexp_rows(Var a);
// Main diagonal of a square matrix; [n x n] -> [n].
Var diagonal(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double c, Var a) { return scalar_mul(c, a); }

}  // namespace advlora::autodiff
