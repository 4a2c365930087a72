#pragma once

// Reverse-mode differentiation over Tensors.
//
// A Tape owns an append-only list of nodes; each node stores its forward value,
// the ids of its inputs and a backward rule. Nodes are appended after their
// inputs, so the list is already in topological order and backward() is a
// single reverse sweep. A tape is single-use: call backward() once, read the
// gradients, then drop it.
//
// Broadcasting in the elementwise binary ops is limited to:
//   * identical shapes;
//   * either operand holding exactly one value (scalar broadcast);
//   * the right operand's shape equal to a trailing suffix of the left
//     operand's shape (e.g. a bias of shape [n] against [T, n]).
// Anything else raises ShapeError naming both shapes.

#include <cstddef>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "alignmamba/tensor.hpp"

namespace alignmamba {

class Tape;

/// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
};

class Tape {
 public:
  using Grad = std::vector<double>;
  // Receives the gradient of the node's output; accumulates into inputs via
  // Tape::accumulate.
  using BackwardFn = std::function<void(Tape&, const Grad&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);

  // Registers an op result. `rule` may be empty for non-differentiable ops.
  Var push(Tensor value, const char* op, std::vector<std::size_t> inputs,
           BackwardFn rule);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<std::size_t>& inputs(std::size_t id) const {
    return nodes_[id].inputs;
  }
  const char* op_name(std::size_t id) const { return nodes_[id].op; }

  // Adds `g` into the gradient buffer of node `id` (no-op for constants).
  void accumulate(std::size_t id, const Grad& g);
  // Mutable gradient buffer of node `id`, allocated and zeroed on first use.
  Grad& grad_buffer(std::size_t id);

  // Seeds d(loss)/d(loss) = 1 and runs every backward rule in reverse order.
  void backward(Var loss);

  // Gradient of a node after backward(); zeros if nothing flowed into it.
  Tensor grad(Var v) const;

  // Check applied to every pushed value: a non-finite value produced from
  // finite inputs raises NonFiniteError. On by default.
  void set_finite_check(bool on) noexcept { finite_check_ = on; }

 private:
  struct Node {
    Tensor value;
    const char* op = "";
    std::vector<std::size_t> inputs;
    BackwardFn rule;
    Grad grad;
    bool requires_grad = false;
    bool finite = true;
  };
  std::vector<Node> nodes_;
  bool finite_check_ = true;
  bool consumed_ = false;
};

// --- elementwise ---
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var exp(Var a);
Var log(Var a);
Var softplus(Var a);
Var sigmoid(Var a);
Var silu(Var a);
Var tanh(Var a);
Var sqrt(Var a);
Var abs(Var a);
Var square(Var a);

// --- linear algebra ---
Var matmul(Var a, Var b);        // [m,k] x [k,n]
Var transpose(Var a);            // rank 2
Var linear(Var x, Var w, Var b); // x[T,in] w[in,out] + b[out]

// --- reductions (empty axes = all) ---
Var sum(Var a, const std::vector<std::size_t>& axes = {});
Var mean(Var a, const std::vector<std::size_t>& axes = {});
Var softmax(Var a, std::size_t axis);
Var log_softmax(Var a, std::size_t axis);

// --- structure ---
Var concat(const std::vector<Var>& parts, std::size_t axis);
// One [begin, end) pair per dimension.
Var slice(Var a, const std::vector<std::pair<std::size_t, std::size_t>>& ranges);
Var reshape(Var a, Shape shape);
Var gather_rows(Var a, const std::vector<std::size_t>& rows);
// Places row i of `a` at row rows[i] of a zero [n_rows, cols] tensor.
Var scatter_rows(Var a, const std::vector<std::size_t>& rows, std::size_t n_rows);
// out[i, :] = a[i, :] * s[i]
Var scale_rows(Var a, Var s);

// --- sequence ops ---
// x[T,C], w[C,K], b[C]
Var causal_conv1d(Var x, Var w, Var b);
// u[T,D], delta[T,D], A[D,N], B[T,N], C[T,N] -> y[T,D]
Var selective_scan(Var u, Var delta, Var A, Var B, Var C);

// Inverted dropout; identity when p == 0.
Var dropout(Var a, double p, std::mt19937_64& rng);

}  // namespace alignmamba
