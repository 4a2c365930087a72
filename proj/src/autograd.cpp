#include "alignmamba/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "alignmamba/kernels.hpp"

namespace alignmamba {

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  Node n;
  n.finite = value.all_finite();
  n.value = std::move(value);
  n.op = "constant";
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.finite = value.all_finite();
  n.value = std::move(value);
  n.op = "leaf";
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::push(Tensor value, const char* op, std::vector<std::size_t> inputs,
               BackwardFn rule) {
  Node n;
  n.op = op;
  bool inputs_finite = true;
  for (std::size_t i : inputs) {
    n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
    inputs_finite = inputs_finite && nodes_[i].finite;
  }
  n.finite = value.all_finite();
  if (finite_check_ && inputs_finite && !n.finite) {
    throw NonFiniteError(op, std::string("operation '") + op +
                                 "' produced a non-finite value of shape " +
                                 to_string(value.shape()) + " from finite inputs");
  }
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.rule = std::move(rule);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Tape::Grad& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::accumulate(std::size_t id, const Grad& g) {
  if (!nodes_[id].requires_grad) return;
  Grad& dst = grad_buffer(id);
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw Error("backward: loss belongs to another tape");
  if (consumed_) throw Error("backward: tape already consumed");
  if (value(loss.id).size() != 1) {
    throw ShapeError("backward: loss must be scalar-shaped, got " +
                     to_string(value(loss.id).shape()));
  }
  consumed_ = true;
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss.id)[0] = 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.rule && !n.grad.empty()) n.rule(*this, n.grad);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.empty()) return Tensor(n.value.shape());
  return Tensor(n.value.shape(), n.grad);
}

namespace {

enum class Bcast { same, a_scalar, b_scalar, b_suffix };

Bcast broadcast_mode(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Bcast::same;
  const std::size_t na = numel(a), nb = numel(b);
  if (nb == 1) return Bcast::b_scalar;
  if (na == 1) return Bcast::a_scalar;
  if (b.size() < a.size() && std::equal(b.rbegin(), b.rend(), a.rbegin())) {
    return Bcast::b_suffix;
  }
  throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(a) +
                   " with " + to_string(b));
}

// Elementwise binary op with partial derivatives da(x,y), db(x,y).
template <class F, class DA, class DB>
Var binary(Var a, Var b, const char* op, F f, DA da, DB db) {
  Tape& tape = *a.tape;
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Bcast mode = broadcast_mode(av.shape(), bv.shape(), op);
  const Shape& out_shape = mode == Bcast::a_scalar ? bv.shape() : av.shape();
  const std::size_t n = numel(out_shape);
  const std::size_t na = av.size(), nb = bv.size();
  auto ia = [=](std::size_t i) { return mode == Bcast::a_scalar ? 0 : i; };
  auto ib = [=](std::size_t i) {
    switch (mode) {
      case Bcast::same: return i;
      case Bcast::b_scalar: return std::size_t{0};
      case Bcast::b_suffix: return i % nb;
      default: return i;
    }
  };
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[ia(i)], bv[ib(i)]);
  const std::size_t a_id = a.id, b_id = b.id;
  return tape.push(
      Tensor(out_shape, std::move(out)), op, {a_id, b_id},
      [=](Tape& t, const Tape::Grad& g) {
        const Tensor& x = t.value(a_id);
        const Tensor& y = t.value(b_id);
        if (t.requires_grad(a_id)) {
          Tape::Grad ga(na, 0.0);
          for (std::size_t i = 0; i < n; ++i) ga[ia(i)] += g[i] * da(x[ia(i)], y[ib(i)]);
          t.accumulate(a_id, ga);
        }
        if (t.requires_grad(b_id)) {
          Tape::Grad gb(nb, 0.0);
          for (std::size_t i = 0; i < n; ++i) gb[ib(i)] += g[i] * db(x[ia(i)], y[ib(i)]);
          t.accumulate(b_id, gb);
        }
      });
}

// Elementwise unary op; `df(x, y)` is the derivative given input and output.
template <class F, class DF>
Var unary(Var a, const char* op, F f, DF df) {
  const Tensor& av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  const std::size_t a_id = a.id;
  Tape& tape = *a.tape;
  const std::size_t out_id = tape.size();
  return tape.push(Tensor(av.shape(), std::move(out)), op, {a_id},
                   [=](Tape& t, const Tape::Grad& g) {
                     const Tensor& x = t.value(a_id);
                     const Tensor& y = t.value(out_id);
                     Tape::Grad ga(g.size());
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * df(x[i], y[i]);
                     t.accumulate(a_id, ga);
                   });
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
  if (a.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + to_string(a.shape()));
  }
}

void require_same_tape(const Var& a, const Var& b, const char* op) {
  if (a.tape != b.tape) throw Error(std::string(op) + ": operands on different tapes");
}

// For each flat input index, the flat index of the reduced output.
std::vector<std::size_t> reduction_map(const Shape& shape,
                                       const std::vector<std::size_t>& axes,
                                       Shape& out_shape) {
  std::vector<bool> reduce(shape.size(), axes.empty());
  for (std::size_t ax : axes) {
    if (ax >= shape.size()) {
      throw ShapeError("reduction axis " + std::to_string(ax) +
                       " out of range for shape " + to_string(shape));
    }
    reduce[ax] = true;
  }
  out_shape.clear();
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (!reduce[d]) out_shape.push_back(shape[d]);
  }
  // output strides expressed per input dimension (0 for reduced dims)
  std::vector<std::size_t> ostride(shape.size(), 0);
  std::size_t s = 1;
  for (std::size_t d = shape.size(); d-- > 0;) {
    if (!reduce[d]) {
      ostride[d] = s;
      s *= shape[d];
    }
  }
  const std::size_t n = numel(shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(shape.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t o = 0;
    for (std::size_t d = 0; d < shape.size(); ++d) o += idx[d] * ostride[d];
    map[i] = o;
    for (std::size_t d = shape.size(); d-- > 0;) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
  return map;
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + to_string(shape));
  }
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t d = 0; d < axis; ++d) s.outer *= shape[d];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) s.inner *= shape[d];
  return s;
}

}  // namespace

Var add(Var a, Var b) {
  require_same_tape(a, b, "add");
  return binary(a, b, "add", [](double x, double y) { return x + y; },
                [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b, "sub");
  return binary(a, b, "sub", [](double x, double y) { return x - y; },
                [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b, "mul");
  return binary(a, b, "mul", [](double x, double y) { return x * y; },
                [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  require_same_tape(a, b, "div");
  return binary(a, b, "div", [](double x, double y) { return x / y; },
                [](double, double y) { return 1.0 / y; },
                [](double x, double y) { return -x / (y * y); });
}

Var neg(Var a) {
  return unary(a, "neg", [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var scale(Var a, double s) {
  return unary(a, "scale", [s](double x) { return s * x; },
               [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(a, "add_scalar", [s](double x) { return x + s; },
               [](double, double) { return 1.0; });
}

Var exp(Var a) {
  return unary(a, "exp", [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, "log", [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Var softplus(Var a) {
  return unary(a, "softplus", [](double x) { return kernels::softplus(x); },
               [](double x, double) { return kernels::sigmoid(x); });
}

Var sigmoid(Var a) {
  return unary(a, "sigmoid", [](double x) { return kernels::sigmoid(x); },
               [](double, double y) { return y * (1.0 - y); });
}

Var silu(Var a) {
  return unary(a, "silu", [](double x) { return kernels::silu(x); },
               [](double x, double) {
                 const double s = kernels::sigmoid(x);
                 return s * (1.0 + x * (1.0 - s));
               });
}

Var tanh(Var a) {
  return unary(a, "tanh", [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var sqrt(Var a) {
  return unary(a, "sqrt", [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

Var abs(Var a) {
  return unary(a, "abs", [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var square(Var a) {
  return unary(a, "square", [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  Tensor out({m, n});
  kernels::matmul<double>(a.value().data(), b.value().data(), out.data(), m, k, n);
  const std::size_t a_id = a.id, b_id = b.id;
  return a.tape->push(std::move(out), "matmul", {a_id, b_id},
                      [=](Tape& t, const Tape::Grad& g) {
                        if (t.requires_grad(a_id)) {
                          kernels::matmul_nt_acc<double>(g, t.value(b_id).data(),
                                                         t.grad_buffer(a_id), m, k, n);
                        }
                        if (t.requires_grad(b_id)) {
                          kernels::matmul_tn_acc<double>(t.value(a_id).data(), g,
                                                         t.grad_buffer(b_id), m, k, n);
                        }
                      });
}

Var transpose(Var a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  const Tensor& av = a.value();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  const std::size_t a_id = a.id;
  return a.tape->push(std::move(out), "transpose", {a_id},
                      [=](Tape& t, const Tape::Grad& g) {
                        auto& ga = t.grad_buffer(a_id);
                        for (std::size_t i = 0; i < r; ++i)
                          for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
                      });
}

Var linear(Var x, Var w, Var b) {
  require_same_tape(x, w, "linear");
  require_same_tape(x, b, "linear");
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  if (w.dim(0) != k || b.value().size() != n) {
    throw ShapeError("linear: input " + to_string(x.shape()) + ", weight " +
                     to_string(w.shape()) + ", bias " + to_string(b.shape()));
  }
  Tensor out({m, n});
  kernels::matmul<double>(x.value().data(), w.value().data(), out.data(), m, k, n);
  const auto& bv = b.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  const std::size_t x_id = x.id, w_id = w.id, b_id = b.id;
  return x.tape->push(std::move(out), "linear", {x_id, w_id, b_id},
                      [=](Tape& t, const Tape::Grad& g) {
                        if (t.requires_grad(x_id)) {
                          kernels::matmul_nt_acc<double>(g, t.value(w_id).data(),
                                                         t.grad_buffer(x_id), m, k, n);
                        }
                        if (t.requires_grad(w_id)) {
                          kernels::matmul_tn_acc<double>(t.value(x_id).data(), g,
                                                         t.grad_buffer(w_id), m, k, n);
                        }
                        if (t.requires_grad(b_id)) {
                          auto& gb = t.grad_buffer(b_id);
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                        }
                      });
}

Var sum(Var a, const std::vector<std::size_t>& axes) {
  Shape out_shape;
  auto map = reduction_map(a.shape(), axes, out_shape);
  const Tensor& av = a.value();
  Tensor out(out_shape);
  for (std::size_t i = 0; i < av.size(); ++i) out[map[i]] += av[i];
  const std::size_t a_id = a.id;
  return a.tape->push(std::move(out), "sum", {a_id},
                      [a_id, map = std::move(map)](Tape& t, const Tape::Grad& g) {
                        auto& ga = t.grad_buffer(a_id);
                        for (std::size_t i = 0; i < map.size(); ++i) ga[i] += g[map[i]];
                      });
}

Var mean(Var a, const std::vector<std::size_t>& axes) {
  Shape out_shape;
  reduction_map(a.shape(), axes, out_shape);
  const double count =
      static_cast<double>(a.value().size()) / static_cast<double>(numel(out_shape));
  return scale(sum(a, axes), 1.0 / count);
}

Var softmax(Var a, std::size_t axis) {
  const auto s = split_axis(a.shape(), axis, "softmax");
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = -INFINITY;
      for (std::size_t k = 0; k < s.len; ++k) mx = std::max(mx, av[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.len; ++k) {
        const double e = std::exp(av[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < s.len; ++k) out[base + k * s.inner] /= z;
    }
  }
  const std::size_t a_id = a.id;
  const std::size_t out_id = a.tape->size();
  return a.tape->push(std::move(out), "softmax", {a_id},
                      [=](Tape& t, const Tape::Grad& g) {
                        const Tensor& y = t.value(out_id);
                        auto& ga = t.grad_buffer(a_id);
                        for (std::size_t o = 0; o < s.outer; ++o) {
                          for (std::size_t in = 0; in < s.inner; ++in) {
                            const std::size_t base = o * s.len * s.inner + in;
                            double dot = 0.0;
                            for (std::size_t k = 0; k < s.len; ++k) {
                              const std::size_t i = base + k * s.inner;
                              dot += g[i] * y[i];
                            }
                            for (std::size_t k = 0; k < s.len; ++k) {
                              const std::size_t i = base + k * s.inner;
                              ga[i] += y[i] * (g[i] - dot);
                            }
                          }
                        }
                      });
}

Var log_softmax(Var a, std::size_t axis) {
  const auto s = split_axis(a.shape(), axis, "log_softmax");
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = -INFINITY;
      for (std::size_t k = 0; k < s.len; ++k) mx = std::max(mx, av[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.len; ++k) z += std::exp(av[base + k * s.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t k = 0; k < s.len; ++k) {
        out[base + k * s.inner] = av[base + k * s.inner] - lse;
      }
    }
  }
  const std::size_t a_id = a.id;
  const std::size_t out_id = a.tape->size();
  return a.tape->push(std::move(out), "log_softmax", {a_id},
                      [=](Tape& t, const Tape::Grad& g) {
                        const Tensor& y = t.value(out_id);
                        auto& ga = t.grad_buffer(a_id);
                        for (std::size_t o = 0; o < s.outer; ++o) {
                          for (std::size_t in = 0; in < s.inner; ++in) {
                            const std::size_t base = o * s.len * s.inner + in;
                            double gs = 0.0;
                            for (std::size_t k = 0; k < s.len; ++k) gs += g[base + k * s.inner];
                            for (std::size_t k = 0; k < s.len; ++k) {
                              const std::size_t i = base + k * s.inner;
                              ga[i] += g[i] - std::exp(y[i]) * gs;
                            }
                          }
                        }
                      });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  const auto s0 = split_axis(first, axis, "concat");
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> lens;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    require_same_tape(parts.front(), p, "concat");
    Shape probe = p.shape();
    if (probe.size() != first.size()) {
      throw ShapeError("concat: " + to_string(first) + " vs " + to_string(probe));
    }
    probe[axis] = first[axis];
    if (probe != first) {
      throw ShapeError("concat: " + to_string(first) + " vs " + to_string(p.shape()));
    }
    lens.push_back(p.dim(axis));
    ids.push_back(p.id);
    out_shape[axis] += p.dim(axis);
  }
  const std::size_t outer = s0.outer, inner = s0.inner, total = out_shape[axis];
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    const std::size_t block = lens[k] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.data().data() + o * block, block,
                  out.data().data() + (o * total + offset) * inner);
    }
    offset += lens[k];
  }
  return parts.front().tape->push(
      std::move(out), "concat", ids, [=](Tape& t, const Tape::Grad& g) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          const std::size_t block = lens[k] * inner;
          if (t.requires_grad(ids[k])) {
            auto& gk = t.grad_buffer(ids[k]);
            for (std::size_t o = 0; o < outer; ++o) {
              const double* src = g.data() + (o * total + off) * inner;
              double* dst = gk.data() + o * block;
              for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
            }
          }
          off += lens[k];
        }
      });
}

Var slice(Var a, const std::vector<std::pair<std::size_t, std::size_t>>& ranges) {
  const Shape& in_shape = a.shape();
  if (ranges.size() != in_shape.size()) {
    throw ShapeError("slice: " + std::to_string(ranges.size()) +
                     " ranges for shape " + to_string(in_shape));
  }
  Shape out_shape;
  for (std::size_t d = 0; d < ranges.size(); ++d) {
    const auto [b, e] = ranges[d];
    if (b > e || e > in_shape[d]) {
      throw ShapeError("slice: range [" + std::to_string(b) + ", " + std::to_string(e) +
                       ") invalid for dim " + std::to_string(d) + " of shape " +
                       to_string(in_shape));
    }
    out_shape.push_back(e - b);
  }
  const std::size_t n = numel(out_shape);
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> in_stride(in_shape.size(), 1);
  for (std::size_t d = in_shape.size(); d-- > 1;) in_stride[d - 1] = in_stride[d] * in_shape[d];
  std::vector<std::size_t> idx(out_shape.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < idx.size(); ++d) off += (idx[d] + ranges[d].first) * in_stride[d];
    src[i] = off;
    for (std::size_t d = idx.size(); d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  const Tensor& av = a.value();
  Tensor out(out_shape);
  for (std::size_t i = 0; i < n; ++i) out[i] = av[src[i]];
  const std::size_t a_id = a.id;
  return a.tape->push(std::move(out), "slice", {a_id},
                      [a_id, src = std::move(src)](Tape& t, const Tape::Grad& g) {
                        auto& ga = t.grad_buffer(a_id);
                        for (std::size_t i = 0; i < src.size(); ++i) ga[src[i]] += g[i];
                      });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t a_id = a.id;
  return a.tape->push(std::move(out), "reshape", {a_id},
                      [=](Tape& t, const Tape::Grad& g) { t.accumulate(a_id, g); });
}

Var gather_rows(Var a, const std::vector<std::size_t>& rows) {
  require_rank(a, 2, "gather_rows");
  const std::size_t r = a.dim(0), c = a.dim(1);
  const Tensor& av = a.value();
  Tensor out({rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= r) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) +
                       " out of range for shape " + to_string(a.shape()));
    }
    std::copy_n(av.data().data() + rows[i] * c, c, out.data().data() + i * c);
  }
  const std::size_t a_id = a.id;
  return a.tape->push(std::move(out), "gather_rows", {a_id},
                      [=](Tape& t, const Tape::Grad& g) {
                        auto& ga = t.grad_buffer(a_id);
                        for (std::size_t i = 0; i < rows.size(); ++i)
                          for (std::size_t j = 0; j < c; ++j) ga[rows[i] * c + j] += g[i * c + j];
                      });
}

Var scatter_rows(Var a, const std::vector<std::size_t>& rows, std::size_t n_rows) {
  require_rank(a, 2, "scatter_rows");
  const std::size_t c = a.dim(1);
  if (rows.size() != a.dim(0)) {
    throw ShapeError("scatter_rows: " + std::to_string(rows.size()) +
                     " indices for shape " + to_string(a.shape()));
  }
  const Tensor& av = a.value();
  Tensor out({n_rows, c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n_rows) throw ShapeError("scatter_rows: row index out of range");
    for (std::size_t j = 0; j < c; ++j) out[rows[i] * c + j] += av[i * c + j];
  }
  const std::size_t a_id = a.id;
  return a.tape->push(std::move(out), "scatter_rows", {a_id},
                      [=](Tape& t, const Tape::Grad& g) {
                        auto& ga = t.grad_buffer(a_id);
                        for (std::size_t i = 0; i < rows.size(); ++i)
                          for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[rows[i] * c + j];
                      });
}

Var scale_rows(Var a, Var s) {
  require_same_tape(a, s, "scale_rows");
  require_rank(a, 2, "scale_rows");
  const std::size_t r = a.dim(0), c = a.dim(1);
  if (s.value().size() != r) {
    throw ShapeError("scale_rows: " + to_string(a.shape()) + " with scales " +
                     to_string(s.shape()));
  }
  const Tensor& av = a.value();
  const Tensor& sv = s.value();
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = av[i * c + j] * sv[i];
  const std::size_t a_id = a.id, s_id = s.id;
  return a.tape->push(std::move(out), "scale_rows", {a_id, s_id},
                      [=](Tape& t, const Tape::Grad& g) {
                        const Tensor& x = t.value(a_id);
                        const Tensor& sc = t.value(s_id);
                        if (t.requires_grad(a_id)) {
                          auto& ga = t.grad_buffer(a_id);
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i * c + j] * sc[i];
                        }
                        if (t.requires_grad(s_id)) {
                          auto& gs = t.grad_buffer(s_id);
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < c; ++j) gs[i] += g[i * c + j] * x[i * c + j];
                        }
                      });
}

Var causal_conv1d(Var x, Var w, Var b) {
  require_same_tape(x, w, "causal_conv1d");
  require_same_tape(x, b, "causal_conv1d");
  require_rank(x, 2, "causal_conv1d");
  require_rank(w, 2, "causal_conv1d");
  const std::size_t steps = x.dim(0), ch = x.dim(1), width = w.dim(1);
  if (w.dim(0) != ch || b.value().size() != ch) {
    throw ShapeError("causal_conv1d: input " + to_string(x.shape()) + ", weight " +
                     to_string(w.shape()) + ", bias " + to_string(b.shape()));
  }
  Tensor out({steps, ch});
  kernels::causal_conv<double>(x.value().data(), w.value().data(), b.value().data(),
                               out.data(), steps, ch, width);
  const std::size_t x_id = x.id, w_id = w.id, b_id = b.id;
  return x.tape->push(
      std::move(out), "causal_conv1d", {x_id, w_id, b_id},
      [=](Tape& t, const Tape::Grad& g) {
        const Tensor& xv = t.value(x_id);
        const Tensor& wv = t.value(w_id);
        const bool gx_on = t.requires_grad(x_id), gw_on = t.requires_grad(w_id);
        Tape::Grad* gx = gx_on ? &t.grad_buffer(x_id) : nullptr;
        Tape::Grad* gw = gw_on ? &t.grad_buffer(w_id) : nullptr;
        for (std::size_t tt = 0; tt < steps; ++tt) {
          for (std::size_t k = 0; k < width; ++k) {
            const std::size_t lag = width - 1 - k;
            if (lag > tt) continue;
            const std::size_t src = (tt - lag) * ch;
            for (std::size_t c = 0; c < ch; ++c) {
              const double gv = g[tt * ch + c];
              if (gx) (*gx)[src + c] += gv * wv[c * width + k];
              if (gw) (*gw)[c * width + k] += gv * xv[src + c];
            }
          }
        }
        if (t.requires_grad(b_id)) {
          auto& gb = t.grad_buffer(b_id);
          for (std::size_t tt = 0; tt < steps; ++tt)
            for (std::size_t c = 0; c < ch; ++c) gb[c] += g[tt * ch + c];
        }
      });
}

Var selective_scan(Var u, Var delta, Var A, Var B, Var C) {
  for (const Var* v : {&delta, &A, &B, &C}) require_same_tape(u, *v, "selective_scan");
  for (const Var* v : {&u, &delta, &A, &B, &C}) require_rank(*v, 2, "selective_scan");
  const std::size_t steps = u.dim(0), ch = u.dim(1), state = A.dim(1);
  if (delta.shape() != u.shape() || A.dim(0) != ch || B.dim(0) != steps ||
      B.dim(1) != state || C.shape() != B.shape()) {
    throw ShapeError("selective_scan: u " + to_string(u.shape()) + ", delta " +
                     to_string(delta.shape()) + ", A " + to_string(A.shape()) + ", B " +
                     to_string(B.shape()) + ", C " + to_string(C.shape()));
  }
  const kernels::ScanDims dims{steps, ch, state};
  Tensor out({steps, ch});
  auto states = std::make_shared<std::vector<double>>(steps * ch * state);
  kernels::selective_scan<double>(dims, u.value().data(), delta.value().data(),
                                  A.value().data(), B.value().data(), C.value().data(),
                                  out.data(), *states);
  const std::size_t ids[5] = {u.id, delta.id, A.id, B.id, C.id};
  return u.tape->push(
      std::move(out), "selective_scan", {ids[0], ids[1], ids[2], ids[3], ids[4]},
      [=](Tape& t, const Tape::Grad& g) {
        std::vector<double> gu(steps * ch), gd(steps * ch), gA(ch * state),
            gB(steps * state), gC(steps * state);
        kernels::selective_scan_backward<double>(
            dims, t.value(ids[0]).data(), t.value(ids[1]).data(), t.value(ids[2]).data(),
            t.value(ids[3]).data(), t.value(ids[4]).data(), *states, g, gu, gd, gA, gB, gC);
        t.accumulate(ids[0], gu);
        t.accumulate(ids[1], gd);
        t.accumulate(ids[2], gA);
        t.accumulate(ids[3], gB);
        t.accumulate(ids[4], gC);
      });
}

Var dropout(Var a, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw Error("dropout: probability must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  const double inv = 1.0 / (1.0 - p);
  std::vector<double> mask(a.value().size());
  for (double& m : mask) m = keep(rng) ? inv : 0.0;
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = av[i] * mask[i];
  const std::size_t a_id = a.id;
  return a.tape->push(std::move(out), "dropout", {a_id},
                      [a_id, mask = std::move(mask)](Tape& t, const Tape::Grad& g) {
                        auto& ga = t.grad_buffer(a_id);
                        for (std::size_t i = 0; i < mask.size(); ++i) ga[i] += g[i] * mask[i];
                      });
}

}  // namespace alignmamba
