#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "alignmamba/align.hpp"
#include "alignmamba/moe.hpp"
#include "alignmamba/ssm.hpp"

namespace alignmamba::testing {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

namespace {

// Fixed weights turn any output into a scalar whose gradient touches every
// element with a different coefficient.
Var reduce(Var out) {
  std::mt19937_64 rng(12345);
  Var w = out.tape->constant(random_tensor(out.shape(), rng, 0.5, 1.5));
  return sum(mul(out, w));
}

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  std::vector<double> diff(analytic.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = analytic[i] - numeric[i];
  const double scale = std::max({norm(analytic), norm(numeric), 1e-12});
  return norm(diff) / scale;
}

double eval_case(const GradCase& c, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t));
  return reduce(c.fn(tape, vars)).value().item();
}

// Five-point central stencil: truncation error O(h^4), so a step large enough
// to keep cancellation error small stays accurate.
template <class F>
double central_difference(double& x, double h, F&& f) {
  const double keep = x;
  double v[4];
  const double offsets[4] = {-2.0, -1.0, 1.0, 2.0};
  for (int j = 0; j < 4; ++j) {
    x = keep + offsets[j] * h;
    v[j] = f();
  }
  x = keep;
  return (v[0] - 8.0 * v[1] + 8.0 * v[2] - v[3]) / (12.0 * h);
}

}  // namespace

double max_rel_error(const GradCase& c) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : c.inputs) vars.push_back(tape.leaf(t));
  Var loss = reduce(c.fn(tape, vars));
  tape.backward(loss);

  double worst = 0.0;
  auto inputs = c.inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor g = tape.grad(vars[k]);
    std::vector<double> numeric(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      double& x = inputs[k][i];
      numeric[i] = central_difference(x, c.step, [&] { return eval_case(c, inputs); });
    }
    worst = std::max(worst, rel_error(g.values(), numeric));
  }
  return worst;
}

std::vector<GradCase> op_cases() {
  std::mt19937_64 rng(2024);
  auto r = [&](Shape s, double lo = -1.0, double hi = 1.0) {
    return random_tensor(std::move(s), rng, lo, hi);
  };
  auto unary_case = [&](std::string name, Var (*f)(Var), double lo = -2.0, double hi = 2.0) {
    return GradCase{std::move(name), {r({3, 4}, lo, hi)},
                    [f](Tape&, const std::vector<Var>& v) { return f(v[0]); }};
  };

  std::vector<GradCase> cases;
  cases.push_back({"add", {r({3, 4}), r({3, 4})},
                   [](Tape&, const auto& v) { return add(v[0], v[1]); }});
  cases.push_back({"add_bias_broadcast", {r({3, 4}), r({4})},
                   [](Tape&, const auto& v) { return add(v[0], v[1]); }});
  cases.push_back({"add_scalar_broadcast", {r({3, 4}), r({1})},
                   [](Tape&, const auto& v) { return add(v[0], v[1]); }});
  cases.push_back({"sub", {r({3, 4}), r({4})},
                   [](Tape&, const auto& v) { return sub(v[0], v[1]); }});
  cases.push_back({"mul", {r({3, 4}), r({3, 4})},
                   [](Tape&, const auto& v) { return mul(v[0], v[1]); }});
  cases.push_back({"div", {r({3, 4}), r({3, 4}, 0.5, 2.0)},
                   [](Tape&, const auto& v) { return div(v[0], v[1]); }});
  cases.push_back(unary_case("neg", &neg));
  cases.push_back({"scale", {r({3, 4})}, [](Tape&, const auto& v) { return scale(v[0], -1.7); }});
  cases.push_back(
      {"add_scalar", {r({3, 4})}, [](Tape&, const auto& v) { return add_scalar(v[0], 0.3); }});
  cases.push_back(unary_case("exp", &exp));
  cases.push_back(unary_case("log", &log, 0.2, 3.0));
  cases.push_back(unary_case("softplus", &softplus, -4.0, 4.0));
  cases.push_back(unary_case("sigmoid", &sigmoid, -4.0, 4.0));
  cases.push_back(unary_case("silu", &silu, -4.0, 4.0));
  cases.push_back(unary_case("tanh", &tanh));
  cases.push_back(unary_case("sqrt", &sqrt, 0.2, 3.0));
  cases.push_back(unary_case("abs", &abs, 0.1, 2.0));
  cases.back().inputs[0][3] = -0.7;
  cases.back().inputs[0][7] = -1.3;
  cases.push_back(unary_case("square", &square));
  cases.push_back({"matmul", {r({3, 5}), r({5, 2})},
                   [](Tape&, const auto& v) { return matmul(v[0], v[1]); }});
  cases.push_back({"transpose", {r({3, 5})}, [](Tape&, const auto& v) { return transpose(v[0]); }});
  cases.push_back({"linear", {r({4, 3}), r({3, 5}), r({5})},
                   [](Tape&, const auto& v) { return linear(v[0], v[1], v[2]); }});
  cases.push_back({"sum_all", {r({3, 4})}, [](Tape&, const auto& v) { return sum(v[0]); }});
  cases.push_back({"sum_axis0", {r({3, 4})}, [](Tape&, const auto& v) { return sum(v[0], {0}); }});
  cases.push_back(
      {"mean_axis1", {r({2, 3, 4})}, [](Tape&, const auto& v) { return mean(v[0], {1}); }});
  cases.push_back({"mean_all", {r({3, 4})}, [](Tape&, const auto& v) { return mean(v[0]); }});
  cases.push_back(
      {"softmax", {r({3, 4}, -3, 3)}, [](Tape&, const auto& v) { return softmax(v[0], 1); }});
  cases.push_back({"log_softmax", {r({3, 4}, -3, 3)},
                   [](Tape&, const auto& v) { return log_softmax(v[0], 0); }});
  cases.push_back({"concat", {r({2, 3}), r({4, 3})},
                   [](Tape&, const auto& v) { return concat({v[0], v[1]}, 0); }});
  cases.push_back({"concat_axis1", {r({2, 3}), r({2, 1})},
                   [](Tape&, const auto& v) { return concat({v[0], v[1]}, 1); }});
  cases.push_back({"slice", {r({4, 5})},
                   [](Tape&, const auto& v) { return slice(v[0], {{1, 3}, {0, 4}}); }});
  cases.push_back(
      {"reshape", {r({3, 4})}, [](Tape&, const auto& v) { return reshape(v[0], {2, 6}); }});
  cases.push_back({"gather_rows", {r({4, 3})},
                   [](Tape&, const auto& v) { return gather_rows(v[0], {2, 0, 2, 3}); }});
  cases.push_back({"scatter_rows", {r({3, 2})},
                   [](Tape&, const auto& v) { return scatter_rows(v[0], {4, 1, 0}, 5); }});
  cases.push_back({"scale_rows", {r({4, 3}), r({4})},
                   [](Tape&, const auto& v) { return scale_rows(v[0], v[1]); }});
  cases.push_back({"causal_conv1d", {r({6, 3}), r({3, 4}), r({3})},
                   [](Tape&, const auto& v) { return causal_conv1d(v[0], v[1], v[2]); }});
  cases.push_back({"selective_scan",
                   {r({7, 3}), r({7, 3}, 0.05, 0.8), r({3, 4}, -2.0, -0.2), r({7, 4}), r({7, 4})},
                   [](Tape&, const auto& v) { return selective_scan(v[0], v[1], v[2], v[3], v[4]); }});
  cases.push_back({"dropout", {r({4, 5})}, [](Tape&, const auto& v) {
                     std::mt19937_64 mask_rng(99);  // same mask on every evaluation
                     return dropout(v[0], 0.3, mask_rng);
                   }});
  cases.push_back({"mmd_loss", {r({5, 3}), r({4, 3})},
                   [](Tape&, const auto& v) { return align::mmd_loss(v[0], v[1], 1.0 / 3.0); }});
  cases.push_back({"mmd_loss_unbiased", {r({5, 3}), r({4, 3})}, [](Tape&, const auto& v) {
                     return align::mmd_loss(v[0], v[1], 0.5, true);
                   }});
  // The plan is held fixed in the backward pass (envelope gradient). That is
  // exact for the entropic objective; for <P*, C> itself the neglected term
  // is of order exp(-gap / eps), small only when the transport LP has a
  // unique non-degenerate vertex with cost gaps well above eps. Here H_n rows
  // are noisy axis directions e0..e2, three H_m rows are noisy copies of
  // distinct H_n rows and the fourth points along e3, so it spreads its mass
  // evenly while every other pairing costs ~1 more than the matched one.
  Tensor hn = r({3, 5}, -0.1, 0.1);
  for (std::size_t j = 0; j < 3; ++j) hn[j * 5 + j] += 1.0;
  Tensor hm = r({4, 5}, -0.1, 0.1);
  const std::size_t match[3] = {2, 0, 1};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 5; ++k) hm[i * 5 + k] += hn[match[i] * 5 + k];
  hm[3 * 5 + 3] += 1.0;
  GradCase ot{"ot_loss", {hm, hn}, [](Tape&, const auto& v) {
                return align::ot_loss(v[0], v[1], 0.05, {1e-12, 5000});
              }};
  ot.tolerance = 1e-3;
  cases.push_back(std::move(ot));
  return cases;
}

double param_rel_error(std::vector<NamedParam> params, const ParamForward& fn, double step,
                       std::string* worst_name) {
  auto value = [&] {
    Tape tape;
    Binder bind(tape, false);
    return reduce(fn(bind)).value().item();
  };
  Tape tape;
  Binder bind(tape, true);
  tape.backward(reduce(fn(bind)));

  double worst = 0.0;
  for (auto& p : params) {
    const Tensor g = bind.grad(*p.value);
    std::vector<double> numeric(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      numeric[i] = central_difference((*p.value)[i], step, value);
    }
    const double e = rel_error(g.values(), numeric);
    if (e > worst) {
      worst = e;
      if (worst_name) *worst_name = p.name;
    }
  }
  return worst;
}

namespace {

ssm::MambaConfig small_config() {
  ssm::MambaConfig cfg;
  cfg.d_model = 4;
  cfg.d_state = 3;
  cfg.d_conv = 3;
  // Larger steps than the training default keep the dt-path gradients well
  // above finite-difference noise.
  cfg.dt_min = 0.05;
  cfg.dt_max = 0.5;
  return cfg;
}

}  // namespace

double mamba_layer_error(std::uint64_t seed, std::string* worst) {
  std::mt19937_64 rng(seed);
  ssm::MambaLayer layer(small_config());
  layer.init(rng);
  Tensor x = random_tensor({6, 4}, rng);
  std::vector<NamedParam> params;
  layer.collect("layer", params);
  params.push_back({"x", &x});
  return param_rel_error(
      params, [&](Binder& b) { return ssm::mamba_forward(layer, b, b(x)); }, 1e-4, worst);
}

double moe_layer_error(std::uint64_t seed, bool learnable, std::string* worst) {
  std::mt19937_64 rng(seed);
  moe::MoEMambaLayer layer(small_config(), 3,
                           learnable ? moe::Routing::learnable : moe::Routing::deterministic);
  layer.init(rng);
  Tensor x = random_tensor({7, 4}, rng);
  const std::vector<ModalityId> ids = {0, 0, 1, 1, 1, 2, 2};
  std::vector<NamedParam> params;
  layer.collect("layer", params);
  params.push_back({"x", &x});
  return param_rel_error(
      params, [&](Binder& b) { return moe::moe_mamba_forward(layer, b, b(x), ids); }, 1e-4,
      worst);
}

double brute_force_assignment(const Tensor& C) {
  const std::size_t n = C.dim(0);
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += C.at(i, perm[i]);
    best = std::min(best, s / static_cast<double>(n));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

double naive_mmd(const Tensor& X, const Tensor& Y, double gamma) {
  auto k = [&](const Tensor& A, std::size_t i, const Tensor& B, std::size_t j) {
    double d2 = 0.0;
    for (std::size_t c = 0; c < A.dim(1); ++c) {
      const double diff = A.at(i, c) - B.at(j, c);
      d2 += diff * diff;
    }
    return std::exp(-gamma * d2);
  };
  const double nx = static_cast<double>(X.dim(0)), ny = static_cast<double>(Y.dim(0));
  double xx = 0.0, yy = 0.0, xy = 0.0;
  for (std::size_t i = 0; i < X.dim(0); ++i)
    for (std::size_t j = 0; j < X.dim(0); ++j) xx += k(X, i, X, j);
  for (std::size_t i = 0; i < Y.dim(0); ++i)
    for (std::size_t j = 0; j < Y.dim(0); ++j) yy += k(Y, i, Y, j);
  for (std::size_t i = 0; i < X.dim(0); ++i)
    for (std::size_t j = 0; j < Y.dim(0); ++j) xy += k(X, i, Y, j);
  return xx / (nx * nx) + yy / (ny * ny) - 2.0 * xy / (nx * ny);
}

}  // namespace alignmamba::testing
