#include "alignmamba/ssm.hpp"

#include <algorithm>
#include <cmath>

#include "alignmamba/kernels.hpp"

namespace alignmamba::ssm {
namespace {

struct Dims3 {
  std::size_t steps, channels, state;
};

Dims3 check_scan_shapes(const Tensor& A_bar, const Tensor& B_bar, const Tensor& C,
                        const Tensor& u) {
  if (A_bar.rank() != 3 || A_bar.shape() != B_bar.shape()) {
    throw ShapeError("scan: A_bar " + to_string(A_bar.shape()) + " vs B_bar " +
                     to_string(B_bar.shape()));
  }
  const Dims3 d{A_bar.dim(0), A_bar.dim(1), A_bar.dim(2)};
  if (u.shape() != Shape{d.steps, d.channels}) {
    throw ShapeError("scan: u " + to_string(u.shape()) + " vs A_bar " +
                     to_string(A_bar.shape()));
  }
  if (C.shape() != Shape{d.steps, d.state}) {
    throw ShapeError("scan: C " + to_string(C.shape()) + " vs A_bar " +
                     to_string(A_bar.shape()));
  }
  return d;
}

}  // namespace

Discretized discretize(const Tensor& A, const Tensor& B, const Tensor& delta) {
  if (A.rank() != 2 || B.rank() != 2 || delta.rank() != 2 || B.dim(1) != A.dim(1) ||
      delta.dim(1) != A.dim(0) || delta.dim(0) != B.dim(0)) {
    throw ShapeError("discretize: A " + to_string(A.shape()) + ", B " +
                     to_string(B.shape()) + ", delta " + to_string(delta.shape()));
  }
  const std::size_t T = delta.dim(0), D = A.dim(0), N = A.dim(1);
  for (std::size_t i = 0; i < delta.size(); ++i) {
    if (!(delta[i] > 0.0)) {
      throw Error("discretize: delta must be positive, got " + std::to_string(delta[i]) +
                  " at flat index " + std::to_string(i));
    }
  }
  Discretized out{Tensor({T, D, N}), Tensor({T, D, N})};
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t d = 0; d < D; ++d) {
      const double dt = delta[t * D + d];
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t i = (t * D + d) * N + n;
        out.A_bar[i] = std::exp(dt * A[d * N + n]);
        out.B_bar[i] = dt * B[t * N + n];
      }
    }
  }
  return out;
}

Tensor scan_states(const Tensor& A_bar, const Tensor& B_bar, const Tensor& u,
                   const Tensor* h0) {
  const Tensor C({A_bar.dim(0), A_bar.dim(2)});
  const Dims3 d = check_scan_shapes(A_bar, B_bar, C, u);
  const std::size_t DN = d.channels * d.state;
  if (h0 && h0->size() != DN) {
    throw ShapeError("scan_states: h0 " + to_string(h0->shape()) + " needs " +
                     std::to_string(DN) + " values");
  }
  Tensor states({d.steps, d.channels, d.state});
  std::vector<double> h(DN, 0.0);
  if (h0) std::copy(h0->data().begin(), h0->data().end(), h.begin());
  for (std::size_t t = 0; t < d.steps; ++t) {
    for (std::size_t c = 0; c < d.channels; ++c) {
      const double ut = u[t * d.channels + c];
      for (std::size_t n = 0; n < d.state; ++n) {
        const std::size_t k = c * d.state + n;
        const double bu = B_bar[t * DN + k] * ut;  // rounded as in scan_parallel
        h[k] = A_bar[t * DN + k] * h[k] + bu;
        states[t * DN + k] = h[k];
      }
    }
  }
  return states;
}

Tensor scan_sequential(const Tensor& A_bar, const Tensor& B_bar, const Tensor& C,
                       const Tensor& u) {
  const Dims3 d = check_scan_shapes(A_bar, B_bar, C, u);
  const Tensor states = scan_states(A_bar, B_bar, u);
  Tensor y({d.steps, d.channels});
  const std::size_t DN = d.channels * d.state;
  for (std::size_t t = 0; t < d.steps; ++t) {
    for (std::size_t c = 0; c < d.channels; ++c) {
      double acc = 0.0;
      for (std::size_t n = 0; n < d.state; ++n) {
        acc += C[t * d.state + n] * states[t * DN + c * d.state + n];
      }
      y[t * d.channels + c] = acc;
    }
  }
  return y;
}

Tensor scan_parallel(const Tensor& A_bar, const Tensor& B_bar, const Tensor& C,
                     const Tensor& u, std::size_t chunk) {
  using Elem = kernels::ScanElem<double>;
  const Dims3 d = check_scan_shapes(A_bar, B_bar, C, u);
  chunk = std::max<std::size_t>(chunk, 1);
  const std::size_t DN = d.channels * d.state;
  const std::size_t n_chunks = (d.steps + chunk - 1) / chunk;
  auto elem = [&](std::size_t t, std::size_t k) {
    return Elem{A_bar[t * DN + k], B_bar[t * DN + k] * u[t * d.channels + k / d.state]};
  };

  // Phase 1: aggregate of every chunk, per lane.
  std::vector<Elem> agg(n_chunks * DN);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t sc = 0; sc < static_cast<std::ptrdiff_t>(n_chunks); ++sc) {
    const auto c = static_cast<std::size_t>(sc);
    const std::size_t t0 = c * chunk, t1 = std::min(d.steps, t0 + chunk);
    for (std::size_t k = 0; k < DN; ++k) {
      Elem acc = elem(t0, k);
      for (std::size_t t = t0 + 1; t < t1; ++t) acc = kernels::combine(acc, elem(t, k));
      agg[c * DN + k] = acc;
    }
  }

  // Phase 2: exclusive scan of chunk aggregates -> state entering each chunk.
  std::vector<double> carry(n_chunks * DN, 0.0);
  for (std::size_t c = 1; c < n_chunks; ++c) {
    for (std::size_t k = 0; k < DN; ++k) {
      const Elem& a = agg[(c - 1) * DN + k];
      carry[c * DN + k] = a.a * carry[(c - 1) * DN + k] + a.b;
    }
  }

  // Phase 3: replay each chunk from its carry and contract with C.
  Tensor y({d.steps, d.channels});
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t sc = 0; sc < static_cast<std::ptrdiff_t>(n_chunks); ++sc) {
    const auto c = static_cast<std::size_t>(sc);
    const std::size_t t0 = c * chunk, t1 = std::min(d.steps, t0 + chunk);
    std::vector<double> h(carry.begin() + static_cast<std::ptrdiff_t>(c * DN),
                          carry.begin() + static_cast<std::ptrdiff_t>((c + 1) * DN));
    for (std::size_t t = t0; t < t1; ++t) {
      for (std::size_t ch = 0; ch < d.channels; ++ch) {
        double acc = 0.0;
        for (std::size_t n = 0; n < d.state; ++n) {
          const std::size_t k = ch * d.state + n;
          const Elem e = elem(t, k);
          h[k] = e.a * h[k] + e.b;
          acc += C[t * d.state + n] * h[k];
        }
        y[t * d.channels + ch] = acc;
      }
    }
  }
  return y;
}

MambaConfig MambaConfig::resolved() const {
  MambaConfig c = *this;
  if (c.d_model == 0) throw Error("MambaConfig: d_model must be positive");
  if (c.d_inner == 0) c.d_inner = 2 * c.d_model;
  if (c.dt_rank == 0) c.dt_rank = (c.d_model + 15) / 16;
  if (c.d_state == 0 || c.d_conv == 0) throw Error("MambaConfig: d_state and d_conv must be positive");
  return c;
}

SsmCore::SsmCore(const MambaConfig& cfg_in) {
  const MambaConfig cfg = cfg_in.resolved();
  A_log = Tensor({cfg.d_inner, cfg.d_state});
  dt_down = Linear(cfg.d_inner, cfg.dt_rank);
  dt_up = Linear(cfg.dt_rank, cfg.d_inner);
  B_proj = Linear(cfg.d_inner, cfg.d_state);
  C_proj = Linear(cfg.d_inner, cfg.d_state);
}

Var SsmCore::operator()(Binder& bind, Var x) const {
  Var delta = softplus(dt_up(bind, dt_down(bind, x)));
  Var B = B_proj(bind, x);
  Var C = C_proj(bind, x);
  Var A = neg(exp(bind(A_log)));
  return selective_scan(x, delta, A, B, C);
}

void SsmCore::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".A_log", &A_log});
  dt_down.collect(prefix + ".dt_down", out);
  dt_up.collect(prefix + ".dt_up", out);
  B_proj.collect(prefix + ".B_proj", out);
  C_proj.collect(prefix + ".C_proj", out);
}

void SsmCore::init(const MambaConfig& cfg_in, std::mt19937_64& rng) {
  const MambaConfig cfg = cfg_in.resolved();
  // S4D-real: A = -(1..N) on every channel
  for (std::size_t d = 0; d < cfg.d_inner; ++d)
    for (std::size_t n = 0; n < cfg.d_state; ++n)
      A_log[d * cfg.d_state + n] = std::log(static_cast<double>(n + 1));
  dt_down.init_uniform(rng);
  dt_up.init_uniform(rng);
  B_proj.init_uniform(rng);
  C_proj.init_uniform(rng);
  // bias = softplus^{-1}(dt), dt log-uniform in [dt_min, dt_max]
  std::uniform_real_distribution<double> u(std::log(cfg.dt_min), std::log(cfg.dt_max));
  for (double& b : dt_up.bias.data()) {
    const double dt = std::exp(u(rng));
    b = dt + std::log(-std::expm1(-dt));
  }
}

GatedCore::GatedCore(const MambaConfig& cfg_in) {
  const MambaConfig cfg = cfg_in.resolved();
  conv_weight = Tensor({cfg.d_inner, cfg.d_conv});
  conv_bias = Tensor({cfg.d_inner});
  ssm = SsmCore(cfg);
}

Var GatedCore::operator()(Binder& bind, Var value, Var gate) const {
  Var v = silu(causal_conv1d(value, bind(conv_weight), bind(conv_bias)));
  return mul(ssm(bind, v), silu(gate));
}

void GatedCore::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".conv_weight", &conv_weight});
  out.push_back({prefix + ".conv_bias", &conv_bias});
  ssm.collect(prefix + ".ssm", out);
}

void GatedCore::init(const MambaConfig& cfg, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(conv_weight.dim(1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& w : conv_weight.data()) w = dist(rng);
  for (double& b : conv_bias.data()) b = dist(rng);
  ssm.init(cfg, rng);
}

MambaLayer::MambaLayer(const MambaConfig& cfg)
    : config(cfg.resolved()),
      in_proj(config.d_model, 2 * config.d_inner),
      core(config),
      out_proj(config.d_inner, config.d_model) {}

void MambaLayer::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  in_proj.collect(prefix + ".in_proj", out);
  core.collect(prefix + ".core", out);
  out_proj.collect(prefix + ".out_proj", out);
}

void MambaLayer::init(std::mt19937_64& rng) {
  in_proj.init_uniform(rng);
  core.init(config, rng);
  out_proj.init_uniform(rng);
}

Var mamba_forward(const MambaLayer& layer, Binder& bind, Var x) {
  if (x.value().rank() != 2 || x.dim(1) != layer.config.d_model) {
    throw ShapeError("mamba_forward: input " + to_string(x.shape()) +
                     " does not match d_model " + std::to_string(layer.config.d_model));
  }
  if (x.dim(0) == 0) throw ShapeError("mamba_forward: empty sequence");
  const std::size_t T = x.dim(0), D = layer.config.d_inner;
  Var xz = layer.in_proj(bind, x);
  Var value = slice(xz, {{0, T}, {0, D}});
  Var gate = slice(xz, {{0, T}, {D, 2 * D}});
  Var y = layer.core(bind, value, gate);
  return add(x, layer.out_proj(bind, y));
}

Tensor mamba_forward(const MambaLayer& layer, const Tensor& x) {
  Tape tape;
  Binder bind(tape, false);
  return mamba_forward(layer, bind, tape.constant(x)).value();
}

}  // namespace alignmamba::ssm
