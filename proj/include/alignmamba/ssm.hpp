#pragma once

// Discretized selective state-space scan and the vanilla Mamba layer.

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "alignmamba/params.hpp"

namespace alignmamba::ssm {

/// Zero-order-hold discretization for a diagonal A.
/// Inputs: A [D, N] (per-channel diagonal), B [T, N], delta [T, D] (> 0).
/// Outputs are laid out [T, D, N]:
///   A_bar[t,d,n] = exp(delta[t,d] * A[d,n]),  B_bar[t,d,n] = delta[t,d] * B[t,n].
struct Discretized {
  Tensor A_bar;
  Tensor B_bar;
};

Discretized discretize(const Tensor& A, const Tensor& B, const Tensor& delta);

/// Hidden states h_t = A_bar_t * h_{t-1} + B_bar_t * u_t, laid out [T, D, N].
/// `h0` ([D, N]) defaults to zeros.
Tensor scan_states(const Tensor& A_bar, const Tensor& B_bar, const Tensor& u,
                   const Tensor* h0 = nullptr);

/// Reference recurrence; y[t,d] = sum_n C[t,n] h_t[d,n]. Returns [T, D].
Tensor scan_sequential(const Tensor& A_bar, const Tensor& B_bar, const Tensor& C,
                       const Tensor& u);

/// Chunked prefix scan over the (a, b) recurrence monoid: per-chunk reduction,
/// exclusive scan of chunk carries, then per-chunk replay. Chunks are
/// processed in parallel when OpenMP is enabled.
Tensor scan_parallel(const Tensor& A_bar, const Tensor& B_bar, const Tensor& C,
                     const Tensor& u, std::size_t chunk = 32);

struct MambaConfig {
  std::size_t d_model = 16;
  std::size_t d_inner = 0;   // 0 -> 2 * d_model
  std::size_t d_state = 16;  // N
  std::size_t d_conv = 4;
  std::size_t dt_rank = 0;   // 0 -> ceil(d_model / 16)
  double dt_min = 0.001;
  double dt_max = 0.1;

  MambaConfig resolved() const;
};

/// Input-dependent SSM parameters around a diagonal A = -exp(A_log).
struct SsmCore {
  Tensor A_log;   // [D, N]
  Linear dt_down; // D -> dt_rank
  Linear dt_up;   // dt_rank -> D, followed by softplus
  Linear B_proj;  // D -> N
  Linear C_proj;  // D -> N

  SsmCore() = default;
  explicit SsmCore(const MambaConfig& cfg);

  // x [T, D] -> y [T, D]
  Var operator()(Binder& bind, Var x) const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
  void init(const MambaConfig& cfg, std::mt19937_64& rng);
};

/// Causal depthwise conv + SiLU + selective SSM, gated by SiLU(gate).
/// This is the part shared between the vanilla and modality-aware layers.
struct GatedCore {
  Tensor conv_weight;  // [D, d_conv]
  Tensor conv_bias;    // [D]
  SsmCore ssm;

  GatedCore() = default;
  explicit GatedCore(const MambaConfig& cfg);

  // value, gate: [T, D] -> [T, D]
  Var operator()(Binder& bind, Var value, Var gate) const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
  void init(const MambaConfig& cfg, std::mt19937_64& rng);
};

struct MambaLayer {
  MambaConfig config;
  Linear in_proj;  // d_model -> 2 * d_inner (value | gate)
  GatedCore core;
  Linear out_proj; // d_inner -> d_model

  MambaLayer() = default;
  explicit MambaLayer(const MambaConfig& cfg);

  void collect(const std::string& prefix, std::vector<NamedParam>& out);
  void init(std::mt19937_64& rng);
};

/// x [T, d_model] -> x + out_proj(core(split(in_proj(x)))).
Var mamba_forward(const MambaLayer& layer, Binder& bind, Var x);
Tensor mamba_forward(const MambaLayer& layer, const Tensor& x);

}  // namespace alignmamba::ssm
