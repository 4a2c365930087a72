#pragma once

// Cross-modal alignment losses: entropic optimal transport over a cosine cost
// (token-level, local) and a Gaussian-kernel MMD (distribution-level, global).

#include <cstddef>
#include <cstdint>
#include <map>

#include "alignmamba/autograd.hpp"

namespace alignmamba {

using ModalityId = std::uint32_t;

/// Anchor placeholder resolving to the last configured modality.
inline constexpr ModalityId kLastModality = 0xffffffffu;

namespace align {

enum class BandwidthRule { inverse_dim, fixed };

struct AlignConfig {
  double lambda_ot = 0.001;
  double lambda_mmd = 0.01;
  double blur = 0.05;  // final Sinkhorn epsilon, in cosine-cost units
  BandwidthRule bandwidth = BandwidthRule::inverse_dim;
  double sigma = 1.0;  // used by BandwidthRule::fixed
  ModalityId anchor = kLastModality;
  bool unbiased_mmd = false;

  void validate() const;
};

/// C[i,j] = 1 - cos(hm_i, hn_j). Rejects zero-norm rows.
Tensor cost_matrix(const Tensor& Hm, const Tensor& Hn);

struct SinkhornOptions {
  double tolerance = 1e-6;          // max marginal violation
  std::size_t max_iterations = 1000;  // per epsilon stage
};

struct SinkhornResult {
  double distance = 0.0;  // <P, C>_F
  Tensor plan;            // [Tm, Tn]
  std::size_t iterations = 0;  // total over all stages
  double violation = 0.0;      // before the final feasibility rounding
};

/// Log-domain Sinkhorn with uniform marginals and epsilon scaling:
/// epsilon starts at max(C) and halves each stage down to `blur`. A stage that
/// is still off after 100 sweeps is finished with Newton steps on the dual;
/// sweeps and Newton steps both count against max_iterations. The converged
/// plan is then rounded onto the transport polytope.
/// Throws ConvergenceError if the last stage misses the tolerance.
SinkhornResult sinkhorn_ot(const Tensor& C, double blur, const SinkhornOptions& opts = {});

/// <P*, C(Hm, Hn)> with the converged plan held fixed, so dL/dC = P*.
Var ot_loss(Var Hm, Var Hn, double blur, const SinkhornOptions& opts = {});

/// Gaussian kernel exponent: k(x, y) = exp(-gamma ||x - y||^2).
double kernel_gamma(BandwidthRule rule, double sigma, std::size_t dim);

/// Squared MMD, biased V-statistic (self-pairs included) unless `unbiased`.
Var mmd_loss(Var Hm, Var Hn, double gamma, bool unbiased = false);
double mmd_loss(const Tensor& Hm, const Tensor& Hn, double gamma, bool unbiased = false);

struct AlignmentTerms {
  Var ot;     // sum over non-anchor modalities, unweighted
  Var mmd;    // sum over non-anchor modalities, unweighted
  Var total;  // lambda_ot * ot + lambda_mmd * mmd
};

/// Aligns every non-anchor modality to the anchor. Needs >= 2 modalities.
AlignmentTerms alignment_loss(const std::map<ModalityId, Var>& reps, const AlignConfig& cfg,
                              const SinkhornOptions& opts = {});

}  // namespace align
}  // namespace alignmamba
