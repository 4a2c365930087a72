#pragma once

// Modality-aware Mamba layer: the linear in/out projections of a Mamba block
// are replaced by a mixture of experts with one expert per modality plus a
// shared expert, while the conv/SSM core is shared by all modalities.

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "alignmamba/align.hpp"
#include "alignmamba/ssm.hpp"

namespace alignmamba::moe {

enum class Routing { deterministic, learnable };

/// Modality experts start as small perturbations of the shared expert.
inline constexpr double kSpecificScale = 0.1;

struct ExpertSet {
  std::vector<Linear> specific;  // one per modality
  Linear shared;

  ExpertSet() = default;
  ExpertSet(std::size_t modalities, std::size_t in, std::size_t out);

  std::size_t modality_count() const noexcept { return specific.size(); }
  std::size_t in_dim() const { return shared.in_dim(); }
  std::size_t out_dim() const { return shared.out_dim(); }

  void collect(const std::string& prefix, std::vector<NamedParam>& out);
  // Shared expert at full fan-in scale, specific experts at `specific_scale`.
  void init(std::mt19937_64& rng, double specific_scale = kSpecificScale);
};

/// specific[m](h) + shared(h) for a single token h of shape [in].
Tensor moe_project(const ExpertSet& experts, const Tensor& h, ModalityId m);

/// Row-wise deterministic routing of H [T, in] by ids (size T).
Var moe_project(const ExpertSet& experts, Binder& bind, Var H,
                const std::vector<ModalityId>& ids);

/// Top-1 expert from a gate's logits; ties go to the lowest index.
std::size_t learnable_route(const Linear& gate, const Tensor& h);
std::size_t argmax_lowest(std::span<const double> logits);

/// Gate probabilities [T, M] and the top-1 expert per row.
struct Route {
  Var probs;
  std::vector<std::size_t> chosen;
};
Route route(const Linear& gate, Binder& bind, Var H);

/// shared(h) + p_k * specific[k](h) with k = r.chosen[row], p_k its probability.
Var moe_project_routed(const ExpertSet& experts, Binder& bind, Var H, const Route& r);

/// Learnable routing: shared(h) + p_k * specific[k](h) with k the top-1 gate
/// choice and p_k its softmax probability. `chosen` receives k per row.
Var moe_project_learnable(const ExpertSet& experts, const Linear& gate, Binder& bind,
                          Var H, std::vector<std::size_t>* chosen = nullptr);

struct MoEMambaLayer {
  ssm::MambaConfig config;
  Routing routing = Routing::deterministic;
  ExpertSet moe_in;   // d_model -> 2 * d_inner
  ssm::GatedCore core;
  ExpertSet moe_out;  // d_inner -> d_model
  Linear gate;        // d_model -> modalities (learnable routing only)

  MoEMambaLayer() = default;
  MoEMambaLayer(const ssm::MambaConfig& cfg, std::size_t modalities,
                Routing routing = Routing::deterministic);

  std::size_t modality_count() const noexcept { return moe_in.modality_count(); }
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
  void init(std::mt19937_64& rng);
  /// Shared experts and the core draw from shared_rng; modality experts and
  /// gates from expert_rng.
  void init(std::mt19937_64& shared_rng, std::mt19937_64& expert_rng);
};

/// x [T, d_model] with one modality id per row -> [T, d_model], residual included.
Var moe_mamba_forward(const MoEMambaLayer& layer, Binder& bind, Var x,
                      const std::vector<ModalityId>& ids);
Tensor moe_mamba_forward(const MoEMambaLayer& layer, const Tensor& x,
                         const std::vector<ModalityId>& ids);

}  // namespace alignmamba::moe
