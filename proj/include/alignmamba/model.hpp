#pragma once

// End-to-end fusion model: per-modality linear encoders, unimodal Mamba
// stacks, dual alignment regularization, concatenation, modality-aware fusion
// stack and a mean-pooled prediction head.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "alignmamba/align.hpp"
#include "alignmamba/data.hpp"
#include "alignmamba/moe.hpp"
#include "alignmamba/ssm.hpp"

namespace alignmamba::model {

using data::ModalitySpec;
using data::MultimodalSample;

enum class Head { classification, regression };

struct ModelConfig {
  std::vector<ModalitySpec> modalities;
  std::size_t d_model = 16;
  std::size_t d_state = 16;
  std::size_t d_conv = 4;
  std::size_t expand = 2;
  std::size_t unimodal_layers = 1;
  std::size_t fusion_layers = 1;
  std::size_t max_layers = 3;  // bound checked by validate()
  Head head = Head::classification;
  std::size_t num_classes = 2;
  align::AlignConfig align;
  double dropout = 0.2;
  bool use_moe = true;
  moe::Routing routing = moe::Routing::deterministic;
  std::uint64_t seed = 0;

  void validate() const;
  ssm::MambaConfig mamba() const;
  std::size_t output_dim() const { return head == Head::classification ? num_classes : 1; }
};

/// Dropout randomness for one training forward pass; null means eval mode.
using DropoutRng = std::mt19937_64*;

class AlignMamba2 {
 public:
  explicit AlignMamba2(ModelConfig cfg);

  const ModelConfig& config() const noexcept { return config_; }
  std::vector<NamedParam> parameters();

  /// H_m = UnimodalStack_m(Encoder_m(X_m)) for every modality.
  std::map<ModalityId, Var> encode(Binder& bind, const MultimodalSample& sample,
                                   DropoutRng rng = nullptr) const;
  /// Time-concatenation in modality order, then the fusion stack.
  Var fuse(Binder& bind, const std::map<ModalityId, Var>& reps,
           std::vector<ModalityId>* ids = nullptr) const;
  /// Mean-pool over time, then the linear head: logits [C] or a scalar [1].
  Var predict(Binder& bind, Var Z, DropoutRng rng = nullptr) const;

  struct Forward {
    std::map<ModalityId, Var> reps;
    Var fused;
    Var output;
  };
  Forward forward(Binder& bind, const MultimodalSample& sample, DropoutRng rng = nullptr) const;

  // Raw parameter containers (exposed for checkpointing and tests).
  std::vector<Linear> encoders;
  std::vector<std::vector<ssm::MambaLayer>> unimodal;
  std::vector<moe::MoEMambaLayer> fusion_moe;
  std::vector<ssm::MambaLayer> fusion_plain;
  Linear head;

 private:
  ModelConfig config_;
};

struct LossTerms {
  Var task;
  Var ot;     // unweighted, summed over non-anchor modalities
  Var mmd;    // unweighted, summed over non-anchor modalities
  Var total;  // task + lambda_ot * ot + lambda_mmd * mmd
};

/// Cross-entropy on logits (classification) or absolute error (regression).
Var task_loss(Var output, double label, Head head);

/// L_total = L_task + lambda_ot * L_OT + lambda_mmd * L_MMD.
LossTerms total_loss(Var output, double label, const std::map<ModalityId, Var>& reps,
                     const ModelConfig& cfg);

/// Class index (argmax, ties to lowest) or the regression output.
double prediction(const Tensor& output, Head head);

void save_checkpoint(const std::filesystem::path& dir, AlignMamba2& model);
AlignMamba2 load_checkpoint(const std::filesystem::path& dir);

}  // namespace alignmamba::model
