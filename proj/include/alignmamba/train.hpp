#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "alignmamba/data.hpp"
#include "alignmamba/model.hpp"

namespace alignmamba::train {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 50;
  double grad_clip = 1.0;
  std::size_t early_stop_patience = 10;
  double plateau_factor = 0.5;
  std::size_t plateau_patience = 5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One row of the metrics log. Epoch 0 is the untrained model.
struct EpochMetrics {
  std::size_t epoch = 0;
  std::string split;
  double loss_task = 0.0;
  double loss_ot = 0.0;
  double loss_mmd = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> log;
  std::size_t epochs_run = 0;
  bool early_stopped = false;
  double final_learning_rate = 0.0;
};

struct EvalResult {
  double loss_task = 0.0;
  double loss_ot = 0.0;
  double loss_mmd = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
  std::vector<double> predictions;
};

/// Deterministic, dropout-free pass over `samples`; losses are per-sample means.
EvalResult evaluate(const model::AlignMamba2& net,
                    const std::vector<const data::MultimodalSample*>& samples);

/// Scales every gradient so that the global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_global_norm(std::vector<std::vector<double>>& grads, double max_norm);

class Adam {
 public:
  Adam(const std::vector<NamedParam>& params, double beta1, double beta2, double eps);
  void step(std::vector<NamedParam>& params, const std::vector<std::vector<double>>& grads,
            double lr);

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Minibatch Adam with global-norm clipping, ReduceLROnPlateau on the
/// validation task loss and early stopping. Per-sample losses are averaged
/// over each batch. Throws NonFiniteError on a non-finite loss.
TrainResult train(model::AlignMamba2& net, const data::Dataset& dataset,
                  const TrainConfig& cfg, std::ostream* progress = nullptr);

inline constexpr const char* kMetricsHeader = "epoch,split,loss_task,loss_ot,loss_mmd,accuracy";
void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& log);
std::vector<EpochMetrics> read_metrics_csv(const std::filesystem::path& path);

}  // namespace alignmamba::train
