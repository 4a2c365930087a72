#pragma once

// JSON run configuration. Every section is optional and every key has a
// default; unknown keys are rejected with a ConfigError naming the key path.
//
//   {
//     "synth":    { "modalities": [{"name","d_in","steps"}...], "num_classes",
//                   "samples_per_class", "latent_dim", "rho", "signal", "noise",
//                   "position_jitter", "standardize", "train_fraction",
//                   "val_fraction", "seed" },
//     "model":    { "d_model", "d_state", "d_conv", "expand", "unimodal_layers",
//                   "fusion_layers", "max_layers", "head", "num_classes",
//                   "dropout", "routing", "use_moe", "seed" },
//     "align":    { "lambda_ot", "lambda_mmd", "blur", "bandwidth", "sigma",
//                   "anchor", "unbiased_mmd" },
//     "train":    { "learning_rate", "batch_size", "max_epochs", "grad_clip",
//                   "early_stop_patience", "plateau_factor", "plateau_patience",
//                   "beta1", "beta2", "adam_eps", "seed" },
//     "ablation": { "no_alignment", "no_moe", "learnable_routing" }
//   }

#include <filesystem>

#include <json.hpp>

#include "alignmamba/data.hpp"
#include "alignmamba/model.hpp"
#include "alignmamba/train.hpp"

namespace alignmamba {

struct Ablation {
  bool no_alignment = false;
  bool no_moe = false;
  bool learnable_routing = false;
};

struct RunConfig {
  data::SynthConfig synth;
  model::ModelConfig model;  // modalities are filled in from the dataset
  train::TrainConfig train;
  Ablation ablation;

  /// Model config for a dataset, with ablation switches applied.
  model::ModelConfig model_for(const data::Dataset& ds) const;
  void validate() const;
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);
/// Throws ConfigError (key "config") with the path when the file is missing
/// and ParseError on malformed JSON.
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json model_config_to_json(const model::ModelConfig& cfg);
model::ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace alignmamba
