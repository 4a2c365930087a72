#pragma once

// Synthetic multimodal data and its on-disk layout.
//
// Each sample draws a latent class vector z = signal * mu_c + xi. Every token
// of modality m is rho * F_{m,t} z + (1 - rho) * noise * eta, where F_{m,t} is
// a fixed random linear map (a per-modality base plus a per-position
// perturbation) and eta is modality-private Gaussian noise. Labels are
// linearly decodable from z; each modality sees z through its own noise, so
// combining modalities beats any single one.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "alignmamba/tensor.hpp"

namespace alignmamba::data {

struct ModalitySpec {
  std::string name;
  std::size_t d_in = 0;
  std::size_t steps = 0;  // T_m

  friend bool operator==(const ModalitySpec&, const ModalitySpec&) = default;
};

enum class Split { train, val, test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct MultimodalSample {
  std::vector<Tensor> features;  // one [T_m, d_in] tensor per modality
  double label = 0.0;            // class index, or target for regression
};

struct SynthConfig {
  std::vector<ModalitySpec> modalities = {
      {"audio", 12, 8}, {"video", 16, 8}, {"language", 20, 8}};
  std::size_t num_classes = 2;
  std::size_t samples_per_class = 150;
  std::size_t latent_dim = 4;
  double rho = 0.5;          // cross-modal correlation
  double signal = 2.25;      // label signal strength in z
  double noise = 1.0;        // modality-private noise scale
  double position_jitter = 0.5;
  bool standardize = true;   // rescale each modality to unit expected variance
  double train_fraction = 2.0 / 3.0;
  double val_fraction = 1.0 / 6.0;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t sample_count() const { return num_classes * samples_per_class; }
};

struct Dataset {
  std::vector<ModalitySpec> modalities;
  std::size_t num_classes = 0;
  std::vector<MultimodalSample> samples;
  std::vector<Split> splits;  // parallel to samples

  std::vector<const MultimodalSample*> subset(Split s) const;
  void validate() const;
};

/// Pure function of cfg (seed included).
Dataset generate(const SynthConfig& cfg);

/// Writes manifest.json plus one MAT1 file per (sample, modality) under dir.
/// Refuses a non-empty dir unless `force`.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds, bool force = false);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace alignmamba::data
