#include "alignmamba/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include <json.hpp>

#include "alignmamba/mat1.hpp"

namespace alignmamba::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("split", "unknown split '" + s + "' (train|val|test)");
}

void SynthConfig::validate() const {
  if (modalities.empty()) throw ConfigError("synth.modalities", "at least one modality required");
  for (const auto& m : modalities) {
    if (m.d_in == 0 || m.steps == 0) {
      throw ConfigError("synth.modalities", "modality '" + m.name + "' needs d_in >= 1 and steps >= 1");
    }
  }
  if (num_classes < 1) throw ConfigError("synth.num_classes", "must be >= 1");
  if (samples_per_class < 1) throw ConfigError("synth.samples_per_class", "must be >= 1");
  if (latent_dim < 1) throw ConfigError("synth.latent_dim", "must be >= 1");
  if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("synth.rho", "must lie in [0, 1]");
  if (!(noise >= 0.0)) throw ConfigError("synth.noise", "must be >= 0");
  if (!(signal >= 0.0)) throw ConfigError("synth.signal", "must be >= 0");
  if (!(train_fraction > 0.0 && val_fraction >= 0.0 && train_fraction + val_fraction <= 1.0)) {
    throw ConfigError("synth.train_fraction", "fractions must be positive and sum to <= 1");
  }
}

std::vector<const MultimodalSample*> Dataset::subset(Split s) const {
  std::vector<const MultimodalSample*> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (splits[i] == s) out.push_back(&samples[i]);
  }
  return out;
}

void Dataset::validate() const {
  if (splits.size() != samples.size()) throw Error("dataset: split tags do not match samples");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.features.size() != modalities.size()) {
      throw Error("dataset: sample " + std::to_string(i) + " has " +
                  std::to_string(s.features.size()) + " modalities, expected " +
                  std::to_string(modalities.size()));
    }
    for (std::size_t m = 0; m < modalities.size(); ++m) {
      const Shape want{modalities[m].steps, modalities[m].d_in};
      if (s.features[m].shape() != want) {
        throw ShapeError("dataset: sample " + std::to_string(i) + " modality '" +
                         modalities[m].name + "' has shape " +
                         alignmamba::to_string(s.features[m].shape()) + ", expected " +
                         alignmamba::to_string(want));
      }
    }
  }
}

Dataset generate(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t k = cfg.latent_dim;
  const double map_scale = 1.0 / std::sqrt(static_cast<double>(k));

  // Fixed per-modality maps F_{m,t} = base_m + jitter * P_{m,t}, each [d_in, k].
  std::vector<std::vector<std::vector<double>>> maps(cfg.modalities.size());
  for (std::size_t m = 0; m < cfg.modalities.size(); ++m) {
    const auto& spec = cfg.modalities[m];
    std::vector<double> base(spec.d_in * k);
    for (double& v : base) v = normal(rng) * map_scale;
    maps[m].resize(spec.steps);
    for (std::size_t t = 0; t < spec.steps; ++t) {
      maps[m][t] = base;
      for (double& v : maps[m][t]) v += cfg.position_jitter * normal(rng) * map_scale;
    }
  }
  // Unit-norm class directions in latent space.
  std::vector<std::vector<double>> means(cfg.num_classes, std::vector<double>(k));
  for (auto& mu : means) {
    double norm = 0.0;
    for (double& v : mu) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : mu) v /= norm;
  }

  // Per-modality divisor giving features unit expected variance; the ratio of
  // shared to private energy (and so rho's meaning) is unchanged.
  std::vector<double> feature_scale(cfg.modalities.size(), 1.0);
  if (cfg.standardize) {
    const double z_energy = 1.0 + cfg.signal * cfg.signal / static_cast<double>(k);
    for (std::size_t m = 0; m < cfg.modalities.size(); ++m) {
      double f2 = 0.0;
      for (const auto& F : maps[m])
        for (double v : F) f2 += v * v;
      f2 /= static_cast<double>(maps[m].size() * cfg.modalities[m].d_in);
      const double var = cfg.rho * cfg.rho * f2 * z_energy +
                         (1.0 - cfg.rho) * (1.0 - cfg.rho) * cfg.noise * cfg.noise;
      if (var > 0.0) feature_scale[m] = 1.0 / std::sqrt(var);
    }
  }

  Dataset ds;
  ds.modalities = cfg.modalities;
  ds.num_classes = cfg.num_classes;
  const std::size_t total = cfg.sample_count();
  ds.samples.reserve(total);
  std::vector<double> z(k);
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t label = i % cfg.num_classes;
    for (std::size_t j = 0; j < k; ++j) z[j] = cfg.signal * means[label][j] + normal(rng);
    MultimodalSample s;
    s.label = static_cast<double>(label);
    for (std::size_t m = 0; m < cfg.modalities.size(); ++m) {
      const auto& spec = cfg.modalities[m];
      Tensor x({spec.steps, spec.d_in});
      for (std::size_t t = 0; t < spec.steps; ++t) {
        const auto& F = maps[m][t];
        for (std::size_t d = 0; d < spec.d_in; ++d) {
          double shared = 0.0;
          for (std::size_t j = 0; j < k; ++j) shared += F[d * k + j] * z[j];
          const double priv = cfg.noise * normal(rng);
          x[t * spec.d_in + d] = feature_scale[m] * (cfg.rho * shared + (1.0 - cfg.rho) * priv);
        }
      }
      s.features.push_back(std::move(x));
    }
    ds.samples.push_back(std::move(s));
  }

  // Stratified split: shuffle each class, then cut by the configured fractions.
  ds.splits.assign(total, Split::test);
  const auto n_train = static_cast<std::size_t>(
      std::llround(cfg.train_fraction * static_cast<double>(cfg.samples_per_class)));
  const auto n_val = static_cast<std::size_t>(
      std::llround(cfg.val_fraction * static_cast<double>(cfg.samples_per_class)));
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = c; i < total; i += cfg.num_classes) idx.push_back(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      ds.splits[idx[r]] = r < n_train ? Split::train : (r < n_train + n_val ? Split::val : Split::test);
    }
  }
  return ds;
}

void save_dataset(const fs::path& dir, const Dataset& ds, bool force) {
  ds.validate();
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw Error(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw ConfigError("out", dir.string() + " is not empty (use --force to overwrite)");
      fs::remove_all(dir);
    }
  }
  fs::create_directories(dir / "samples");
  json manifest;
  manifest["format"] = "alignmamba-dataset/1";
  manifest["num_classes"] = ds.num_classes;
  manifest["modalities"] = json::array();
  for (const auto& m : ds.modalities) {
    manifest["modalities"].push_back({{"name", m.name}, {"d_in", m.d_in}, {"steps", m.steps}});
  }
  manifest["samples"] = json::array();
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    json entry;
    entry["id"] = i;
    entry["split"] = to_string(ds.splits[i]);
    entry["label"] = ds.samples[i].label;
    entry["files"] = json::array();
    for (std::size_t m = 0; m < ds.modalities.size(); ++m) {
      char name[64];
      std::snprintf(name, sizeof(name), "%06zu_%zu.mat1", i, m);
      const fs::path rel = fs::path("samples") / name;
      save_mat1(dir / rel, ds.samples[i].features[m]);
      entry["files"].push_back(rel.generic_string());
    }
    manifest["samples"].push_back(std::move(entry));
  }
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw Error("failed to write " + (dir / "manifest.json").string());
}

Dataset load_dataset(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error("cannot open dataset manifest " + (dir / "manifest.json").string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(e.byte, std::string("dataset manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "alignmamba-dataset/1") {
    throw Error("dataset manifest: unsupported format");
  }
  Dataset ds;
  ds.num_classes = manifest.at("num_classes").get<std::size_t>();
  for (const auto& m : manifest.at("modalities")) {
    ds.modalities.push_back({m.at("name").get<std::string>(), m.at("d_in").get<std::size_t>(),
                             m.at("steps").get<std::size_t>()});
  }
  for (const auto& entry : manifest.at("samples")) {
    MultimodalSample s;
    s.label = entry.at("label").get<double>();
    for (const auto& f : entry.at("files")) s.features.push_back(load_mat1(dir / f.get<std::string>()));
    ds.samples.push_back(std::move(s));
    ds.splits.push_back(split_from_string(entry.at("split").get<std::string>()));
  }
  ds.validate();
  return ds;
}

}  // namespace alignmamba::data
