#pragma once

// Multi-run drivers shared by the CLI and the acceptance suite: seeded
// training runs, ablation variants and one-parameter sweeps.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "alignmamba/config.hpp"

namespace alignmamba::experiment {

struct RunOutcome {
  train::TrainResult train;
  train::EvalResult val;
  train::EvalResult test;
};

/// Trains a fresh model on `ds`. `seed_offset` is added to both the model
/// initialization seed and the training seed.
RunOutcome run_once(const RunConfig& cfg, const data::Dataset& ds, std::uint64_t seed_offset = 0,
                    std::ostream* progress = nullptr);

enum class SweepParam { lambda_ot, lambda_mmd };
/// Throws ConfigError (key "param") for anything else.
SweepParam sweep_param_from_string(const std::string& name);
std::string to_string(SweepParam p);

struct SweepRow {
  SweepParam param = SweepParam::lambda_mmd;
  double value = 0.0;
  double accuracy = 0.0;  // test split, mean over seeds
  double f1 = 0.0;
  std::vector<double> seed_accuracy;
};

/// Trains one configuration; lets callers memoize runs shared between sweeps.
using Runner = std::function<RunOutcome(const RunConfig&, std::uint64_t seed_offset)>;

/// One row per grid value, each the mean over `seeds` training runs.
/// An empty `runner` means run_once on `ds`.
std::vector<SweepRow> sweep(const RunConfig& cfg, const data::Dataset& ds, SweepParam param,
                            const std::vector<double>& grid, std::size_t seeds,
                            std::ostream* progress = nullptr, const Runner& runner = {});

inline constexpr const char* kSweepHeader = "param,value,accuracy,f1";
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

}  // namespace alignmamba::experiment
