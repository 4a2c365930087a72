// alignmamba: data generation, training, evaluation, sweeps and benchmarks.
//
// Exit codes: 0 success, 1 assertion or metric failure, 2 usage/config error.

#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "alignmamba/bench.hpp"
#include "alignmamba/config.hpp"
#include "alignmamba/errors.hpp"
#include "alignmamba/experiment.hpp"

namespace fs = std::filesystem;
using namespace alignmamba;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

RunConfig config_or_default(const std::string& path) {
  return path.empty() ? RunConfig{} : load_run_config(path);
}

data::Dataset dataset_for(const RunConfig& cfg, const std::string& dir) {
  return dir.empty() ? data::generate(cfg.synth) : data::load_dataset(dir);
}

bool dir_nonempty(const fs::path& p) {
  return fs::exists(p) && fs::is_directory(p) && !fs::is_empty(p);
}

int cmd_gen_data(const std::string& config, const std::string& out, bool force) {
  const auto cfg = config_or_default(config);
  const auto ds = data::generate(cfg.synth);
  data::save_dataset(out, ds, force);
  std::cout << "wrote " << ds.samples.size() << " samples to " << out << '\n';
  return kOk;
}

int cmd_train(const std::string& config, const std::string& data_dir, const std::string& out,
              bool force, bool quiet) {
  const auto cfg = config_or_default(config);
  if (dir_nonempty(out) && !force) {
    throw ConfigError("out", "output directory " + out + " is not empty (use --force)");
  }
  const auto ds = dataset_for(cfg, data_dir);
  model::AlignMamba2 net(cfg.model_for(ds));
  const auto result = train::train(net, ds, cfg.train, quiet ? nullptr : &std::cerr);
  fs::create_directories(out);
  model::save_checkpoint(fs::path(out) / "checkpoint", net);
  train::write_metrics_csv(fs::path(out) / "metrics.csv", result.log);
  const auto& last_train = result.log[result.log.size() - 2];
  const auto& last_val = result.log.back();
  std::cout << std::setprecision(6) << "epochs " << result.epochs_run
            << (result.early_stopped ? " (early stop)" : "") << '\n'
            << "train_accuracy " << last_train.accuracy << '\n'
            << "val_accuracy " << last_val.accuracy << '\n';
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& split) {
  auto net = model::load_checkpoint(checkpoint);
  const auto ds = data::load_dataset(data_dir);
  const auto& mc = net.config();
  if (mc.modalities != ds.modalities) {
    throw ConfigError("checkpoint", "checkpoint modalities do not match dataset " + data_dir);
  }
  if (mc.head == model::Head::classification && mc.num_classes != ds.num_classes) {
    throw ConfigError("checkpoint", "checkpoint expects " + std::to_string(mc.num_classes) +
                                        " classes, dataset has " + std::to_string(ds.num_classes));
  }
  const auto r = train::evaluate(net, ds.subset(data::split_from_string(split)));
  std::cout << std::setprecision(17) << "accuracy " << r.accuracy << '\n' << "f1 " << r.f1 << '\n';
  return kOk;
}

int cmd_sweep(const std::string& config, const std::string& data_dir, const std::string& param,
              const std::vector<double>& grid, std::size_t seeds, const std::string& out,
              bool quiet) {
  const auto cfg = config_or_default(config);
  const auto p = experiment::sweep_param_from_string(param);
  const auto ds = dataset_for(cfg, data_dir);
  const auto rows = experiment::sweep(cfg, ds, p, grid, seeds, quiet ? nullptr : &std::cerr);
  experiment::write_sweep_csv(out, rows);
  for (const auto& r : rows) {
    std::cout << param << '=' << r.value << " accuracy " << r.accuracy << " f1 " << r.f1 << '\n';
  }
  return kOk;
}

struct BenchArgs {
  std::vector<std::string> kernels;
  std::vector<std::size_t> lengths;
  std::size_t trials = 10;
  std::size_t d_model = 128;
  std::size_t budget_mb = 1024;
  std::string csv = "bench.csv", svg;
  std::vector<std::string> expect;
  bool assert_invariants = false;
  bool overhead = false;
};

int cmd_bench(const BenchArgs& a) {
  bench::SweepOptions opts;
  if (!a.kernels.empty()) {
    opts.kernels.clear();
    for (const auto& k : a.kernels) opts.kernels.push_back(bench::kernel_from_string(k));
  }
  if (!a.lengths.empty()) opts.lengths = a.lengths;
  opts.trials = a.trials;
  opts.d_model = a.d_model;
  opts.budget_bytes = a.budget_mb << 20;
  opts.progress = &std::cerr;

  auto expect = bench::default_expectations();
  for (const auto& e : a.expect) {
    const auto eq = e.find('=');
    const std::string tag = eq == std::string::npos ? "" : e.substr(eq + 1);
    if (tag != "linear" && tag != "quadratic") {
      throw ConfigError("expect", "expected KERNEL=linear|quadratic, got '" + e + "'");
    }
    expect[bench::kernel_from_string(e.substr(0, eq))] =
        tag == "linear" ? bench::Complexity::linear : bench::Complexity::quadratic;
  }

  const auto samples = bench::run_sweep(opts);
  bench::emit_csv(samples, a.csv);
  if (!a.svg.empty()) bench::emit_svg(samples, a.svg);

  bool ok = true;
  for (const auto& c : bench::check_invariants(samples, expect)) {
    std::cout << (c.pass ? "ok   " : "FAIL ") << c.name
              << (c.detail.empty() ? "" : " (" + c.detail + ")") << '\n';
    ok = ok && c.pass;
  }
  if (a.overhead) {
    const double r = bench::moe_overhead(opts.lengths.back(), opts.trials, opts);
    const bool pass = r < 1.10;
    std::cout << (pass ? "ok   " : "FAIL ") << "moe routing overhead < 10% (ratio " << r << ")\n";
    ok = ok && pass;
  }
  return a.assert_invariants && !ok ? kFailure : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal Mamba fusion with OT/MMD alignment"};
  app.require_subcommand(1);

  std::string config, out, data_dir, checkpoint, split = "test", param;
  bool force = false, quiet = false;
  std::vector<double> grid;
  std::size_t seeds = 1;
  BenchArgs bench_args;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic multimodal dataset");
  gen->add_option("--config", config, "Run config JSON (defaults when omitted)");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_flag("--force", force, "Overwrite a non-empty output directory");

  auto* tr = app.add_subcommand("train", "Train a model; writes checkpoint/ and metrics.csv");
  tr->add_option("--config", config, "Run config JSON (defaults when omitted)");
  tr->add_option("--data", data_dir, "Dataset directory (generated from the config when omitted)");
  tr->add_option("--out", out, "Output directory")->required();
  tr->add_flag("--force", force, "Allow a non-empty output directory");
  tr->add_flag("--quiet", quiet, "No per-epoch progress on stderr");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint; prints accuracy and F1");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  ev->add_option("--data", data_dir, "Dataset directory")->required();
  ev->add_option("--split", split, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}));

  auto* sw = app.add_subcommand("sweep", "Sweep one alignment weight; writes param,value,accuracy,f1");
  sw->add_option("--config", config, "Run config JSON (defaults when omitted)");
  sw->add_option("--data", data_dir, "Dataset directory (generated from the config when omitted)");
  sw->add_option("--param", param, "lambda_ot or lambda_mmd")->required();
  sw->add_option("--grid", grid, "Values to try")->required();
  sw->add_option("--seeds", seeds, "Training seeds averaged per value");
  sw->add_option("--out", out, "CSV path")->required();
  sw->add_flag("--quiet", quiet, "No per-run progress on stderr");

  auto* be = app.add_subcommand("bench", "Fusion-stage scaling benchmark");
  be->add_option("--kernels", bench_args.kernels,
                 "mamba_fusion, moe_mamba_fusion, attention_fusion (default all)");
  be->add_option("--lengths", bench_args.lengths, "Sequence lengths (default 1024..16384)");
  be->add_option("--trials", bench_args.trials, "Timed passes per point");
  be->add_option("--d-model", bench_args.d_model, "Fusion width");
  be->add_option("--budget-mb", bench_args.budget_mb, "Allocation cap before an OOM mark");
  be->add_option("--csv", bench_args.csv, "CSV output path");
  be->add_option("--svg", bench_args.svg, "SVG chart output path");
  be->add_option("--expect", bench_args.expect,
                 "Override expected complexity, e.g. attention_fusion=linear");
  be->add_flag("--assert", bench_args.assert_invariants, "Exit 1 if a scaling check fails");
  be->add_flag("--overhead", bench_args.overhead, "Also time MoE routing overhead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(config, out, force);
    if (*tr) return cmd_train(config, data_dir, out, force, quiet);
    if (*ev) return cmd_eval(checkpoint, data_dir, split);
    if (*sw) return cmd_sweep(config, data_dir, param, grid, seeds, out, quiet);
    if (*be) return cmd_bench(bench_args);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
