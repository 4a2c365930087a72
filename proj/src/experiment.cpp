#include "alignmamba/experiment.hpp"

#include <fstream>
#include <iomanip>
#include <ostream>

#include "alignmamba/errors.hpp"

namespace alignmamba::experiment {

RunOutcome run_once(const RunConfig& cfg, const data::Dataset& ds, std::uint64_t seed_offset,
                    std::ostream* progress) {
  auto mc = cfg.model_for(ds);
  mc.seed += seed_offset;
  auto tc = cfg.train;
  tc.seed += seed_offset;
  model::AlignMamba2 net(mc);
  RunOutcome out;
  out.train = train::train(net, ds, tc, progress);
  out.val = train::evaluate(net, ds.subset(data::Split::val));
  out.test = train::evaluate(net, ds.subset(data::Split::test));
  return out;
}

SweepParam sweep_param_from_string(const std::string& name) {
  if (name == "lambda_ot") return SweepParam::lambda_ot;
  if (name == "lambda_mmd") return SweepParam::lambda_mmd;
  throw ConfigError("param", "expected lambda_ot or lambda_mmd, got '" + name + "'");
}

std::string to_string(SweepParam p) {
  return p == SweepParam::lambda_ot ? "lambda_ot" : "lambda_mmd";
}

std::vector<SweepRow> sweep(const RunConfig& cfg, const data::Dataset& ds, SweepParam param,
                            const std::vector<double>& grid, std::size_t seeds,
                            std::ostream* progress, const Runner& runner) {
  if (grid.empty()) throw ConfigError("grid", "at least one value required");
  if (seeds == 0) throw ConfigError("seeds", "must be >= 1");
  std::vector<SweepRow> rows;
  for (double v : grid) {
    RunConfig c = cfg;
    (param == SweepParam::lambda_ot ? c.model.align.lambda_ot : c.model.align.lambda_mmd) = v;
    c.model.align.validate();
    SweepRow row{param, v, 0.0, 0.0, {}};
    for (std::size_t s = 0; s < seeds; ++s) {
      const auto r = runner ? runner(c, s) : run_once(c, ds, s);
      row.seed_accuracy.push_back(r.test.accuracy);
      row.accuracy += r.test.accuracy;
      row.f1 += r.test.f1;
      if (progress) {
        *progress << to_string(param) << '=' << v << " seed " << s << ": test accuracy "
                  << r.test.accuracy << ", f1 " << r.test.f1 << '\n';
      }
    }
    row.accuracy /= static_cast<double>(seeds);
    row.f1 /= static_cast<double>(seeds);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << kSweepHeader << '\n' << std::setprecision(10);
  for (const auto& r : rows) {
    out << to_string(r.param) << ',' << r.value << ',' << r.accuracy << ',' << r.f1 << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace alignmamba::experiment
