#include "alignmamba/train.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "alignmamba/metrics.hpp"

namespace alignmamba::train {

using model::AlignMamba2;
using model::Head;

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("train.learning_rate", "must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
  if (!(grad_clip > 0.0)) throw ConfigError("train.grad_clip", "must be > 0");
  if (!(plateau_factor > 0.0 && plateau_factor <= 1.0)) {
    throw ConfigError("train.plateau_factor", "must lie in (0, 1]");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train.beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2", "must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps", "must be > 0");
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(index)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

double to_class(double v, Head head) {
  return head == Head::regression ? (v >= 0.0 ? 1.0 : 0.0) : v;
}

void check_params_finite(const std::vector<NamedParam>& params) {
  for (const auto& p : params) {
    if (!p.value->all_finite()) {
      throw NonFiniteError(p.name, "parameter '" + p.name + "' became non-finite");
    }
  }
}

struct SampleGrad {
  std::vector<std::vector<double>> grads;
  double task = 0.0, ot = 0.0, mmd = 0.0, total = 0.0;
};

SampleGrad sample_gradient(const AlignMamba2& net, const std::vector<NamedParam>& params,
                           const data::MultimodalSample& sample, std::uint64_t seed) {
  Tape tape;
  Binder bind(tape, true);
  std::mt19937_64 rng(seed);
  const auto fwd = net.forward(bind, sample, &rng);
  const auto loss = model::total_loss(fwd.output, sample.label, fwd.reps, net.config());
  SampleGrad out;
  out.task = loss.task.value().item();
  out.ot = loss.ot.value().item();
  out.mmd = loss.mmd.value().item();
  out.total = loss.total.value().item();
  if (!std::isfinite(out.total)) {
    throw NonFiniteError("loss", "non-finite training loss (task " + std::to_string(out.task) +
                                     ", ot " + std::to_string(out.ot) + ", mmd " +
                                     std::to_string(out.mmd) + ")");
  }
  tape.backward(loss.total);
  out.grads.reserve(params.size());
  for (const auto& p : params) out.grads.push_back(bind.grad(*p.value).values());
  return out;
}

// Runs body(i) for i in [0, n) across threads. Exceptions cannot leave an
// OpenMP region, so they are parked and the lowest-index one is rethrown.
template <class F>
void parallel_for(std::size_t n, F&& body) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(n); ++si) {
    try {
      body(static_cast<std::size_t>(si));
    } catch (...) {
      errors[static_cast<std::size_t>(si)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

EvalResult evaluate(const AlignMamba2& net,
                    const std::vector<const data::MultimodalSample*>& samples) {
  const auto& cfg = net.config();
  EvalResult res;
  res.predictions.resize(samples.size());
  std::vector<double> task(samples.size()), ot(samples.size()), mmd(samples.size());
  std::vector<double> truth(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    Tape tape;
    Binder bind(tape, false);
    const auto fwd = net.forward(bind, *samples[i]);
    const auto loss = model::total_loss(fwd.output, samples[i]->label, fwd.reps, cfg);
    task[i] = loss.task.value().item();
    ot[i] = loss.ot.value().item();
    mmd[i] = loss.mmd.value().item();
    res.predictions[i] = model::prediction(fwd.output.value(), cfg.head);
  });
  if (samples.empty()) return res;
  std::vector<double> pred_cls(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    truth[i] = to_class(samples[i]->label, cfg.head);
    pred_cls[i] = to_class(res.predictions[i], cfg.head);
  }
  const double n = static_cast<double>(samples.size());
  res.loss_task = std::accumulate(task.begin(), task.end(), 0.0) / n;
  res.loss_ot = std::accumulate(ot.begin(), ot.end(), 0.0) / n;
  res.loss_mmd = std::accumulate(mmd.begin(), mmd.end(), 0.0) / n;
  res.accuracy = metrics::accuracy(pred_cls, truth);
  const std::size_t classes = cfg.head == Head::classification ? cfg.num_classes : 2;
  res.f1 = metrics::f1_score(pred_cls, truth, classes);
  return res;
}

double clip_global_norm(std::vector<std::vector<double>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads)
      for (double& v : g) v *= s;
  }
  return norm;
}

Adam::Adam(const std::vector<NamedParam>& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params) {
    m_.emplace_back(p.value->size(), 0.0);
    v_.emplace_back(p.value->size(), 0.0);
  }
}

void Adam::step(std::vector<NamedParam>& params, const std::vector<std::vector<double>>& grads,
                double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].value->data();
    const auto& g = grads[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
    }
  }
}

TrainResult train(AlignMamba2& net, const data::Dataset& dataset, const TrainConfig& cfg,
                  std::ostream* progress) {
  cfg.validate();
  const auto train_set = dataset.subset(data::Split::train);
  const auto val_set = dataset.subset(data::Split::val);
  if (train_set.empty()) throw Error("train: empty training split");
  if (val_set.empty()) throw Error("train: empty validation split");

  auto params = net.parameters();
  Adam adam(params, cfg.beta1, cfg.beta2, cfg.adam_eps);
  TrainResult result;
  double lr = cfg.learning_rate;

  auto log_epoch = [&](std::size_t epoch) {
    const auto tr = evaluate(net, train_set);
    const auto va = evaluate(net, val_set);
    result.log.push_back({epoch, "train", tr.loss_task, tr.loss_ot, tr.loss_mmd, tr.accuracy});
    result.log.push_back({epoch, "val", va.loss_task, va.loss_ot, va.loss_mmd, va.accuracy});
    if (progress) {
      *progress << "epoch " << epoch << std::fixed << std::setprecision(4)
                << "  train task " << tr.loss_task << " acc " << tr.accuracy
                << "  val task " << va.loss_task << " acc " << va.accuracy << "  ot "
                << tr.loss_ot << " mmd " << tr.loss_mmd << "  lr " << lr << '\n';
    }
    return va.loss_task;
  };

  double best_val = log_epoch(0);
  std::size_t since_best = 0, since_plateau_best = 0;
  double plateau_best = best_val;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, epoch, 0xffffffffu));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<SampleGrad> per(end - start);
      parallel_for(end - start, [&](std::size_t b) {
        const std::size_t idx = order[start + b];
        per[b] = sample_gradient(net, params, *train_set[idx], mix_seed(cfg.seed, epoch, idx));
      });
      // fixed-order reduction keeps runs bit-reproducible
      std::vector<std::vector<double>> grads = std::move(per[0].grads);
      for (std::size_t b = 1; b < per.size(); ++b) {
        for (std::size_t k = 0; k < grads.size(); ++k)
          for (std::size_t i = 0; i < grads[k].size(); ++i) grads[k][i] += per[b].grads[k][i];
      }
      const double inv = 1.0 / static_cast<double>(per.size());
      for (auto& g : grads)
        for (double& v : g) v *= inv;
      clip_global_norm(grads, cfg.grad_clip);
      adam.step(params, grads, lr);
      check_params_finite(params);
    }
    result.epochs_run = epoch;

    const double val_loss = log_epoch(epoch);
    if (val_loss < plateau_best) {
      plateau_best = val_loss;
      since_plateau_best = 0;
    } else if (++since_plateau_best > cfg.plateau_patience) {
      lr *= cfg.plateau_factor;
      since_plateau_best = 0;
    }
    if (val_loss < best_val) {
      best_val = val_loss;
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_patience) {
      result.early_stopped = true;
      break;
    }
  }
  result.final_learning_rate = lr;
  return result;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& log) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << kMetricsHeader << '\n';
  out << std::setprecision(17);
  for (const auto& r : log) {
    out << r.epoch << ',' << r.split << ',' << r.loss_task << ',' << r.loss_ot << ','
        << r.loss_mmd << ',' << r.accuracy << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<EpochMetrics> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kMetricsHeader) {
    throw ParseError(0, "metrics CSV header mismatch: '" + line + "'");
  }
  std::vector<EpochMetrics> rows;
  std::size_t offset = line.size() + 1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw ParseError(offset, "metrics CSV row needs 6 fields");
    EpochMetrics r;
    try {
      r.epoch = std::stoul(cells[0]);
      r.split = cells[1];
      r.loss_task = std::stod(cells[2]);
      r.loss_ot = std::stod(cells[3]);
      r.loss_mmd = std::stod(cells[4]);
      r.accuracy = std::stod(cells[5]);
    } catch (const std::exception&) {
      throw ParseError(offset, "metrics CSV row has a non-numeric field");
    }
    rows.push_back(std::move(r));
    offset += line.size() + 1;
  }
  return rows;
}

}  // namespace alignmamba::train
