#include "alignmamba/metrics.hpp"

#include <vector>

#include "alignmamba/errors.hpp"

namespace alignmamba::metrics {

double accuracy(std::span<const double> predicted, std::span<const double> truth) {
  if (predicted.size() != truth.size()) throw Error("accuracy: length mismatch");
  if (truth.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

namespace {

double class_f1(std::span<const double> predicted, std::span<const double> truth, double c) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool p = predicted[i] == c, t = truth[i] == c;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  const std::size_t denom = 2 * tp + fp + fn;
  return denom ? 2.0 * static_cast<double>(tp) / static_cast<double>(denom) : 0.0;
}

}  // namespace

double f1_score(std::span<const double> predicted, std::span<const double> truth,
                std::size_t num_classes) {
  if (predicted.size() != truth.size()) throw Error("f1_score: length mismatch");
  if (num_classes == 2) return class_f1(predicted, truth, 1.0);
  if (num_classes == 0) return 0.0;
  double total = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    total += class_f1(predicted, truth, static_cast<double>(c));
  }
  return total / static_cast<double>(num_classes);
}

}  // namespace alignmamba::metrics
