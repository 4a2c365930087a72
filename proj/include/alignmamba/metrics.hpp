#pragma once

#include <cstddef>
#include <span>

namespace alignmamba::metrics {

double accuracy(std::span<const double> predicted, std::span<const double> truth);

/// Binary tasks (num_classes == 2): F1 of class 1. Otherwise macro-averaged
/// F1 over classes; a class with no true and no predicted members scores 0
/// and still counts in the average.
double f1_score(std::span<const double> predicted, std::span<const double> truth,
                std::size_t num_classes);

}  // namespace alignmamba::metrics
