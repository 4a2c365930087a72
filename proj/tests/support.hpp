#pragma once

// Oracles shared by the unit tests and the acceptance runner: central
// finite-difference checks (five-point stencil) against the tape's reverse
// pass, brute-force assignment and a naive MMD double sum.

#include <cstdint>
#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "alignmamba/autograd.hpp"
#include "alignmamba/params.hpp"

namespace alignmamba::testing {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0);

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCase {
  std::string name;
  std::vector<Tensor> inputs;
  Builder fn;           // output of any shape; reduced with fixed random weights
  double tolerance = 1e-5;
  double step = 1e-4;
};

inline void PrintTo(const GradCase& c, std::ostream* os) { *os << c.name; }

// Worst normwise relative error ||g_tape - g_fd|| / max(||g_tape||, ||g_fd||)
// over the inputs of the case.
double max_rel_error(const GradCase& c);

// One case per differentiable op, plus the alignment losses.
std::vector<GradCase> op_cases();

// Forward over a parameter set: reads the current parameter values.
using ParamForward = std::function<Var(Binder&)>;

// Same error measure over every parameter tensor plus, if given, the input.
double param_rel_error(std::vector<NamedParam> params, const ParamForward& fn,
                       double step = 1e-4, std::string* worst = nullptr);

double mamba_layer_error(std::uint64_t seed, std::string* worst = nullptr);
double moe_layer_error(std::uint64_t seed, bool learnable, std::string* worst = nullptr);

// Minimum over all n! permutations of (1/n) sum_i C[i, pi(i)]; for uniform
// equal-size marginals this is the exact OT optimum.
double brute_force_assignment(const Tensor& C);

// Biased squared MMD from three explicit double sums with a Gaussian kernel.
double naive_mmd(const Tensor& X, const Tensor& Y, double gamma);

}  // namespace alignmamba::testing
