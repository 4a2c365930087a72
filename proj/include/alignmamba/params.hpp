#pragma once

#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "alignmamba/autograd.hpp"

namespace alignmamba {

/// Named, mutable view onto a parameter tensor owned by some layer.
struct NamedParam {
  std::string name;
  Tensor* value;
};

/// Binds parameter tensors onto a tape for one forward pass.
///
/// Each parameter is registered at most once per tape. In trainable mode the
/// tensors become gradient-carrying leaves; otherwise they are constants.
class Binder {
 public:
  Binder(Tape& tape, bool trainable) : tape_(&tape), trainable_(trainable) {}

  Var operator()(const Tensor& param);
  Tape& tape() const noexcept { return *tape_; }
  bool trainable() const noexcept { return trainable_; }

  // Gradient for a bound parameter after tape.backward(); zeros if unbound.
  Tensor grad(const Tensor& param) const;

 private:
  Tape* tape_;
  bool trainable_;
  std::unordered_map<const Tensor*, Var> bound_;
};

/// y = x W + b with W stored [in, out].
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out);

  std::size_t in_dim() const { return weight.dim(0); }
  std::size_t out_dim() const { return weight.dim(1); }

  Var operator()(Binder& bind, Var x) const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
  // Uniform(-scale/sqrt(in), scale/sqrt(in)) weights, zero bias.
  void init_uniform(std::mt19937_64& rng, double scale = 1.0);
};

void zero_all(std::vector<NamedParam>& params);

}  // namespace alignmamba
