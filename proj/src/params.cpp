#include "alignmamba/params.hpp"

#include <algorithm>
#include <cmath>

namespace alignmamba {

Var Binder::operator()(const Tensor& param) {
  auto it = bound_.find(&param);
  if (it != bound_.end()) return it->second;
  Var v = trainable_ ? tape_->leaf(param) : tape_->constant(param);
  bound_.emplace(&param, v);
  return v;
}

Tensor Binder::grad(const Tensor& param) const {
  auto it = bound_.find(&param);
  if (it == bound_.end()) return Tensor(param.shape());
  return tape_->grad(it->second);
}

Linear::Linear(std::size_t in, std::size_t out) : weight({in, out}), bias({out}) {}

Var Linear::operator()(Binder& bind, Var x) const {
  return linear(x, bind(weight), bind(bias));
}

void Linear::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".weight", &weight});
  out.push_back({prefix + ".bias", &bias});
}

void Linear::init_uniform(std::mt19937_64& rng, double scale) {
  const double bound = scale / std::sqrt(static_cast<double>(in_dim()));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& w : weight.data()) w = dist(rng);
  std::fill(bias.data().begin(), bias.data().end(), 0.0);
}

void zero_all(std::vector<NamedParam>& params) {
  for (auto& p : params) std::fill(p.value->data().begin(), p.value->data().end(), 0.0);
}

}  // namespace alignmamba
