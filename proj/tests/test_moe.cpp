#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "alignmamba/errors.hpp"
#include "alignmamba/moe.hpp"
#include "support.hpp"

using namespace alignmamba;
using alignmamba::testing::random_tensor;

namespace {

void zero(Linear& l) {
  for (double& v : l.weight.data()) v = 0.0;
  for (double& v : l.bias.data()) v = 0.0;
}

Tensor apply(const Linear& l, const Tensor& h) {
  Tensor out({l.out_dim()});
  for (std::size_t j = 0; j < l.out_dim(); ++j) {
    out[j] = l.bias[j];
    for (std::size_t i = 0; i < l.in_dim(); ++i) out[j] += h[i] * l.weight.at(i, j);
  }
  return out;
}

Tensor row(const Tensor& H, std::size_t t) {
  const std::size_t d = H.dim(1);
  return Tensor({d}, std::vector<double>(H.data().begin() + t * d, H.data().begin() + (t + 1) * d));
}

moe::ExpertSet random_experts(std::size_t modalities, std::mt19937_64& rng) {
  moe::ExpertSet e(modalities, 4, 6);
  e.init(rng, 1.0);
  for (auto* l : {&e.shared, &e.specific[0]}) {
    for (double& b : l->bias.data()) b = std::uniform_real_distribution<double>(-1, 1)(rng);
  }
  return e;
}

TEST(Experts, ShapesAndCount) {
  moe::ExpertSet e(3, 4, 6);
  EXPECT_EQ(e.modality_count(), 3u);
  std::vector<NamedParam> params;
  e.collect("e", params);
  EXPECT_EQ(params.size(), 2u * (3 + 1));
  for (std::size_t m = 0; m < 3; ++m) EXPECT_EQ(e.specific[m].weight.shape(), e.shared.weight.shape());
}

TEST(Experts, SharedZeroLeavesSpecific) {
  std::mt19937_64 rng(1);
  auto e = random_experts(2, rng);
  zero(e.shared);
  const Tensor h = random_tensor({4}, rng);
  EXPECT_LT(max_abs_diff(moe::moe_project(e, h, 1), apply(e.specific[1], h)), 1e-15);
}

TEST(Experts, SpecificZeroLeavesShared) {
  std::mt19937_64 rng(2);
  auto e = random_experts(3, rng);
  for (auto& s : e.specific) zero(s);
  const Tensor h = random_tensor({4}, rng);
  for (ModalityId m = 0; m < 3; ++m) {
    EXPECT_LT(max_abs_diff(moe::moe_project(e, h, m), apply(e.shared, h)), 1e-15);
  }
}

TEST(Experts, RowRoutingMatchesPerTokenSum) {
  std::mt19937_64 rng(3);
  const auto e = random_experts(3, rng);
  const Tensor H = random_tensor({7, 4}, rng);
  const std::vector<ModalityId> ids = {2, 0, 0, 1, 2, 1, 0};
  Tape tape;
  Binder bind(tape, false);
  const Tensor out = moe::moe_project(e, bind, tape.constant(H), ids).value();
  for (std::size_t t = 0; t < 7; ++t) {
    const Tensor h = row(H, t);
    const Tensor a = apply(e.specific[ids[t]], h), b = apply(e.shared, h);
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(out.at(t, j), a[j] + b[j], 1e-13);
    EXPECT_LT(max_abs_diff(moe::moe_project(e, h, ids[t]), row(out, t)), 1e-13);
  }
}

TEST(Experts, UnknownModalityRejected) {
  std::mt19937_64 rng(4);
  const auto e = random_experts(2, rng);
  EXPECT_THROW(moe::moe_project(e, random_tensor({4}, rng), 2), Error);
}

TEST(Routing, TiesGoToLowestIndex) {
  const std::vector<double> flat = {0.5, 0.5, 0.5};
  EXPECT_EQ(moe::argmax_lowest(flat), 0u);
  const std::vector<double> two = {0.1, 0.9, 0.9};
  EXPECT_EQ(moe::argmax_lowest(two), 1u);
  Linear gate(4, 3);  // zero weights and bias: all logits equal
  std::mt19937_64 rng(5);
  EXPECT_EQ(moe::learnable_route(gate, random_tensor({4}, rng)), 0u);
}

TEST(Routing, OneHotGateEqualsDeterministic) {
  std::mt19937_64 rng(6);
  const auto e = random_experts(3, rng);
  const Tensor H = random_tensor({5, 4}, rng);
  for (std::size_t k = 0; k < 3; ++k) {
    Linear gate(4, 3);
    gate.bias[k] = 1000.0;  // softmax probability exactly 1 for expert k
    Tape tape;
    Binder bind(tape, false);
    std::vector<std::size_t> chosen;
    const Tensor learned =
        moe::moe_project_learnable(e, gate, bind, tape.constant(H), &chosen).value();
    const Tensor fixed = moe::moe_project(e, bind, tape.constant(H),
                                          std::vector<ModalityId>(5, static_cast<ModalityId>(k)))
                             .value();
    EXPECT_EQ(chosen, std::vector<std::size_t>(5, k));
    EXPECT_LT(max_abs_diff(learned, fixed), 1e-12) << k;
  }
}

ssm::MambaConfig toy() {
  ssm::MambaConfig cfg;
  cfg.d_model = 6;
  cfg.d_state = 4;
  return cfg;
}

Linear merged(const moe::ExpertSet& e, ModalityId m) {
  Linear l = e.shared;
  for (std::size_t k = 0; k < l.weight.size(); ++k) l.weight[k] += e.specific[m].weight[k];
  for (std::size_t k = 0; k < l.bias.size(); ++k) l.bias[k] += e.specific[m].bias[k];
  return l;
}

TEST(MoEMambaLayer, WeightMergeOracle) {
  std::mt19937_64 rng(7);
  for (ModalityId m = 0; m < 3; ++m) {
    moe::MoEMambaLayer layer(toy(), 3);
    layer.init(rng);
    for (ModalityId other = 0; other < 3; ++other) {
      if (other == m) continue;
      zero(layer.moe_in.specific[other]);
      zero(layer.moe_out.specific[other]);
    }
    ssm::MambaLayer plain(toy());
    plain.in_proj = merged(layer.moe_in, m);
    plain.out_proj = merged(layer.moe_out, m);
    plain.core = layer.core;
    const Tensor x = random_tensor({9, 6}, rng);
    const Tensor a = moe::moe_mamba_forward(layer, x, std::vector<ModalityId>(9, m));
    EXPECT_LT(max_abs_diff(a, ssm::mamba_forward(plain, x)), 1e-10) << m;
  }
}

TEST(MoEMambaLayer, ZeroWeightsIsIdentity) {
  moe::MoEMambaLayer layer(toy(), 2);
  std::mt19937_64 rng(8);
  const Tensor x = random_tensor({4, 6}, rng);
  EXPECT_EQ(moe::moe_mamba_forward(layer, x, {0, 0, 1, 1}), x);
}

TEST(MoEMambaLayer, PermutationProbe) {
  std::mt19937_64 rng(9);
  moe::MoEMambaLayer layer(toy(), 3);
  layer.init(rng);
  const Tensor x = random_tensor({6, 6}, rng);
  const std::vector<ModalityId> ids = {0, 0, 1, 1, 2, 2};
  const std::vector<ModalityId> swapped = {1, 1, 0, 0, 2, 2};
  const Tensor base = moe::moe_mamba_forward(layer, x, ids);
  EXPECT_GT(max_abs_diff(base, moe::moe_mamba_forward(layer, x, swapped)), 1e-6);

  // Identical experts for modalities 0 and 1: the labels become interchangeable.
  layer.moe_in.specific[1] = layer.moe_in.specific[0];
  layer.moe_out.specific[1] = layer.moe_out.specific[0];
  EXPECT_EQ(max_abs_diff(moe::moe_mamba_forward(layer, x, ids),
                         moe::moe_mamba_forward(layer, x, swapped)),
            0.0);
}

TEST(MoEMambaLayer, SharedInitMatchesPlainLayer) {
  moe::MoEMambaLayer layer(toy(), 3);
  ssm::MambaLayer plain(toy());
  std::mt19937_64 shared_a(10), shared_b(10), experts(11);
  layer.init(shared_a, experts);
  plain.init(shared_b);
  EXPECT_EQ(layer.moe_in.shared.weight, plain.in_proj.weight);
  EXPECT_EQ(layer.moe_out.shared.weight, plain.out_proj.weight);
  EXPECT_EQ(layer.core.conv_weight, plain.core.conv_weight);
  EXPECT_EQ(layer.core.ssm.A_log, plain.core.ssm.A_log);
}

TEST(MoEMambaLayer, LearnableRoutesBothProjectionsAlike) {
  std::mt19937_64 rng(12);
  moe::MoEMambaLayer layer(toy(), 2, moe::Routing::learnable);
  layer.init(rng);
  // A gate that always picks expert 1 with probability 1 must reproduce
  // deterministic routing to modality 1 in both projections.
  zero(layer.gate);
  layer.gate.bias[1] = 1000.0;
  const Tensor x = random_tensor({5, 6}, rng);
  moe::MoEMambaLayer fixed = layer;
  fixed.routing = moe::Routing::deterministic;
  EXPECT_LT(max_abs_diff(moe::moe_mamba_forward(layer, x, {0, 0, 0, 0, 0}),
                         moe::moe_mamba_forward(fixed, x, {1, 1, 1, 1, 1})),
            1e-12);
}

TEST(MoEMambaLayer, IdCountMismatch) {
  moe::MoEMambaLayer layer(toy(), 2);
  EXPECT_THROW(moe::moe_mamba_forward(layer, Tensor({3, 6}), {0, 1}), ShapeError);
}

}  // namespace
