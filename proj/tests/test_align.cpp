#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "alignmamba/align.hpp"
#include "alignmamba/errors.hpp"
#include "support.hpp"

using namespace alignmamba;
using alignmamba::testing::random_tensor;

namespace {

TEST(CostMatrix, AnalyticCases) {
  const Tensor a = Tensor::from_rows({{1, 0, 0}});
  EXPECT_NEAR(align::cost_matrix(a, a)[0], 0.0, 1e-15);
  EXPECT_NEAR(align::cost_matrix(a, Tensor::from_rows({{0, 2, 0}}))[0], 1.0, 1e-15);
  EXPECT_NEAR(align::cost_matrix(a, Tensor::from_rows({{-3, 0, 0}}))[0], 2.0, 1e-15);
}

TEST(CostMatrix, MatchesScalarFormula) {
  std::mt19937_64 rng(1);
  const Tensor X = random_tensor({3, 5}, rng), Y = random_tensor({4, 5}, rng);
  const Tensor C = align::cost_matrix(X, Y);
  ASSERT_EQ(C.shape(), (Shape{3, 4}));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double dot = 0.0, nx = 0.0, ny = 0.0;
      for (std::size_t k = 0; k < 5; ++k) {
        dot += X.at(i, k) * Y.at(j, k);
        nx += X.at(i, k) * X.at(i, k);
        ny += Y.at(j, k) * Y.at(j, k);
      }
      EXPECT_NEAR(C.at(i, j), 1.0 - dot / std::sqrt(nx * ny), 1e-14);
    }
  }
}

TEST(CostMatrix, ZeroRowNamed) {
  try {
    align::cost_matrix(Tensor::from_rows({{1, 1}, {0, 0}}), Tensor::from_rows({{1, 0}}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
  }
}

TEST(Sinkhorn, SingleCell) {
  const auto r = align::sinkhorn_ot(Tensor({1, 1}, {0.37}), 0.05);
  EXPECT_EQ(r.distance, 0.37);
  EXPECT_EQ(r.plan[0], 1.0);
}

TEST(Sinkhorn, MarginalsHold) {
  std::mt19937_64 rng(2);
  const Tensor C = random_tensor({5, 7}, rng, 0.0, 2.0);
  const auto r = align::sinkhorn_ot(C, 0.05);
  EXPECT_LT(r.violation, 1e-6);
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 7; ++j) s += r.plan.at(i, j);
    EXPECT_NEAR(s, 1.0 / 5.0, 1e-12);
  }
  for (std::size_t j = 0; j < 7; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < 5; ++i) s += r.plan.at(i, j);
    EXPECT_NEAR(s, 1.0 / 7.0, 1e-12);
  }
  for (double p : r.plan.values()) EXPECT_GE(p, 0.0);
}

TEST(Sinkhorn, IdenticalTokensNearZero) {
  std::mt19937_64 rng(3);
  const Tensor H = random_tensor({6, 4}, rng);
  EXPECT_LT(align::sinkhorn_ot(align::cost_matrix(H, H), 1e-3).distance, 1e-3);
}

TEST(Sinkhorn, PermutationOracle) {
  std::mt19937_64 rng(4);
  const double eps = 1e-3;
  for (std::size_t n = 2; n <= 6; ++n) {
    for (int rep = 0; rep < 20; ++rep) {
      const Tensor C = random_tensor({n, n}, rng, 0.0, 2.0);
      const double exact = alignmamba::testing::brute_force_assignment(C);
      const double d = align::sinkhorn_ot(C, eps).distance;
      EXPECT_GE(d, exact - 1e-9) << "n=" << n;
      EXPECT_LE(d, exact + 2.0 * eps * std::log(static_cast<double>(n))) << "n=" << n;
    }
  }
}

TEST(Sinkhorn, IterationCapRaisesWithViolation) {
  std::mt19937_64 rng(5);
  const Tensor C = random_tensor({3, 5}, rng, 0.0, 2.0);
  try {
    align::sinkhorn_ot(C, 0.5, {1e-12, 1});
    FAIL();
  } catch (const ConvergenceError& e) {
    EXPECT_GT(e.violation(), 1e-12);
  }
}

TEST(Sinkhorn, RejectsNegativeCost) {
  EXPECT_THROW(align::sinkhorn_ot(Tensor({2, 2}, {0.1, -0.1, 0.2, 0.3}), 0.05), Error);
}

// The fixed-plan gradient is the exact derivative of the entropic objective
// <P,C> + eps * KL(P | a b^T) at its optimum.
TEST(Sinkhorn, PlanIsGradientOfEntropicObjective) {
  std::mt19937_64 rng(6);
  Tensor C = random_tensor({4, 5}, rng, 0.0, 2.0);
  const double eps = 0.05, ab = 1.0 / 20.0;
  const align::SinkhornOptions tight{1e-13, 5000};
  auto objective = [&](const Tensor& cost) {
    const auto r = align::sinkhorn_ot(cost, eps, tight);
    double v = 0.0;
    for (std::size_t k = 0; k < cost.size(); ++k) {
      const double p = r.plan[k];
      v += p * cost[k] + (p > 0.0 ? eps * p * std::log(p / ab) : 0.0);
    }
    return v;
  };
  const Tensor P = align::sinkhorn_ot(C, eps, tight).plan;
  const double h = 1e-5;
  for (std::size_t k = 0; k < C.size(); ++k) {
    const double keep = C[k];
    C[k] = keep + h;
    const double up = objective(C);
    C[k] = keep - h;
    const double down = objective(C);
    C[k] = keep;
    EXPECT_NEAR((up - down) / (2.0 * h), P[k], 1e-7) << k;
  }
}

TEST(OtLoss, IdenticalInputsPullNothing) {
  std::mt19937_64 rng(7);
  const Tensor H = random_tensor({5, 4}, rng);
  Tape tape;
  Var a = tape.leaf(H), b = tape.leaf(H);
  Var loss = align::ot_loss(a, b, 1e-3);
  EXPECT_LT(loss.value().item(), 1e-3);
  tape.backward(loss);
  const Tensor ga = tape.grad(a);
  double g2 = 0.0;
  for (double g : ga.values()) g2 += g * g;
  EXPECT_LT(std::sqrt(g2), 1e-3);
}

TEST(OtLoss, DescentOnTwoClusters) {
  // Tokens of H_m start in one cluster and are pulled towards the two
  // clusters of H_n by plain gradient steps.
  std::mt19937_64 rng(8);
  Tensor Hn = random_tensor({6, 3}, rng, -0.1, 0.1);
  for (std::size_t i = 0; i < 6; ++i) Hn.at(i, i < 3 ? 0 : 1) += 1.0;
  Tensor Hm = random_tensor({6, 3}, rng, -0.1, 0.1);
  for (std::size_t i = 0; i < 6; ++i) Hm.at(i, 2) += 1.0;
  double prev = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 50; ++step) {
    Tape tape;
    Var x = tape.leaf(Hm);
    Var loss = align::ot_loss(x, tape.constant(Hn), 0.05);
    const double v = loss.value().item();
    EXPECT_LT(v, prev) << "step " << step;
    prev = v;
    tape.backward(loss);
    const Tensor g = tape.grad(x);
    for (std::size_t k = 0; k < Hm.size(); ++k) Hm[k] -= 0.5 * g[k];
  }
  EXPECT_LT(prev, 0.1);
}

TEST(Mmd, IdenticalSetsExactlyZero) {
  std::mt19937_64 rng(9);
  const Tensor H = random_tensor({7, 4}, rng);
  EXPECT_EQ(align::mmd_loss(H, H, 0.25), 0.0);
}

TEST(Mmd, TwoSingletons) {
  const std::size_t d = 5;
  Tensor x({1, d}), y({1, d});
  for (std::size_t k = 0; k < d; ++k) y[k] = (k % 2 ? -1.0 : 1.0);  // ||x - y||^2 = d
  const double gamma = align::kernel_gamma(align::BandwidthRule::inverse_dim, 1.0, d);
  EXPECT_NEAR(align::mmd_loss(x, y, gamma), 2.0 - 2.0 * std::exp(-1.0), 1e-12);
}

TEST(Mmd, MatchesNaiveDoubleSum) {
  std::mt19937_64 rng(10);
  for (int rep = 0; rep < 50; ++rep) {
    const Tensor X = random_tensor({5, 3}, rng), Y = random_tensor({4, 3}, rng);
    EXPECT_NEAR(align::mmd_loss(X, Y, 1.0 / 3.0), alignmamba::testing::naive_mmd(X, Y, 1.0 / 3.0),
                1e-10);
  }
}

TEST(Mmd, NonNegativeAndSymmetric) {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    const Tensor X = random_tensor({6, 4}, rng), Y = random_tensor({3, 4}, rng, -2.0, 0.5);
    const double xy = align::mmd_loss(X, Y, 0.25), yx = align::mmd_loss(Y, X, 0.25);
    EXPECT_GE(xy, 0.0);
    EXPECT_NEAR(xy, yx, 1e-12);
  }
}

TEST(Mmd, BandwidthRules) {
  EXPECT_DOUBLE_EQ(align::kernel_gamma(align::BandwidthRule::inverse_dim, 9.0, 8), 0.125);
  EXPECT_DOUBLE_EQ(align::kernel_gamma(align::BandwidthRule::fixed, 2.0, 8), 0.125);
}

std::map<ModalityId, Var> bind_all(Tape& tape, const std::vector<Tensor>& hs) {
  std::map<ModalityId, Var> reps;
  for (std::size_t m = 0; m < hs.size(); ++m) reps[static_cast<ModalityId>(m)] = tape.leaf(hs[m]);
  return reps;
}

TEST(AlignmentLoss, ZeroWeightsGiveZero) {
  std::mt19937_64 rng(12);
  Tape tape;
  const auto reps = bind_all(tape, {random_tensor({3, 4}, rng), random_tensor({5, 4}, rng)});
  align::AlignConfig cfg;
  cfg.lambda_ot = cfg.lambda_mmd = 0.0;
  EXPECT_EQ(align::alignment_loss(reps, cfg).total.value().item(), 0.0);
}

TEST(AlignmentLoss, OtOnlyDecomposition) {
  std::mt19937_64 rng(13);
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({5, 4}, rng);
  Tape tape;
  const auto reps = bind_all(tape, {a, b});
  align::AlignConfig cfg;
  cfg.lambda_ot = 0.7;
  cfg.lambda_mmd = 0.0;
  const double expect = 0.7 * align::sinkhorn_ot(align::cost_matrix(a, b), cfg.blur).distance;
  EXPECT_NEAR(align::alignment_loss(reps, cfg).total.value().item(), expect, 1e-14);
}

TEST(AlignmentLoss, ThreeModalitiesSumPairs) {
  std::mt19937_64 rng(14);
  const std::vector<Tensor> hs = {random_tensor({3, 4}, rng), random_tensor({5, 4}, rng),
                                  random_tensor({4, 4}, rng)};
  align::AlignConfig cfg;
  cfg.lambda_ot = 0.3;
  cfg.lambda_mmd = 0.9;
  Tape tape;
  const auto terms = align::alignment_loss(bind_all(tape, hs), cfg);
  double ot = 0.0, mmd = 0.0;
  for (std::size_t m = 0; m < 2; ++m) {  // anchor defaults to the last modality
    ot += align::sinkhorn_ot(align::cost_matrix(hs[m], hs[2]), cfg.blur).distance;
    mmd += alignmamba::testing::naive_mmd(hs[m], hs[2], 0.25);
  }
  EXPECT_NEAR(terms.ot.value().item(), ot, 1e-12);
  EXPECT_NEAR(terms.mmd.value().item(), mmd, 1e-12);
  EXPECT_NEAR(terms.total.value().item(), 0.3 * ot + 0.9 * mmd, 1e-12);
}

TEST(AlignmentLoss, MissingAnchorAndSingleModality) {
  std::mt19937_64 rng(15);
  Tape tape;
  const auto reps = bind_all(tape, {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)});
  align::AlignConfig cfg;
  cfg.anchor = 7;
  EXPECT_THROW(align::alignment_loss(reps, cfg), Error);
  std::map<ModalityId, Var> one{{0, reps.at(0)}};
  EXPECT_THROW(align::alignment_loss(one, align::AlignConfig{}), Error);
}

TEST(AlignConfig, RejectsNegativeWeights) {
  align::AlignConfig cfg;
  cfg.lambda_mmd = -1.0;
  try {
    cfg.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "align.lambda_mmd");
  }
  cfg = {};
  cfg.blur = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

}  // namespace
