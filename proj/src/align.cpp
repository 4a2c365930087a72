#include "alignmamba/align.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include <Eigen/Dense>

namespace alignmamba::align {

void AlignConfig::validate() const {
  if (!(lambda_ot >= 0.0)) throw ConfigError("align.lambda_ot", "must be >= 0");
  if (!(lambda_mmd >= 0.0)) throw ConfigError("align.lambda_mmd", "must be >= 0");
  if (!(blur > 0.0)) throw ConfigError("align.blur", "must be > 0");
  if (bandwidth == BandwidthRule::fixed && !(sigma > 0.0)) {
    throw ConfigError("align.sigma", "must be > 0");
  }
}

namespace {

std::string format_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

void check_pair(const Tensor& Hm, const Tensor& Hn, const char* op) {
  if (Hm.rank() != 2 || Hn.rank() != 2 || Hm.dim(1) != Hn.dim(1)) {
    throw ShapeError(std::string(op) + ": " + to_string(Hm.shape()) + " vs " +
                     to_string(Hn.shape()));
  }
  if (Hm.dim(0) == 0 || Hn.dim(0) == 0) {
    throw ShapeError(std::string(op) + ": empty token set");
  }
}

std::vector<double> row_norms(const Tensor& H, const char* which) {
  const std::size_t r = H.dim(0), c = H.dim(1);
  std::vector<double> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += H[i * c + j] * H[i * c + j];
    norms[i] = std::sqrt(s);
    if (norms[i] == 0.0) {
      throw Error(std::string("cost_matrix: zero-norm token at row ") + std::to_string(i) +
                  " of " + which);
    }
  }
  return norms;
}

double log_sum_exp(const double* x, std::size_t n, std::size_t stride) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, x[i * stride]);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i * stride] - mx);
  return mx + std::log(s);
}

}  // namespace

Tensor cost_matrix(const Tensor& Hm, const Tensor& Hn) {
  check_pair(Hm, Hn, "cost_matrix");
  const auto nm = row_norms(Hm, "H_m");
  const auto nn = row_norms(Hn, "H_n");
  const std::size_t tm = Hm.dim(0), tn = Hn.dim(0), d = Hm.dim(1);
  Tensor C({tm, tn});
  for (std::size_t i = 0; i < tm; ++i) {
    for (std::size_t j = 0; j < tn; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += Hm[i * d + k] * Hn[j * d + k];
      C[i * tn + j] = std::clamp(1.0 - dot / (nm[i] * nn[j]), 0.0, 2.0);
    }
  }
  return C;
}

SinkhornResult sinkhorn_ot(const Tensor& C, double blur, const SinkhornOptions& opts) {
  if (C.rank() != 2 || C.size() == 0) {
    throw ShapeError("sinkhorn_ot: cost must be a non-empty matrix, got " +
                     to_string(C.shape()));
  }
  if (!(blur > 0.0)) throw Error("sinkhorn_ot: blur must be > 0");
  const std::size_t n = C.dim(0), m = C.dim(1);
  double cmax = 0.0;
  for (double c : C.data()) {
    if (!std::isfinite(c) || c < 0.0) {
      throw Error("sinkhorn_ot: cost entries must be finite and nonnegative");
    }
    cmax = std::max(cmax, c);
  }
  const double a = 1.0 / static_cast<double>(n), b = 1.0 / static_cast<double>(m);
  SinkhornResult res;
  res.plan = Tensor({n, m});

  if (n == 1 || m == 1) {
    // The marginal constraints leave exactly one feasible plan.
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) res.plan[i * m + j] = n == 1 ? b : a;
    for (std::size_t k = 0; k < C.size(); ++k) res.distance += res.plan[k] * C[k];
    return res;
  }

  const double log_a = std::log(a), log_b = std::log(b);
  std::vector<double> f(n, 0.0), g(m, 0.0), buf(std::max(n, m));
  double eps = std::max(cmax, blur);
  auto plan_entry = [&](std::size_t i, std::size_t j) {
    return std::exp((f[i] + g[j] - C[i * m + j]) / eps + log_a + log_b);
  };
  auto violation_at = [&](const std::vector<double>& ff, const std::vector<double>& gg,
                          bool with_columns) {
    std::vector<double> col(m, 0.0);
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        const double p = std::exp((ff[i] + gg[j] - C[i * m + j]) / eps + log_a + log_b);
        s += p;
        col[j] += p;
      }
      worst = std::max(worst, std::abs(s - a));
    }
    if (with_columns) {
      for (double c : col) worst = std::max(worst, std::abs(c - b));
    }
    return worst;
  };
  auto violation = [&](bool with_columns) { return violation_at(f, g, with_columns); };
  auto dual = [&](const std::vector<double>& ff, const std::vector<double>& gg) {
    double d = 0.0, mass = 0.0;
    for (std::size_t i = 0; i < n; ++i) d += a * ff[i];
    for (std::size_t j = 0; j < m; ++j) d += b * gg[j];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j)
        mass += std::exp((ff[i] + gg[j] - C[i * m + j]) / eps + log_a + log_b);
    return d - eps * mass;
  };
  // Plain Sinkhorn contracts slowly once the plan is close to a vertex; past
  // this many sweeps in a stage the dual is finished with Newton steps.
  const std::size_t sweeps_before_newton = std::min<std::size_t>(100, opts.max_iterations);

  for (;;) {
    const bool last = eps <= blur;
    double viol = std::numeric_limits<double>::infinity();
    std::size_t it = 0;
    while (it < sweeps_before_newton) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) buf[j] = (g[j] - C[i * m + j]) / eps + log_b;
        f[i] = -eps * log_sum_exp(buf.data(), m, 1);
      }
      for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t i = 0; i < n; ++i) buf[i] = (f[i] - C[i * m + j]) / eps + log_a;
        g[j] = -eps * log_sum_exp(buf.data(), n, 1);
      }
      ++it;
      // column marginals are exact after the g-update; rows carry the error
      viol = violation(false);
      if (viol < opts.tolerance) break;
    }
    while (!(viol < opts.tolerance) && it < opts.max_iterations) {
      // Newton ascent on the dual: the Hessian is -(1/eps) [[diag r, P], [P^T, diag c]],
      // singular along (1, -1); a tiny ridge picks the minimum-norm step.
      Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n + m, n + m);
      Eigen::VectorXd grad(n + m);
      std::vector<double> col(m, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        double r = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
          const double p = plan_entry(i, j);
          H(i, n + j) = H(n + j, i) = p;
          r += p;
          col[j] += p;
        }
        H(i, i) = r;
        grad(i) = a - r;
      }
      for (std::size_t j = 0; j < m; ++j) {
        H(n + j, n + j) = col[j];
        grad(n + j) = b - col[j];
      }
      H.diagonal().array() += 1e-14 * H.trace();
      const Eigen::VectorXd step = eps * H.ldlt().solve(grad);
      const double d0 = dual(f, g);
      std::vector<double> f1(n), g1(m);
      // Close to the optimum the dual gain drops below rounding, so a step
      // that reduces the marginal violation is accepted as well.
      double t = 1.0, viol1 = viol;
      for (; t > 1e-10; t *= 0.5) {
        for (std::size_t i = 0; i < n; ++i) f1[i] = f[i] + t * step(i);
        for (std::size_t j = 0; j < m; ++j) g1[j] = g[j] + t * step(n + j);
        viol1 = violation_at(f1, g1, true);
        if (dual(f1, g1) > d0 || viol1 < viol) break;
      }
      if (!(t > 1e-10)) break;
      f.swap(f1);
      g.swap(g1);
      ++it;
      viol = viol1;
    }
    res.iterations += it;
    if (last) {
      res.violation = viol;
      if (!(viol < opts.tolerance)) {
        throw ConvergenceError(viol, "sinkhorn_ot: no convergence after " +
                                         std::to_string(it) +
                                         " iterations at epsilon " + std::to_string(eps) +
                                         ", marginal violation " + format_g(viol));
      }
      break;
    }
    eps = std::max(eps * 0.5, blur);
  }

  std::vector<double> P(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      P[i * m + j] = plan_entry(i, j);

  // Round onto the transport polytope: shrink rows, shrink columns, then
  // spread the remaining deficit as a rank-one correction.
  for (std::size_t i = 0; i < n; ++i) {
    double r = 0.0;
    for (std::size_t j = 0; j < m; ++j) r += P[i * m + j];
    const double s = r > a ? a / r : 1.0;
    for (std::size_t j = 0; j < m; ++j) P[i * m + j] *= s;
  }
  for (std::size_t j = 0; j < m; ++j) {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) c += P[i * m + j];
    const double s = c > b ? b / c : 1.0;
    for (std::size_t i = 0; i < n; ++i) P[i * m + j] *= s;
  }
  std::vector<double> er(n), ec(m);
  double er_l1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double r = 0.0;
    for (std::size_t j = 0; j < m; ++j) r += P[i * m + j];
    er[i] = std::max(a - r, 0.0);
    er_l1 += er[i];
  }
  for (std::size_t j = 0; j < m; ++j) {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) c += P[i * m + j];
    ec[j] = std::max(b - c, 0.0);
  }
  if (er_l1 > 0.0) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) P[i * m + j] += er[i] * ec[j] / er_l1;
  }

  for (std::size_t k = 0; k < P.size(); ++k) {
    res.plan[k] = P[k];
    res.distance += P[k] * C[k];
  }
  return res;
}

Var ot_loss(Var Hm, Var Hn, double blur, const SinkhornOptions& opts) {
  check_pair(Hm.value(), Hn.value(), "ot_loss");
  row_norms(Hm.value(), "H_m");
  row_norms(Hn.value(), "H_n");
  Tape& tape = *Hm.tape;
  Var one = tape.constant(Tensor::scalar(1.0));
  auto normalize = [&](Var H) {
    Var norms = sqrt(sum(square(H), {1}));
    return scale_rows(H, div(one, norms));
  };
  Var cos = matmul(normalize(Hm), transpose(normalize(Hn)));
  Var C = sub(one, cos);
  Tensor cost = C.value();
  for (double& c : cost.data()) c = std::clamp(c, 0.0, 2.0);  // rounding at cos = +-1
  const SinkhornResult sol = sinkhorn_ot(cost, blur, opts);
  return sum(mul(C, tape.constant(sol.plan)));
}

double kernel_gamma(BandwidthRule rule, double sigma, std::size_t dim) {
  if (rule == BandwidthRule::inverse_dim) return 1.0 / static_cast<double>(dim);
  return 1.0 / (2.0 * sigma * sigma);
}

namespace {

// Kernel block sum over X x Y, optionally skipping the diagonal.
double block_sum(const Tensor& X, const Tensor& Y, double gamma, bool skip_diag) {
  const std::size_t nx = X.dim(0), ny = Y.dim(0), d = X.dim(1);
  double s = 0.0;
  for (std::size_t i = 0; i < nx; ++i) {
    for (std::size_t j = 0; j < ny; ++j) {
      if (skip_diag && i == j) continue;
      double dist = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = X[i * d + k] - Y[j * d + k];
        dist += diff * diff;
      }
      s += std::exp(-gamma * dist);
    }
  }
  return s;
}

// Adds w * d/dX sum_{i,j} k(x_i, y_j) into gx (and the Y-side into gy).
void block_grad(const Tensor& X, const Tensor& Y, double gamma, double w, bool skip_diag,
                std::vector<double>& gx, std::vector<double>& gy) {
  const std::size_t nx = X.dim(0), ny = Y.dim(0), d = X.dim(1);
  for (std::size_t i = 0; i < nx; ++i) {
    for (std::size_t j = 0; j < ny; ++j) {
      if (skip_diag && i == j) continue;
      double dist = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = X[i * d + k] - Y[j * d + k];
        dist += diff * diff;
      }
      const double kv = std::exp(-gamma * dist);
      const double c = -2.0 * gamma * kv * w;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = X[i * d + k] - Y[j * d + k];
        gx[i * d + k] += c * diff;
        gy[j * d + k] -= c * diff;
      }
    }
  }
}

struct MmdWeights {
  double xx, xy, yy;
};

MmdWeights mmd_weights(std::size_t tm, std::size_t tn, bool unbiased) {
  const double m = static_cast<double>(tm), n = static_cast<double>(tn);
  if (unbiased) {
    if (tm < 2 || tn < 2) throw Error("mmd_loss: unbiased estimator needs >= 2 tokens per side");
    return {1.0 / (m * (m - 1.0)), 2.0 / (m * n), 1.0 / (n * (n - 1.0))};
  }
  return {1.0 / (m * m), 2.0 / (m * n), 1.0 / (n * n)};
}

}  // namespace

double mmd_loss(const Tensor& Hm, const Tensor& Hn, double gamma, bool unbiased) {
  check_pair(Hm, Hn, "mmd_loss");
  const MmdWeights w = mmd_weights(Hm.dim(0), Hn.dim(0), unbiased);
  const double xx = w.xx * block_sum(Hm, Hm, gamma, unbiased);
  const double yy = w.yy * block_sum(Hn, Hn, gamma, unbiased);
  const double xy = w.xy * block_sum(Hm, Hn, gamma, false);
  return (xx + yy) - xy;
}

Var mmd_loss(Var Hm, Var Hn, double gamma, bool unbiased) {
  const double value = mmd_loss(Hm.value(), Hn.value(), gamma, unbiased);
  const std::size_t m_id = Hm.id, n_id = Hn.id;
  return Hm.tape->push(
      Tensor::scalar(value), "mmd_loss", {m_id, n_id},
      [=](Tape& t, const Tape::Grad& g) {
        const Tensor& X = t.value(m_id);
        const Tensor& Y = t.value(n_id);
        const MmdWeights w = mmd_weights(X.dim(0), Y.dim(0), unbiased);
        std::vector<double> gx(X.size(), 0.0), gy(Y.size(), 0.0);
        // self-blocks: both arguments move with the same tensor
        block_grad(X, X, gamma, w.xx, unbiased, gx, gx);
        block_grad(Y, Y, gamma, w.yy, unbiased, gy, gy);
        block_grad(X, Y, gamma, -w.xy, false, gx, gy);
        for (double& v : gx) v *= g[0];
        for (double& v : gy) v *= g[0];
        t.accumulate(m_id, gx);
        t.accumulate(n_id, gy);
      });
}

AlignmentTerms alignment_loss(const std::map<ModalityId, Var>& reps, const AlignConfig& cfg,
                              const SinkhornOptions& opts) {
  cfg.validate();
  if (reps.size() < 2) throw Error("alignment_loss: needs at least two modalities");
  const ModalityId anchor_id = cfg.anchor == kLastModality ? reps.rbegin()->first : cfg.anchor;
  auto anchor = reps.find(anchor_id);
  if (anchor == reps.end()) {
    throw Error("alignment_loss: anchor modality " + std::to_string(anchor_id) +
                " missing");
  }
  Tape& tape = *anchor->second.tape;
  Var H_anchor = anchor->second;
  const double gamma = kernel_gamma(cfg.bandwidth, cfg.sigma, H_anchor.dim(1));
  Var ot_sum = tape.constant(Tensor::scalar(0.0));
  Var mmd_sum = tape.constant(Tensor::scalar(0.0));
  for (const auto& [id, H] : reps) {
    if (id == anchor_id) continue;
    ot_sum = add(ot_sum, ot_loss(H, H_anchor, cfg.blur, opts));
    mmd_sum = add(mmd_sum, mmd_loss(H, H_anchor, gamma, cfg.unbiased_mmd));
  }
  Var total = add(scale(ot_sum, cfg.lambda_ot), scale(mmd_sum, cfg.lambda_mmd));
  return {ot_sum, mmd_sum, total};
}

}  // namespace alignmamba::align
