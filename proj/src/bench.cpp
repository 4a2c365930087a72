#include "alignmamba/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <sstream>

#ifdef ALIGNMAMBA_HAVE_OPENMP
#include <omp.h>
#endif

#include "alignmamba/errors.hpp"
#include "alignmamba/kernels.hpp"

namespace alignmamba::bench {

namespace k = kernels;

std::string to_string(Kernel kernel) {
  switch (kernel) {
    case Kernel::mamba_fusion: return "mamba_fusion";
    case Kernel::moe_mamba_fusion: return "moe_mamba_fusion";
    case Kernel::attention_fusion: return "attention_fusion";
  }
  return "?";
}

Kernel kernel_from_string(const std::string& name) {
  for (Kernel kernel : all_kernels()) {
    if (to_string(kernel) == name) return kernel;
  }
  throw ConfigError("kernels", "unknown kernel '" + name +
                                   "' (expected mamba_fusion, moe_mamba_fusion or attention_fusion)");
}

std::vector<Kernel> all_kernels() {
  return {Kernel::mamba_fusion, Kernel::moe_mamba_fusion, Kernel::attention_fusion};
}

namespace {

using Buf = std::vector<float, CountingAllocator<float>>;
using Weights = std::vector<float>;

Weights random_weights(std::mt19937_64& rng, std::size_t in, std::size_t out) {
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  const float scale = 1.0f / std::sqrt(static_cast<float>(in));
  Weights w(in * out);
  for (float& v : w) v = dist(rng) * scale;
  return w;
}

template <class V>
std::span<const float> cs(const V& v) {
  return {v.data(), v.size()};
}
template <class V>
std::span<float> ms(V& v) {
  return {v.data(), v.size()};
}

// Single-layer fusion weights shaped like the trained model's fusion stack.
struct MambaWeights {
  std::size_t d, inner, state, rank, conv = 4;
  Weights w_x, w_z;  // in projection, value and gate halves [d, inner]
  Weights conv_w, conv_b;
  Weights dt_down, dt_up, dt_bias, w_B, w_C;
  Weights A;  // [inner, state], already -exp(A_log)
  Weights w_out;

  MambaWeights(std::mt19937_64& rng, std::size_t d_model, std::size_t d_state)
      : d(d_model), inner(2 * d_model), state(d_state), rank((d_model + 15) / 16) {
    w_x = random_weights(rng, d, inner);
    w_z = random_weights(rng, d, inner);
    conv_w = random_weights(rng, conv, inner);
    conv_b.assign(inner, 0.0f);
    dt_down = random_weights(rng, inner, rank);
    dt_up = random_weights(rng, rank, inner);
    dt_bias.assign(inner, std::log(std::expm1(0.01f)));
    w_B = random_weights(rng, inner, state);
    w_C = random_weights(rng, inner, state);
    A.resize(inner * state);
    for (std::size_t c = 0; c < inner; ++c)
      for (std::size_t n = 0; n < state; ++n) A[c * state + n] = -static_cast<float>(n + 1);
    w_out = random_weights(rng, inner, d);
  }
};

// Everything after the input projection: conv, selective scan, gating, output
// projection and residual. `x` and `z` are [T, inner].
template <class OutProj>
Buf mamba_core(const MambaWeights& w, const Buf& Z, Buf& x, Buf& z, std::size_t T,
               OutProj&& out_proj) {
  const std::size_t D = w.inner, N = w.state;
  Buf xc(T * D);
  k::causal_conv<float>(cs(x), cs(w.conv_w), cs(w.conv_b), ms(xc), T, D, w.conv);
  for (float& v : xc) v = k::silu(v);
  Buf().swap(x);

  Buf low(T * w.rank), delta(T * D), B(T * N), C(T * N);
  k::matmul_serial<float>(cs(xc), cs(w.dt_down), ms(low), T, D, w.rank);
  k::matmul_serial<float>(cs(low), cs(w.dt_up), ms(delta), T, w.rank, D);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < D; ++c)
      delta[t * D + c] = k::softplus(delta[t * D + c] + w.dt_bias[c]);
  k::matmul_serial<float>(cs(xc), cs(w.w_B), ms(B), T, D, N);
  k::matmul_serial<float>(cs(xc), cs(w.w_C), ms(C), T, D, N);

  Buf y(T * D);
  k::selective_scan_serial<float>({T, D, N}, cs(xc), cs(delta), cs(w.A), cs(B), cs(C), ms(y));
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= k::silu(z[i]);

  Buf out(T * w.d);
  out_proj(y, out);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += Z[i];
  return out;
}

Buf mamba_fusion(const MambaWeights& w, const Buf& Z, std::size_t T) {
  Buf x(T * w.inner), z(T * w.inner);
  k::matmul_serial<float>(cs(Z), cs(w.w_x), ms(x), T, w.d, w.inner);
  k::matmul_serial<float>(cs(Z), cs(w.w_z), ms(z), T, w.d, w.inner);
  return mamba_core(w, Z, x, z, T, [&](const Buf& y, Buf& out) {
    k::matmul_serial<float>(cs(y), cs(w.w_out), ms(out), T, w.inner, w.d);
  });
}

struct MoEWeights {
  MambaWeights shared;  // shared experts and the common core
  std::vector<Weights> w_x, w_z, w_out;  // modality-specific experts

  MoEWeights(std::mt19937_64& rng, std::size_t d_model, std::size_t d_state, std::size_t M)
      : shared(rng, d_model, d_state) {
    for (std::size_t m = 0; m < M; ++m) {
      w_x.push_back(random_weights(rng, d_model, 2 * d_model));
      w_z.push_back(random_weights(rng, d_model, 2 * d_model));
      w_out.push_back(random_weights(rng, 2 * d_model, d_model));
    }
  }
};

// Tokens arrive as contiguous modality segments (the concatenation order of
// the fusion input), so deterministic routing is a per-segment weight merge.
Buf moe_fusion(const MoEWeights& w, const Buf& Z, std::size_t T) {
  const auto& s = w.shared;
  const std::size_t M = w.w_x.size(), d = s.d, D = s.inner;
  auto segment = [&](std::size_t m) { return std::pair{m * T / M, (m + 1) * T / M}; };
  auto merged = [](const Weights& a, const Weights& b) {
    Buf out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
  };

  Buf x(T * D), z(T * D);
  for (std::size_t m = 0; m < M; ++m) {
    const auto [lo, hi] = segment(m);
    const Buf wx = merged(s.w_x, w.w_x[m]), wz = merged(s.w_z, w.w_z[m]);
    const std::span<const float> zin(Z.data() + lo * d, (hi - lo) * d);
    k::matmul_serial<float>(zin, cs(wx), std::span<float>(x.data() + lo * D, (hi - lo) * D),
                            hi - lo, d, D);
    k::matmul_serial<float>(zin, cs(wz), std::span<float>(z.data() + lo * D, (hi - lo) * D),
                            hi - lo, d, D);
  }
  return mamba_core(s, Z, x, z, T, [&](const Buf& y, Buf& out) {
    for (std::size_t m = 0; m < M; ++m) {
      const auto [lo, hi] = segment(m);
      const Buf wo = merged(s.w_out, w.w_out[m]);
      k::matmul_serial<float>(std::span<const float>(y.data() + lo * D, (hi - lo) * D), cs(wo),
                              std::span<float>(out.data() + lo * d, (hi - lo) * d), hi - lo, D,
                              d);
    }
  });
}

struct AttentionWeights {
  std::size_t d;
  Weights w_q, w_k, w_v, w_o;
  AttentionWeights(std::mt19937_64& rng, std::size_t d_model) : d(d_model) {
    w_q = random_weights(rng, d, d);
    w_k = random_weights(rng, d, d);
    w_v = random_weights(rng, d, d);
    w_o = random_weights(rng, d, d);
  }
};

Buf attention_fusion(const AttentionWeights& w, const Buf& Z, std::size_t T) {
  const std::size_t d = w.d;
  Buf Q(T * d), K(T * d), V(T * d);
  k::matmul_serial<float>(cs(Z), cs(w.w_q), ms(Q), T, d, d);
  k::matmul_serial<float>(cs(Z), cs(w.w_k), ms(K), T, d, d);
  k::matmul_serial<float>(cs(Z), cs(w.w_v), ms(V), T, d, d);
  Buf Kt(d * T);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < d; ++j) Kt[j * T + t] = K[t * d + j];
  Buf().swap(K);

  Buf S(T * T);
  k::matmul_serial<float>(cs(Q), cs(Kt), ms(S), T, d, T);
  const float scale = 1.0f / std::sqrt(static_cast<float>(d));
  for (std::size_t i = 0; i < T; ++i) {
    float* row = S.data() + i * T;
    float mx = -std::numeric_limits<float>::infinity();
    for (std::size_t j = 0; j < T; ++j) mx = std::max(mx, row[j] * scale);
    float sum = 0.0f;
    for (std::size_t j = 0; j < T; ++j) {
      row[j] = std::exp(row[j] * scale - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < T; ++j) row[j] /= sum;
  }
  Buf O(T * d);
  k::matmul_serial<float>(cs(S), cs(V), ms(O), T, T, d);
  Buf().swap(S);
  Buf out(T * d);
  k::matmul_serial<float>(cs(O), cs(w.w_o), ms(out), T, d, d);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += Z[i];
  return out;
}

// Restores the OpenMP thread count on scope exit.
struct SingleThread {
#ifdef ALIGNMAMBA_HAVE_OPENMP
  int saved = omp_get_max_threads();
  SingleThread() { omp_set_num_threads(1); }
  ~SingleThread() { omp_set_num_threads(saved); }
#endif
};

struct Runner {
  const SweepOptions& opts;
  std::mt19937_64 rng;
  MambaWeights mamba;
  MoEWeights moe;
  AttentionWeights attention;

  explicit Runner(const SweepOptions& o)
      : opts(o),
        rng(o.seed),
        mamba(rng, o.d_model, o.d_state),
        moe(rng, o.d_model, o.d_state, o.modalities),
        attention(rng, o.d_model) {}

  // Returns {time_ms, peak_bytes}; propagates std::bad_alloc on budget overrun.
  std::pair<double, std::size_t> run(Kernel kernel, std::size_t T) {
    auto& stats = AllocStats::global();
    std::normal_distribution<float> dist;
    stats.reset(0);
    Buf Z(T * opts.d_model);
    for (float& v : Z) v = dist(rng);
    // The input sequence is owned by the caller; only the forward pass counts.
    stats.reset(opts.budget_bytes);
    const auto t0 = std::chrono::steady_clock::now();
    Buf out;
    switch (kernel) {
      case Kernel::mamba_fusion: out = mamba_fusion(mamba, Z, T); break;
      case Kernel::moe_mamba_fusion: out = moe_fusion(moe, Z, T); break;
      case Kernel::attention_fusion: out = attention_fusion(attention, Z, T); break;
    }
    const auto t1 = std::chrono::steady_clock::now();
    const std::size_t peak = stats.peak;
    volatile float sink = out.empty() ? 0.0f : out[out.size() / 2];
    (void)sink;
    out = Buf();
    stats.reset(0);
    return {std::chrono::duration<double, std::milli>(t1 - t0).count(), peak};
  }
};

void require_nonempty(const std::vector<BenchSample>& samples, const std::filesystem::path& path) {
  if (samples.empty()) throw Error("refusing to write " + path.string() + ": no samples");
}

}  // namespace

std::vector<BenchSample> run_sweep(const SweepOptions& opts) {
  if (opts.kernels.empty()) throw ConfigError("kernels", "no kernels selected");
  if (opts.lengths.empty()) throw ConfigError("lengths", "no lengths selected");
  if (opts.trials < 3) throw ConfigError("trials", "need at least 3 trials");
  if (opts.d_model == 0) throw ConfigError("d_model", "must be >= 1");
  if (!std::is_sorted(opts.lengths.begin(), opts.lengths.end()) ||
      std::adjacent_find(opts.lengths.begin(), opts.lengths.end()) != opts.lengths.end()) {
    throw ConfigError("lengths", "must be strictly ascending");
  }
  if (opts.lengths.front() < opts.modalities) {
    throw ConfigError("lengths", "shortest length must cover one token per modality");
  }

  SingleThread guard;
  Runner runner(opts);
  std::vector<BenchSample> out;
  for (Kernel kernel : opts.kernels) {
    for (std::size_t T : opts.lengths) {
      try {
        runner.run(kernel, T);  // warmup
        for (std::size_t trial = 0; trial < opts.trials; ++trial) {
          const auto [ms, peak] = runner.run(kernel, T);
          out.push_back({kernel, T, trial, ms, peak, false});
        }
      } catch (const std::bad_alloc&) {
        AllocStats::global().reset(0);
        std::erase_if(out, [&](const BenchSample& s) { return s.kernel == kernel && s.length == T; });
        out.push_back({kernel, T, 0, 0.0, opts.budget_bytes, true});
        if (opts.progress) *opts.progress << to_string(kernel) << " T=" << T << ": OOM\n";
        break;
      }
      if (opts.progress) {
        *opts.progress << to_string(kernel) << " T=" << T << ": median "
                       << *median_time(out, kernel, T) << " ms, peak "
                       << *peak_bytes(out, kernel, T) << " B\n";
      }
    }
  }
  return out;
}

double moe_overhead(std::size_t length, std::size_t trials, const SweepOptions& shape) {
  SweepOptions o = shape;
  o.budget_bytes = 0;
  SingleThread guard;
  Runner runner(o);
  double best_plain = std::numeric_limits<double>::infinity(), best_moe = best_plain;
  runner.run(Kernel::mamba_fusion, length);
  runner.run(Kernel::moe_mamba_fusion, length);
  // interleaved so that drift in machine load hits both sides alike
  for (std::size_t i = 0; i < trials; ++i) {
    best_plain = std::min(best_plain, runner.run(Kernel::mamba_fusion, length).first);
    best_moe = std::min(best_moe, runner.run(Kernel::moe_mamba_fusion, length).first);
  }
  return best_moe / best_plain;
}

void emit_csv(const std::vector<BenchSample>& samples, const std::filesystem::path& path) {
  require_nonempty(samples, path);
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << kCsvHeader << '\n' << std::setprecision(9);
  for (const auto& s : samples) {
    out << to_string(s.kernel) << ',' << s.length << ',' << s.trial << ',' << s.time_ms << ','
        << s.peak_bytes << ',' << (s.oom ? 1 : 0) << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<BenchSample> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kCsvHeader) throw ParseError(0, "bench CSV header mismatch: '" + line + "'");
  std::vector<BenchSample> out;
  std::size_t offset = line.size() + 1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> cells;
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != 6) throw ParseError(offset, "bench CSV row needs 6 fields");
    BenchSample s;
    try {
      s.kernel = kernel_from_string(cells[0]);
      s.length = std::stoull(cells[1]);
      s.trial = std::stoull(cells[2]);
      s.time_ms = std::stod(cells[3]);
      s.peak_bytes = std::stoull(cells[4]);
      s.oom = cells[5] == "1";
    } catch (const std::exception& e) {
      throw ParseError(offset, std::string("bench CSV row: ") + e.what());
    }
    out.push_back(s);
    offset += line.size() + 1;
  }
  return out;
}

std::optional<double> median_time(const std::vector<BenchSample>& samples, Kernel kernel,
                                  std::size_t length) {
  std::vector<double> t;
  for (const auto& s : samples) {
    if (s.kernel == kernel && s.length == length && !s.oom) t.push_back(s.time_ms);
  }
  if (t.empty()) return std::nullopt;
  std::sort(t.begin(), t.end());
  const std::size_t n = t.size();
  return n % 2 ? t[n / 2] : 0.5 * (t[n / 2 - 1] + t[n / 2]);
}

std::optional<std::size_t> peak_bytes(const std::vector<BenchSample>& samples, Kernel kernel,
                                      std::size_t length) {
  std::optional<std::size_t> best;
  for (const auto& s : samples) {
    if (s.kernel == kernel && s.length == length && !s.oom) {
      best = std::max(best.value_or(0), s.peak_bytes);
    }
  }
  return best;
}

namespace {

std::vector<std::size_t> lengths_run(const std::vector<BenchSample>& samples, Kernel kernel) {
  std::set<std::size_t> ls;
  for (const auto& s : samples) {
    if (s.kernel == kernel && !s.oom) ls.insert(s.length);
  }
  return {ls.begin(), ls.end()};
}

std::set<Kernel> kernels_present(const std::vector<BenchSample>& samples) {
  std::set<Kernel> ks;
  for (const auto& s : samples) ks.insert(s.kernel);
  return ks;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

}  // namespace

std::optional<double> loglog_slope(const std::vector<BenchSample>& samples, Kernel kernel) {
  const auto ls = lengths_run(samples, kernel);
  if (ls.size() < 2) return std::nullopt;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t L : ls) {
    const double x = std::log(static_cast<double>(L));
    const double y = std::log(*median_time(samples, kernel, L));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(ls.size());
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

std::map<Kernel, Complexity> default_expectations() {
  return {{Kernel::mamba_fusion, Complexity::linear},
          {Kernel::moe_mamba_fusion, Complexity::linear},
          {Kernel::attention_fusion, Complexity::quadratic}};
}

std::vector<Check> check_invariants(const std::vector<BenchSample>& samples,
                                    const std::map<Kernel, Complexity>& expect) {
  std::vector<Check> checks;
  const auto kinds = kernels_present(samples);
  auto complexity = [&](Kernel kernel) {
    auto it = expect.find(kernel);
    return it != expect.end() ? it->second : default_expectations().at(kernel);
  };

  for (Kernel kernel : kinds) {
    const std::string name = to_string(kernel);
    const auto ls = lengths_run(samples, kernel);

    bool monotone = true;
    for (std::size_t i = 1; i < ls.size(); ++i) {
      monotone = monotone && *median_time(samples, kernel, ls[i]) >= *median_time(samples, kernel, ls[i - 1]);
    }
    checks.push_back({name + " median time nondecreasing in length", monotone, ""});

    // Doubling ratios t(2T)/t(T) at T = 4096 and 8192 where both lengths ran;
    // otherwise the largest doubling pair available.
    std::vector<std::size_t> bases;
    for (std::size_t L : {std::size_t{4096}, std::size_t{8192}}) {
      if (std::binary_search(ls.begin(), ls.end(), L) && std::binary_search(ls.begin(), ls.end(), 2 * L)) {
        bases.push_back(L);
      }
    }
    if (bases.empty()) {
      for (std::size_t L : ls) {
        if (std::binary_search(ls.begin(), ls.end(), 2 * L)) bases.assign(1, L);
      }
    }
    const bool linear = complexity(kernel) == Complexity::linear;
    const double lo = linear ? 1.5 : 3.0, hi = linear ? 2.8 : 6.0;
    for (std::size_t base : bases) {
      const double r = *median_time(samples, kernel, 2 * base) / *median_time(samples, kernel, base);
      checks.push_back({name + " doubling ratio t(" + std::to_string(2 * base) + ")/t(" +
                            std::to_string(base) + ") in [" + fmt(lo) + ", " + fmt(hi) + "]",
                        r >= lo && r <= hi, "ratio " + fmt(r)});
    }

    if (complexity(kernel) == Complexity::quadratic && !ls.empty()) {
      const std::size_t L = ls.front();
      if (std::binary_search(ls.begin(), ls.end(), 4 * L)) {
        const double r = static_cast<double>(*peak_bytes(samples, kernel, 4 * L)) /
                         static_cast<double>(*peak_bytes(samples, kernel, L));
        checks.push_back({name + " peak bytes at 4x length >= 8x baseline", r >= 8.0,
                          "ratio " + fmt(r)});
      }
    }
  }

  for (Kernel q : kinds) {
    if (complexity(q) != Complexity::quadratic) continue;
    for (Kernel l : kinds) {
      if (complexity(l) != Complexity::linear) continue;
      const auto sq = loglog_slope(samples, q), sl = loglog_slope(samples, l);
      if (!sq || !sl) continue;
      checks.push_back({"log-log slope " + to_string(q) + " - " + to_string(l) + " >= 0.7",
                        *sq - *sl >= 0.7, "slopes " + fmt(*sq) + " vs " + fmt(*sl)});
    }
  }
  return checks;
}

void emit_svg(const std::vector<BenchSample>& samples, const std::filesystem::path& path) {
  require_nonempty(samples, path);
  const auto kinds = kernels_present(samples);
  const double W = 420, H = 320, ml = 70, mr = 20, mt = 40, mb = 50;
  const char* colors[] = {"#1f77b4", "#2ca02c", "#d62728"};

  std::size_t lmin = std::numeric_limits<std::size_t>::max(), lmax = 0;
  for (const auto& s : samples) {
    lmin = std::min(lmin, s.length);
    lmax = std::max(lmax, s.length);
  }
  const double lx0 = std::log10(static_cast<double>(lmin));
  const double lx1 = std::max(std::log10(static_cast<double>(lmax)), lx0 + 1e-9);

  struct Panel {
    std::string title, unit;
    bool time;
  };
  const Panel panels[] = {{"Forward latency", "ms", true}, {"Peak allocation", "MB", false}};

  std::ostringstream svg;
  svg << std::setprecision(6);
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * W << "\" height=\"" << H + 30
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  for (std::size_t p = 0; p < 2; ++p) {
    const Panel& panel = panels[p];
    const double ox = p * W;
    auto value = [&](Kernel kernel, std::size_t L) -> std::optional<double> {
      if (panel.time) return median_time(samples, kernel, L);
      if (auto b = peak_bytes(samples, kernel, L)) return static_cast<double>(*b) / (1 << 20);
      return std::nullopt;
    };
    double vmin = std::numeric_limits<double>::infinity(), vmax = 0;
    for (Kernel kernel : kinds) {
      for (std::size_t L : lengths_run(samples, kernel)) {
        const double v = *value(kernel, L);
        if (v > 0) {
          vmin = std::min(vmin, v);
          vmax = std::max(vmax, v);
        }
      }
    }
    if (!(vmax > 0)) vmin = 1, vmax = 10;
    const double ly0 = std::log10(vmin), ly1 = std::max(std::log10(vmax), ly0 + 1e-9);
    auto px = [&](double L) { return ox + ml + (std::log10(L) - lx0) / (lx1 - lx0) * (W - ml - mr); };
    auto py = [&](double v) { return mt + (ly1 - std::log10(v)) / (ly1 - ly0) * (H - mt - mb); };

    svg << "<g>\n<text x=\"" << ox + W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">"
        << panel.title << " (log-log)</text>\n";
    svg << "<rect x=\"" << ox + ml << "\" y=\"" << mt << "\" width=\"" << W - ml - mr
        << "\" height=\"" << H - mt - mb << "\" fill=\"none\" stroke=\"#444\"/>\n";
    svg << "<text x=\"" << ox + W / 2 << "\" y=\"" << H - 10
        << "\" text-anchor=\"middle\">sequence length</text>\n";
    svg << "<text x=\"" << ox + 14 << "\" y=\"" << H / 2 << "\" transform=\"rotate(-90 "
        << ox + 14 << ' ' << H / 2 << ")\" text-anchor=\"middle\">" << panel.unit << "</text>\n";
    std::set<std::size_t> all_lengths;
    for (const auto& s : samples) all_lengths.insert(s.length);
    for (std::size_t L : all_lengths) {
      svg << "<text x=\"" << px(static_cast<double>(L)) << "\" y=\"" << H - mb + 14
          << "\" text-anchor=\"middle\">" << L << "</text>\n";
    }
    svg << "<text x=\"" << ox + ml - 4 << "\" y=\"" << py(vmax) + 4 << "\" text-anchor=\"end\">"
        << fmt(vmax) << "</text>\n";
    svg << "<text x=\"" << ox + ml - 4 << "\" y=\"" << py(vmin) + 4 << "\" text-anchor=\"end\">"
        << fmt(vmin) << "</text>\n";

    std::size_t series = 0;
    for (Kernel kernel : kinds) {
      const char* color = colors[static_cast<std::size_t>(kernel) % 3];
      std::string points;
      for (std::size_t L : lengths_run(samples, kernel)) {
        const double v = *value(kernel, L);
        if (!(v > 0)) continue;
        std::ostringstream pt;
        pt << px(static_cast<double>(L)) << ',' << py(v);
        points += (points.empty() ? "" : " ") + pt.str();
        svg << "<circle cx=\"" << px(static_cast<double>(L)) << "\" cy=\"" << py(v)
            << "\" r=\"3\" fill=\"" << color << "\"/>\n";
      }
      if (!points.empty()) {
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\""
            << points << "\"/>\n";
      }
      for (const auto& s : samples) {
        if (s.kernel != kernel || !s.oom) continue;
        const double x = px(static_cast<double>(s.length)), y = mt + 8;
        svg << "<path d=\"M" << x - 5 << ',' << y - 5 << " L" << x + 5 << ',' << y + 5 << " M"
            << x - 5 << ',' << y + 5 << " L" << x + 5 << ',' << y - 5 << "\" stroke=\"" << color
            << "\" stroke-width=\"2\"/>\n"
            << "<text x=\"" << x << "\" y=\"" << y + 16 << "\" text-anchor=\"middle\" fill=\""
            << color << "\">OOM</text>\n";
      }
      const double ly = mt + 12 + 14 * static_cast<double>(series++);
      svg << "<line x1=\"" << ox + ml + 8 << "\" y1=\"" << ly + 40 << "\" x2=\"" << ox + ml + 24
          << "\" y2=\"" << ly + 40 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
          << "<text x=\"" << ox + ml + 28 << "\" y=\"" << ly + 44 << "\">" << to_string(kernel)
          << "</text>\n";
    }
    svg << "</g>\n";
  }
  svg << "</svg>\n";

  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << svg.str();
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace alignmamba::bench
