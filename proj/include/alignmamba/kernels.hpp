#pragma once

// Low-level numeric kernels shared by the autodiff ops (double) and the
// forward-only benchmark path (float). Each data-parallel kernel has a serial
// reference (`*_serial`) kept for tests and for the kernel benchmark; the
// default entry point is OpenMP-parallel when built with OpenMP.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace alignmamba::kernels {

template <class T>
inline T sigmoid(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                   : std::exp(x) / (T(1) + std::exp(x));
}

template <class T>
inline T softplus(T x) {
  // log(1 + e^x) without overflow
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <class T>
inline T silu(T x) {
  return x * sigmoid(x);
}

// c[m x n] = a[m x k] * b[k x n]
template <class T>
void matmul_serial(std::span<const T> a, std::span<const T> b, std::span<T> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c.data() + i * n;
    std::fill(ci, ci + n, T(0));
    const T* ai = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      const T* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

template <class T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c,
            std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static) if (m * k * n > (1u << 18))
  for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(m); ++si) {
    const auto i = static_cast<std::size_t>(si);
    T* ci = c.data() + i * n;
    std::fill(ci, ci + n, T(0));
    const T* ai = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      const T* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m x n] = a[m x k] * b[n x k]^T ; rows of both operands are contiguous.
template <class T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c,
               std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static) if (m * k * n > (1u << 18))
  for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(m); ++si) {
    const auto i = static_cast<std::size_t>(si);
    const T* ai = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* bj = b.data() + j * k;
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[i * n + j] = acc;
    }
  }
}

// out[k x n] += a[m x k]^T * g[m x n]
template <class T>
void matmul_tn_acc(std::span<const T> a, std::span<const T> g, std::span<T> out,
                   std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a.data() + i * k;
    const T* gi = g.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      T* op = out.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) op[j] += av * gi[j];
    }
  }
}

// out[m x k] += g[m x n] * b[k x n]^T
template <class T>
void matmul_nt_acc(std::span<const T> g, std::span<const T> b, std::span<T> out,
                   std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* gi = g.data() + i * n;
    T* oi = out.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T* bp = b.data() + p * n;
      T acc = T(0);
      for (std::size_t j = 0; j < n; ++j) acc += gi[j] * bp[j];
      oi[p] += acc;
    }
  }
}

// Depthwise causal convolution over time, left zero padding of width-1:
// y[t,c] = bias[c] + sum_k w[c,k] * x[t-(width-1)+k, c]
template <class T>
void causal_conv(std::span<const T> x, std::span<const T> w,
                 std::span<const T> bias, std::span<T> y, std::size_t steps,
                 std::size_t channels, std::size_t width) {
#pragma omp parallel for schedule(static) if (steps * channels > (1u << 16))
  for (std::ptrdiff_t st = 0; st < static_cast<std::ptrdiff_t>(steps); ++st) {
    const auto t = static_cast<std::size_t>(st);
    T* yt = y.data() + t * channels;
    for (std::size_t c = 0; c < channels; ++c) yt[c] = bias[c];
    for (std::size_t k = 0; k < width; ++k) {
      const std::size_t lag = width - 1 - k;
      if (lag > t) continue;
      const T* xs = x.data() + (t - lag) * channels;
      for (std::size_t c = 0; c < channels; ++c) yt[c] += w[c * width + k] * xs[c];
    }
  }
}

struct ScanDims {
  std::size_t steps;     // T
  std::size_t channels;  // d_inner
  std::size_t state;     // N
};

// Fused discretize + selective scan for one sequence.
//   a_t[d,n] = exp(delta[t,d] * A[d,n]),  b_t[d,n] = delta[t,d] * B[t,n]
//   h_t = a_t * h_{t-1} + b_t * u[t,d],    y[t,d] = sum_n C[t,n] h_t[d,n]
// When `states` is non-empty it receives every h_t laid out [t][d][n].
template <class T>
void selective_scan_serial(ScanDims dims, std::span<const T> u,
                           std::span<const T> delta, std::span<const T> A,
                           std::span<const T> B, std::span<const T> C,
                           std::span<T> y, std::span<T> states = {}) {
  const auto [steps, channels, state] = dims;
  std::vector<T> h(state);
  for (std::size_t d = 0; d < channels; ++d) {
    std::fill(h.begin(), h.end(), T(0));
    const T* Ad = A.data() + d * state;
    for (std::size_t t = 0; t < steps; ++t) {
      const T dt = delta[t * channels + d];
      const T du = dt * u[t * channels + d];
      const T* Bt = B.data() + t * state;
      const T* Ct = C.data() + t * state;
      T acc = T(0);
      for (std::size_t n = 0; n < state; ++n) {
        h[n] = std::exp(dt * Ad[n]) * h[n] + du * Bt[n];
        acc += Ct[n] * h[n];
      }
      y[t * channels + d] = acc;
      if (!states.empty()) {
        std::copy(h.begin(), h.end(), states.data() + (t * channels + d) * state);
      }
    }
  }
}

// Same contract as selective_scan_serial; channels are independent and are
// distributed across threads.
template <class T>
void selective_scan(ScanDims dims, std::span<const T> u, std::span<const T> delta,
                    std::span<const T> A, std::span<const T> B,
                    std::span<const T> C, std::span<T> y,
                    std::span<T> states = {}) {
  const auto [steps, channels, state] = dims;
#pragma omp parallel if (steps * channels * state > (1u << 16))
  {
    std::vector<T> h(state);
#pragma omp for schedule(static)
    for (std::ptrdiff_t sd = 0; sd < static_cast<std::ptrdiff_t>(channels); ++sd) {
      const auto d = static_cast<std::size_t>(sd);
      std::fill(h.begin(), h.end(), T(0));
      const T* Ad = A.data() + d * state;
      for (std::size_t t = 0; t < steps; ++t) {
        const T dt = delta[t * channels + d];
        const T du = dt * u[t * channels + d];
        const T* Bt = B.data() + t * state;
        const T* Ct = C.data() + t * state;
        T acc = T(0);
        for (std::size_t n = 0; n < state; ++n) {
          h[n] = std::exp(dt * Ad[n]) * h[n] + du * Bt[n];
          acc += Ct[n] * h[n];
        }
        y[t * channels + d] = acc;
        if (!states.empty()) {
          std::copy(h.begin(), h.end(), states.data() + (t * channels + d) * state);
        }
      }
    }
  }
}

// Reverse pass of the fused scan. `states` must hold the forward h_t. All
// gradient outputs are accumulated into (+=).
template <class T>
void selective_scan_backward(ScanDims dims, std::span<const T> u,
                             std::span<const T> delta, std::span<const T> A,
                             std::span<const T> B, std::span<const T> C,
                             std::span<const T> states, std::span<const T> gy,
                             std::span<T> gu, std::span<T> gdelta,
                             std::span<T> gA, std::span<T> gB, std::span<T> gC) {
  const auto [steps, channels, state] = dims;
  std::vector<T> gh(state);
  for (std::size_t d = 0; d < channels; ++d) {
    std::fill(gh.begin(), gh.end(), T(0));
    const T* Ad = A.data() + d * state;
    for (std::size_t tt = steps; tt-- > 0;) {
      const std::size_t td = tt * channels + d;
      const T g = gy[td];
      const T dt = delta[td];
      const T ut = u[td];
      const T* Bt = B.data() + tt * state;
      const T* Ct = C.data() + tt * state;
      const T* ht = states.data() + td * state;
      const T* hprev = tt ? states.data() + ((tt - 1) * channels + d) * state : nullptr;
      T g_delta = T(0);
      T g_u = T(0);
      for (std::size_t n = 0; n < state; ++n) {
        gC[tt * state + n] += g * ht[n];
        gh[n] += g * Ct[n];
        const T a = std::exp(dt * Ad[n]);
        const T hp = hprev ? hprev[n] : T(0);
        const T ga = gh[n] * hp;
        // d(a)/d(delta) = A a ; d(a)/dA = delta a
        g_delta += ga * Ad[n] * a;
        gA[d * state + n] += ga * dt * a;
        // b = delta * B ; contribution b * u
        const T gb = gh[n] * ut;
        g_delta += gb * Bt[n];
        gB[tt * state + n] += gb * dt;
        g_u += gh[n] * dt * Bt[n];
        gh[n] *= a;  // carry to t-1
      }
      gdelta[td] += g_delta;
      gu[td] += g_u;
    }
  }
}

/// Element of the linear-recurrence monoid h -> a*h + b.
template <class T>
struct ScanElem {
  T a;
  T b;
};

// (a1,b1) o (a2,b2) = (a1*a2, a2*b1 + b2): apply the left element first.
template <class T>
inline ScanElem<T> combine(ScanElem<T> x, ScanElem<T> y) {
  return {x.a * y.a, y.a * x.b + y.b};
}

}  // namespace alignmamba::kernels
