#pragma once

// Forward-only efficiency sweep of the fusion stage: a Mamba fusion layer, its
// modality-aware MoE variant and a naive single-head attention layer that
// materializes the full T x T score matrix. Activations go through a counting
// allocator so that peak memory can be reported and capped.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <new>
#include <optional>
#include <string>
#include <vector>

namespace alignmamba::bench {

/// Byte accounting shared by every CountingAllocator. Benchmarks are single
/// threaded, so plain counters suffice.
struct AllocStats {
  std::size_t current = 0;
  std::size_t peak = 0;
  std::size_t budget = 0;  // 0 = unlimited
  std::size_t allocations = 0;
  std::size_t deallocations = 0;

  static AllocStats& global() {
    static AllocStats s;
    return s;
  }
  void reset(std::size_t new_budget) { *this = AllocStats{0, 0, new_budget, 0, 0}; }
};

template <class T>
struct CountingAllocator {
  using value_type = T;

  CountingAllocator() = default;
  template <class U>
  CountingAllocator(const CountingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    auto& s = AllocStats::global();
    const std::size_t bytes = n * sizeof(T);
    if (s.budget && s.current + bytes > s.budget) throw std::bad_alloc();
    T* p = std::allocator<T>{}.allocate(n);
    s.current += bytes;
    if (s.current > s.peak) s.peak = s.current;
    ++s.allocations;
    return p;
  }
  void deallocate(T* p, std::size_t n) noexcept {
    auto& s = AllocStats::global();
    s.current -= n * sizeof(T);
    ++s.deallocations;
    std::allocator<T>{}.deallocate(p, n);
  }

  template <class U>
  bool operator==(const CountingAllocator<U>&) const noexcept { return true; }
};

enum class Kernel { mamba_fusion, moe_mamba_fusion, attention_fusion };
std::string to_string(Kernel k);
/// Throws ConfigError (key "kernels") for an unknown name.
Kernel kernel_from_string(const std::string& name);
std::vector<Kernel> all_kernels();

struct BenchSample {
  Kernel kernel = Kernel::mamba_fusion;
  std::size_t length = 0;
  std::size_t trial = 0;
  double time_ms = 0.0;
  std::size_t peak_bytes = 0;
  bool oom = false;  // marker row: the kernel ran out of budget at this length
};

struct SweepOptions {
  std::vector<Kernel> kernels = all_kernels();
  std::vector<std::size_t> lengths = {1024, 2048, 4096, 8192, 16384};
  std::size_t trials = 10;
  std::size_t d_model = 128;
  std::size_t d_state = 16;
  std::size_t modalities = 3;  // segments routed by the MoE kernel
  std::size_t budget_bytes = std::size_t{1} << 30;
  std::uint64_t seed = 0;
  std::ostream* progress = nullptr;
};

/// Per (kernel, length): one discarded warmup pass, then `trials` timed
/// passes on a single thread. Running out of budget emits one OOM row and
/// moves on to the next kernel.
std::vector<BenchSample> run_sweep(const SweepOptions& opts);

inline constexpr const char* kCsvHeader = "kernel,length,trial,time_ms,peak_bytes,oom";
/// Both emitters refuse an empty sample list without touching the file.
void emit_csv(const std::vector<BenchSample>& samples, const std::filesystem::path& path);
std::vector<BenchSample> read_csv(const std::filesystem::path& path);
void emit_svg(const std::vector<BenchSample>& samples, const std::filesystem::path& path);

/// Median over non-OOM trials; empty if the kernel never ran at that length.
std::optional<double> median_time(const std::vector<BenchSample>& samples, Kernel k,
                                  std::size_t length);
std::optional<std::size_t> peak_bytes(const std::vector<BenchSample>& samples, Kernel k,
                                      std::size_t length);
/// Least-squares slope of log(median time) against log(length).
std::optional<double> loglog_slope(const std::vector<BenchSample>& samples, Kernel k);

enum class Complexity { linear, quadratic };
std::map<Kernel, Complexity> default_expectations();

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Scaling checks for whatever kernels and lengths the samples cover:
/// monotone median time, doubling-ratio bands per expected complexity, the
/// quadratic memory growth of quadratic kernels and slope separation between
/// quadratic and linear kernels.
std::vector<Check> check_invariants(const std::vector<BenchSample>& samples,
                                    const std::map<Kernel, Complexity>& expect);

/// Best-of-trials time of the deterministic MoE fusion layer divided by that
/// of the plain fusion layer at the same shape.
double moe_overhead(std::size_t length, std::size_t trials, const SweepOptions& shape);

}  // namespace alignmamba::bench
