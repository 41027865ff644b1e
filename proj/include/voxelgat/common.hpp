#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxelgat {

enum class ErrorKind {
  dimension,
  contract,
  parameter,
  config,
  io,
  numeric,
  empty_brain,
  degenerate_channel,
  isolated_node,
  empty_graph,
};

/// All library failures are reported through this type. `kind` separates
/// user-correctable problems (bad paths, bad flags) from internal ones so the
/// CLI can pick its exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

  static bool user_facing(ErrorKind k) {
    return k == ErrorKind::parameter || k == ErrorKind::config || k == ErrorKind::io;
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) { throw Error(kind, msg); }

inline void check(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) fail(kind, msg);
}

/// Deterministic RNG. Wraps mt19937_64 but maps raw draws to doubles itself so
/// that streams are reproducible independent of the standard library's
/// distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller. Stateless per call pair.
  double normal() {
    double u1 = (static_cast<double>(eng_() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    double u2 = static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// Uniform integer in [0, n). n must be > 0.
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(eng_() % n); }

  /// Derives an independent stream for a sub-task.
  Rng fork() { return Rng(eng_() ^ 0x9e3779b97f4a7c15ull); }

 private:
  std::mt19937_64 eng_;
};

template <class T>
void fisher_yates(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

/// Percentile with linear interpolation between order statistics
/// (rank = p/100 * (n-1)). Input must be sorted ascending and nonempty.
inline double percentile_of_sorted(std::span<const double> sorted, double p) {
  check(!sorted.empty(), ErrorKind::contract, "percentile of empty sample");
  if (sorted.size() == 1) return sorted[0];
  double rank = (p / 100.0) * static_cast<double>(sorted.size() - 1);
  rank = std::clamp(rank, 0.0, static_cast<double>(sorted.size() - 1));
  std::size_t lo = static_cast<std::size_t>(rank);
  if (lo + 1 >= sorted.size()) return sorted.back();
  double frac = rank - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline double percentile(std::vector<double> values, double p) {
  std::sort(values.begin(), values.end());
  return percentile_of_sorted(values, p);
}

/// Grid dimensions, slowest-varying first: d slices of h rows of w voxels.
/// Linear index is (z*h + y)*w + x.
struct Dims {
  std::size_t d = 0, h = 0, w = 0;

  std::size_t voxels() const { return d * h * w; }
  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const { return (z * h + y) * w + x; }
  bool operator==(const Dims&) const = default;
};

}  // namespace voxelgat
