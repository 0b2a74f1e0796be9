#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmicl {

inline constexpr const char* kVersion = "0.1.0";

// Invalid or inconsistent configuration (bad dimensions in a config, unknown
// enum tag, malformed JSON field). CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape mismatch between runtime arguments (matrix/vector dimensions).
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failure: non-finite inputs, degenerate denominators, failed
// unimodality assumptions.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// splitmix64 step; used only to derive stream seeds, never as the main rng.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Mixes (seed, tag, index) into one well-spread 64-bit value so that distinct
// purposes and parallel units get statistically independent streams.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  std::uint64_t s = seed;
  std::uint64_t a = splitmix64(s);
  s ^= tag * 0x9e3779b97f4a7c15ULL;
  std::uint64_t b = splitmix64(s);
  s ^= index * 0xc2b2ae3d27d4eb4fULL;
  std::uint64_t c = splitmix64(s);
  return a ^ (b << 1) ^ (c >> 1);
}

inline std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  return std::mt19937_64(mix_seed(seed, tag, index));
}

// Fixed-order pairwise summation. Deterministic for a given input order and
// far more accurate than a running sum on long vectors.
inline double pairwise_sum(const double* v, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += v[i];
    return s;
  }
  std::size_t half = n / 2;
  return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

inline double pairwise_sum(const std::vector<double>& v) {
  return pairwise_sum(v.data(), v.size());
}

inline double pairwise_mean(const std::vector<double>& v) {
  if (v.empty()) throw DimensionError("pairwise_mean: empty vector");
  return pairwise_sum(v) / static_cast<double>(v.size());
}

// Sample standard deviation (ddof = 1); 0 for fewer than two samples.
inline double sample_std(const std::vector<double>& v) {
  std::size_t n = v.size();
  if (n < 2) return 0.0;
  double mu = pairwise_mean(v);
  std::vector<double> sq(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = v[i] - mu;
    sq[i] = d * d;
  }
  return std::sqrt(pairwise_sum(sq) / static_cast<double>(n - 1));
}

// Integer power by repeated squaring. Overflow yields +/-inf, which callers
// treat as an ordinary comparison value. For very large exponents the exp/log
// route avoids intermediate overflow in the squaring chain.
inline double powi(double base, long long n) {
  if (n < 0) throw NumericError("powi: negative exponent");
  if (n == 0) return 1.0;
  if (n > 1000) {
    if (base == 0.0) return 0.0;
    double mag = std::exp(static_cast<double>(n) * std::log(std::fabs(base)));
    bool negative = (base < 0.0) && (n % 2 != 0);
    return negative ? -mag : mag;
  }
  double acc = 1.0;
  double b = base;
  long long e = n;
  while (e > 0) {
    if (e & 1) acc *= b;
    b *= b;
    e >>= 1;
  }
  return acc;
}

// sum_{k=0}^{T-1} ratio^k. Plain loop: T stays small everywhere this is used
// and the loop avoids the cancellation traps of the closed form near ratio=1.
inline double geometric_sum(double ratio, int t) {
  double acc = 0.0;
  double term = 1.0;
  for (int k = 0; k < t; ++k) {
    acc += term;
    term *= ratio;
  }
  return acc;
}

// Worker count for parallel loops: MMICL_WORKERS if set, else hardware
// autodetect. Results never depend on this value; it only changes scheduling.
int worker_count();

// Runs fn(i) for i in [0, n). Each index writes only its own output slot, so
// the reduction order (and therefore the result) is scheduling-independent.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// FNV-1a over a byte string; used for config fingerprints in emitted metadata.
inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_hex(std::uint64_t value);

// Shortest decimal rendering that round-trips a double (17 significant
// digits), with a fixed "C" locale so emitted files are environment-stable.
std::string format_double(double value);

}  // namespace mmicl
