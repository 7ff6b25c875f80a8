#pragma once

#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace trajalign {

// Error taxonomy. The CLI maps these onto exit codes: config 2, missing
// artifact 3, anything else that escapes 4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingArtifact : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void log_info(const std::string& msg) { std::fprintf(stderr, "[info] %s\n", msg.c_str()); }
inline void log_warn(const std::string& msg) { std::fprintf(stderr, "[warn] %s\n", msg.c_str()); }

inline std::string format_str(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  char buf[1024];
  std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  return std::string(buf);
}

// splitmix64, the usual seed-stretching step function.
inline std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

// Deterministic seed derivation: every sampled trajectory, jitter draw and
// shuffle in a run is keyed by (master seed, stream tag, indices...).
inline std::uint64_t derive_seed(std::uint64_t master, const std::string& tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t x = master ^ fnv1a64(tag);
  splitmix64(x);
  x ^= 0x9e3779b97f4a7c15ULL * (a + 1);
  splitmix64(x);
  x ^= 0xc2b2ae3d27d4eb4fULL * (b + 1);
  splitmix64(x);
  x ^= 0x165667b19e3779f9ULL * (c + 1);
  return splitmix64(x);
}

// Evaluation seeds live in the upper half of the seed space so they can
// never collide with training-time sample seeds.
inline std::uint64_t eval_seed(std::uint64_t s) { return s | (1ULL << 63); }
inline std::uint64_t train_seed(std::uint64_t s) { return s & ~(1ULL << 63); }

// splitmix64 stream generator. The uniform/gaussian transforms are spelled
// out by hand so draws are reproducible across platforms
// (std::*_distribution is implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Marsaglia polar method, no cached spare (keeps the state trajectory a
  // pure function of the number of calls).
  double gaussian() {
    for (;;) {
      double u = 2.0 * uniform() - 1.0;
      double v = 2.0 * uniform() - 1.0;
      double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) {
        return u * std::sqrt(-2.0 * std::log(s) / s);
      }
    }
  }

  int uniform_int(int n) {  // [0, n)
    return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
  }

 private:
  std::uint64_t state_;
};

inline void check_finite(const std::vector<double>& v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw UsageError(format_str("non-finite value in %s", what));
    }
  }
}

}  // namespace trajalign
