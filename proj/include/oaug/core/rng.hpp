#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "oaug/core/tensor.hpp"

namespace oaug {

/// Seeded random source with hand-rolled distributions so that draws are
/// identical across standard libraries and serializable for checkpoints.
/// (std::uniform_*_distribution / std::normal_distribution are
/// implementation-defined and would break cross-build determinism.)
class Rng {
 public:
  Rng() : engine_(0x9e3779b97f4a7c15ULL) {}
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1). 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling, bias-free.
  int64_t uniform_int(int64_t n) {
    if (n <= 0) throw std::invalid_argument("rng: uniform_int needs n > 0");
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return static_cast<int64_t>(x % un);
  }

  /// Standard normal via Box-Muller. Draws two uniforms per sample and keeps
  /// no spare, so the engine state fully captures the generator state.
  double normal() {
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  Tensor normal_tensor(Shape shape, double mean = 0.0, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = normal(mean, stddev);
    return t;
  }

  Tensor uniform_tensor(Shape shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = uniform(lo, hi);
    return t;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      const int64_t j = uniform_int(i + 1);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }

  std::string state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    if (is.fail()) throw std::runtime_error("rng: bad serialized state");
  }

 private:
  std::mt19937_64 engine_;
};

/// FNV-1a, used to derive independent named seed streams and to fingerprint
/// architecture descriptions.
inline uint64_t fnv1a(const std::string& s, uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t derive_seed(uint64_t master, const std::string& stream) {
  std::ostringstream os;
  os << master << "/" << stream;
  return fnv1a(os.str());
}

}  // namespace oaug
