#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace sre {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view text, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Independent stream for a named purpose under one run seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) {
  return splitmix64(seed ^ fnv1a64(purpose));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }

  // Uniform on the open interval (lo, hi).
  double uniform_open(double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (;;) {
      const double x = dist(engine_);
      if (x > lo && x < hi) return x;
    }
  }

  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  std::vector<double> normals(std::size_t n) {
    std::vector<double> out(n);
    for (double& x : out) x = normal();
    return out;
  }
  std::vector<double> uniforms_open(std::size_t n, double lo, double hi) {
    std::vector<double> out(n);
    for (double& x : out) x = uniform_open(lo, hi);
    return out;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace sre
