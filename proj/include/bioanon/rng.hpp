#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace bioanon {

using Seed = std::uint64_t;

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a over the bytes of a tag.
constexpr std::uint64_t hash_tag(std::string_view tag) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Derives an independent sub-seed from a master seed, a stable string tag and
/// any number of integer coordinates. The result depends only on its inputs, so
/// a task reproduces regardless of the order in which tasks execute.
inline Seed derive_seed(Seed master, std::string_view tag,
                        std::initializer_list<std::uint64_t> coords = {}) {
  std::uint64_t h = mix64(master ^ mix64(hash_tag(tag)));
  for (std::uint64_t c : coords) h = mix64(h ^ mix64(c + 0x632be59bd9b4e019ULL));
  return h;
}

inline Seed derive_seed(Seed master, std::string_view tag, std::string_view key,
                        std::initializer_list<std::uint64_t> coords = {}) {
  return derive_seed(derive_seed(master, tag, {hash_tag(key)}), "coords", coords);
}

/// Random source with distributions written out explicitly: the standard
/// library's distribution objects are implementation-defined, and results here
/// must be bit-identical across toolchains.
class Rng {
 public:
  explicit Rng(Seed seed) : engine_(mix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal (Marsaglia polar method, one value per call).
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Laplace(0, scale) by inverse CDF.
  double laplace(double scale);

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

  /// Random permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
};

}  // namespace bioanon
