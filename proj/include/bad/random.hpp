#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace bad {

// mt19937_64 with distribution code written out so that streams are
// identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  // Standard Gumbel(0, 1).
  double gumbel();
  bool bernoulli(double p) { return uniform() < p; }
  // Index drawn from an unnormalized non-negative weight vector.
  std::size_t categorical(std::span<const double> weights);
  // Independent child stream.
  Rng fork() { return Rng(engine_() ^ 0x9E3779B97F4A7C15ull); }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace bad
