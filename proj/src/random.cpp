#include "bad/random.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace bad {

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below(0)");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  // Box-Muller; one draw per call keeps the stream position simple.
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::gumbel() {
  double u;
  do {
    u = uniform();
  } while (u <= 0.0);
  return -std::log(-std::log(u));
}

std::size_t Rng::categorical(std::span<const double> weights) {
  double total = 0;
  for (double w : weights) {
    if (!(w >= 0)) throw std::invalid_argument("categorical: negative or NaN weight");
    total += w;
  }
  if (!(total > 0)) throw std::invalid_argument("categorical: weights sum to zero");
  const double target = uniform() * total;
  double acc = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (target < acc) return i;
  }
  // Rounding left target == total; return the last positive entry.
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0) return i;
  }
  return weights.size() - 1;
}

}  // namespace bad
