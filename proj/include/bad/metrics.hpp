#pragma once

#include <cstddef>
#include <span>

#include "bad/tensor.hpp"
#include "bad/tokenizer.hpp"

namespace bad::metrics {

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2) over rows
// of [N, D] feature matrices. Needs N >= D + 1 on each side.
double frechet_gaussian_distance(const Tensor& a, const Tensor& b);

// Per-sequence features: normalized token histogram followed by the
// normalized histogram of (t, t+1) moves mod K. [N, 2K].
Tensor sequence_features(std::span<const TokenSequence> sequences, std::size_t vocabulary);

}  // namespace bad::metrics
