#pragma once

// Independent reference implementations used by the test suites and the
// CLI selftest. They are written from the rules directly and share no code
// with the implementations they check beyond the data types.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "bad/corruption.hpp"
#include "bad/random.hpp"
#include "bad/sampling.hpp"
#include "bad/tensor.hpp"
#include "bad/transformer.hpp"

namespace bad::oracles {

// Allowance of one (query, key) pair over [conditions..., sequence...]
// evaluated from the visibility rules: conditions see conditions; a sequence
// token sees conditions and every unmasked token; a mask token additionally
// sees mask tokens on its side of the ordering.
bool rule_allows(std::size_t query, std::size_t key, const std::vector<bool>& masked,
                 const std::vector<std::size_t>& order, corruption::Direction direction);
AttentionMask rule_mask(const std::vector<bool>& masked, const std::vector<std::size_t>& order,
                        corruption::Direction direction);

// Full-mask mask of a left-to-right (prefix) or right-to-left (suffix) causal model.
AttentionMask causal_mask(std::size_t length, corruption::Direction direction);

// Exhaustive nearest code, lowest index on ties, in long double.
std::size_t nearest_code(std::span<const real> latent, const Tensor& codes);

// floor(T cos(pi i / 2I)) in long double; 0 at i == I.
std::size_t schedule(std::size_t i, std::size_t iterations, std::size_t length);

// Mean next-token cross entropy of a causal model over every position, with
// every input slot masked and `causal_mask` attention.
double causal_lm_loss(transformer::Transformer& model, std::span<const TokenSequence> targets,
                      std::span<const std::vector<std::size_t>> prompts);

// Decodes positions T-1, T-2, ..., 0 one at a time. Uses rng.fork() for its
// draws, mirroring the per-request stream of sampling::generate.
TokenSequence autoregressive_sample(transformer::Transformer& model, const std::vector<std::size_t>& prompt,
                                    std::size_t length, Rng& rng, const sampling::DecodeObserver& observer = {});

// Quick versions of the oracle suites; one PASS/FAIL line each on `out`.
bool run_selftest(std::ostream& out);

}  // namespace bad::oracles
