#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bad/random.hpp"
#include "bad/tensor.hpp"
#include "bad/tokenizer.hpp"

namespace bad::sources {

// One condition of a Markov source: prompt text, initial distribution and
// row-stochastic K x K transition matrix (row = current state).
struct MarkovCondition {
  std::string prompt;
  std::vector<double> initial;
  std::vector<double> transition;
};

struct MarkovSource {
  std::size_t states = 0;
  std::vector<MarkovCondition> conditions;

  // Throws unless every distribution is non-negative and sums to 1 within 1e-12.
  void validate() const;
  double p(std::size_t label, std::size_t from, std::size_t to) const {
    return conditions[label].transition[from * states + to];
  }
};

// Two conditions over `states` states with distinct structured chains.
MarkovSource desk_markov_source(std::size_t states = 8);

struct LabeledSequence {
  std::size_t label = 0;
  TokenSequence tokens;
};

// Labels cycle 0, 1, ..., C-1, 0, ... so the dataset is balanced.
std::vector<LabeledSequence> generate_markov_dataset(const MarkovSource& source, std::size_t count,
                                                     std::size_t length, Rng& rng);
TokenSequence sample_markov(const MarkovSource& source, std::size_t label, std::size_t length, Rng& rng);

// Exact joint P(x_{t-1} = a, x_t = b) averaged over the transitions t in
// [first, length), K x K row-major. first >= 1.
std::vector<double> analytic_bigram(const MarkovSource& source, std::size_t label, std::size_t length,
                                    std::size_t first = 1);

// KL(empirical || analytic) of pooled bigrams over transitions t in [first, T),
// both sides smoothed additively by `smoothing` and renormalized.
double bigram_kl(std::span<const TokenSequence> sequences, const MarkovSource& source, std::size_t label,
                 std::size_t first = 1, double smoothing = 1e-6);

// Sinusoidal stand-in for motion: each prompt fixes per-feature frequency,
// amplitude and phase; each sample shifts time by a whole number of latent
// steps. Values stay in [-1, 1].
struct SinePrompt {
  std::string prompt;
  std::vector<double> cycles;     // cycles per `frames` frames, per feature
  std::vector<double> amplitude;  // <= 1
  std::vector<double> phase;      // radians
};

struct SineMotionSource {
  std::size_t features = 6;
  std::size_t frames = 64;
  std::size_t shift_step = 4;  // time shifts are multiples of this
  std::vector<SinePrompt> prompts;

  Tensor render(std::size_t prompt, std::size_t shift) const;
  Tensor sample(std::size_t prompt, Rng& rng) const;
};

SineMotionSource desk_sine_source(std::size_t features = 6, std::size_t frames = 64);
// Balanced across prompts.
std::vector<Tensor> generate_sine_dataset(const SineMotionSource& source, std::size_t count, Rng& rng);

}  // namespace bad::sources
