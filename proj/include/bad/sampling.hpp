#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bad/corruption.hpp"
#include "bad/random.hpp"
#include "bad/transformer.hpp"

namespace bad::sampling {

// Positions still masked after iteration i of I: floor(T * cos(pi * i / (2I))), 0 at i == I.
std::size_t cosine_schedule(std::size_t i, std::size_t iterations, std::size_t length);

enum class Method { oaas, cbs };
// max_probability: confidence is the largest softmax entry at a position.
// sampled_probability: confidence is the probability of the sampled token.
enum class Confidence { max_probability, sampled_probability };

struct SamplerConfig {
  Method method = Method::oaas;
  std::size_t iterations = 10;
  double temperature = 1.0;  // 0 means greedy
  std::size_t top_k = 0;     // 0 disables filtering
  Confidence confidence = Confidence::max_probability;
  double gumbel_temperature = 0.0;  // CBS only; annealed linearly to 0
  std::size_t batch = 64;           // sequences per forward pass

  void validate() const;
};

struct KnownToken {
  std::size_t position = 0;
  std::size_t token = 0;
};

struct GenerationRequest {
  std::vector<std::size_t> prompt_words;
  std::size_t length = 0;
  std::vector<KnownToken> known;  // held fixed as unmasked context
  std::optional<corruption::Permutation> permutation;  // pins z; sampled when empty
};

// One decoded position, reported to an optional observer.
struct DecodeEvent {
  std::size_t sequence = 0;
  std::size_t iteration = 0;
  std::size_t position = 0;
  std::size_t token = 0;
  std::vector<double> probabilities;  // after temperature and top-k
};
using DecodeObserver = std::function<void(const DecodeEvent&)>;

// Every request gets its own child stream forked from `rng` in request order,
// so results do not depend on config.batch. Direction and Maskbook indexing
// follow the model configuration. Throws on invalid or contradictory known tokens.
std::vector<TokenSequence> generate(transformer::Transformer& model, std::span<const GenerationRequest> requests,
                                    const SamplerConfig& config, Rng& rng, const DecodeObserver& observer = {});

// Single-sequence forms with default settings for everything but I.
TokenSequence oaas_generate(transformer::Transformer& model, const std::vector<std::size_t>& prompt_words,
                            std::size_t length, std::size_t iterations, Rng& rng, const DecodeObserver& observer = {});
TokenSequence cbs_generate(transformer::Transformer& model, const std::vector<std::size_t>& prompt_words,
                           std::size_t length, std::size_t iterations, Rng& rng);

enum class EditMode { inpaint, outpaint, prefix, suffix };

EditMode parse_edit_mode(const std::string& name);
std::string to_string(EditMode mode);

// inpaint: first and last quarter known; outpaint: central half known;
// prefix: first half known; suffix: last half known. Sorted positions.
std::vector<std::size_t> known_positions(EditMode mode, std::size_t length);

// Holds reference[known_positions(mode)] fixed and generates the rest.
TokenSequence edit_generate(transformer::Transformer& model, const std::vector<std::size_t>& prompt_words,
                            const TokenSequence& reference, EditMode mode, const SamplerConfig& config, Rng& rng);
// Batched form: one reference per request, prompts given alongside.
std::vector<TokenSequence> edit_generate(transformer::Transformer& model,
                                         std::span<const std::vector<std::size_t>> prompts,
                                         std::span<const TokenSequence> references, EditMode mode,
                                         const SamplerConfig& config, Rng& rng);

}  // namespace bad::sampling
