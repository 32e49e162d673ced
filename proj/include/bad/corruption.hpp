#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "bad/random.hpp"
#include "bad/tensor.hpp"
#include "bad/tokenizer.hpp"

namespace bad::corruption {

// suffix: a mask token at rank p reads masks of rank >= p.
// prefix: a mask token at rank p reads masks of rank <= p.
enum class Direction { suffix, prefix };

// Which Maskbook row a masked position receives.
enum class MaskbookIndexing { position, rank };

// A random ordering of sequence positions. Positions and ranks are 0-based:
// order[p] is the position decoded at rank p, rank[order[p]] == p.
struct Permutation {
  std::vector<std::size_t> order;
  std::vector<std::size_t> rank;

  static Permutation identity(std::size_t length);
  // Throws unless `order` is a bijection on [0, n).
  static Permutation from_order(std::vector<std::size_t> order);
  std::size_t size() const { return order.size(); }
};

// Condition slots (sentence embedding, time token) prepended to the sequence.
inline constexpr std::size_t kConditionSlots = 2;

Permutation sample_permutation(std::size_t length, Rng& rng);

// c_m ~ U(0, 0.5) with probability 0.1, else U(0.5, 1).
double sample_mask_ratio(Rng& rng);
// round-half-up(c_m * T) clamped to [1, T].
std::size_t masked_count(double mask_ratio, std::size_t length);

struct Replacement {
  TokenSequence tokens;
  std::vector<std::size_t> positions;
  double ratio = 0;
};

// floor(c_r * T) distinct positions receive a uniform token from [0, K).
Replacement random_replace(const TokenSequence& tokens, std::size_t vocabulary, double ratio, Rng& rng);
// Samples c_r ~ U(0, max_ratio) first.
Replacement random_replace(const TokenSequence& tokens, std::size_t vocabulary, Rng& rng, double max_ratio = 0.4);

// Masks over T + condition_slots rows/columns; condition slots come first.
// `masked[j]` refers to sequence position j.
AttentionMask build_bidirectional_mask(const std::vector<bool>& masked, std::size_t condition_slots = kConditionSlots);
AttentionMask build_permuted_causal_mask(const std::vector<bool>& masked, const Permutation& permutation,
                                         Direction direction, std::size_t condition_slots = kConditionSlots);
// Elementwise OR of the two masks above.
AttentionMask build_hybrid_mask(const std::vector<bool>& masked, const Permutation& permutation, Direction direction,
                                std::size_t condition_slots = kConditionSlots);

struct CorruptionConfig {
  double max_replace_ratio = 0.4;
  Direction direction = Direction::suffix;
  MaskbookIndexing maskbook_indexing = MaskbookIndexing::position;
  // Test hooks: pin the sampled quantities.
  std::optional<double> forced_mask_ratio;
  std::optional<double> forced_replace_ratio;
  std::optional<Permutation> forced_permutation;
};

struct CorruptionPlan {
  TokenSequence inputs;   // after random replacement; identities read at unmasked positions
  TokenSequence targets;  // ground truth before replacement
  std::vector<bool> masked;
  std::vector<std::size_t> masked_positions;
  std::vector<std::size_t> replaced_positions;
  Permutation permutation;
  std::size_t n_masked = 0;
  double mask_ratio = 0;
  double replace_ratio = 0;
  // Maskbook row per position (used where masked).
  std::vector<std::size_t> maskbook_rows;
  Direction direction = Direction::suffix;
  AttentionMask attention;

  std::size_t length() const { return targets.size(); }
};

std::vector<std::size_t> maskbook_rows(const Permutation& permutation, MaskbookIndexing indexing);

// Replacement, masked-set and ordering sampling, Maskbook assignment and
// hybrid mask construction for one sequence.
CorruptionPlan corrupt(const TokenSequence& tokens, std::size_t vocabulary, Rng& rng, const CorruptionConfig& config);

}  // namespace bad::corruption
