#include "bad/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace bad::corruption {

Permutation Permutation::identity(std::size_t length) {
  std::vector<std::size_t> order(length);
  std::iota(order.begin(), order.end(), std::size_t{0});
  return from_order(std::move(order));
}

Permutation Permutation::from_order(std::vector<std::size_t> order) {
  Permutation p;
  p.rank.assign(order.size(), order.size());
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (order[r] >= order.size() || p.rank[order[r]] != order.size()) {
      throw std::invalid_argument("permutation order is not a bijection");
    }
    p.rank[order[r]] = r;
  }
  p.order = std::move(order);
  return p;
}

Permutation sample_permutation(std::size_t length, Rng& rng) {
  if (length == 0) throw std::invalid_argument("sample_permutation: length must be >= 1");
  std::vector<std::size_t> order(length);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order));
  return Permutation::from_order(std::move(order));
}

double sample_mask_ratio(Rng& rng) {
  if (rng.bernoulli(0.1)) return rng.uniform(0.0, 0.5);
  return rng.uniform(0.5, 1.0);
}

std::size_t masked_count(double mask_ratio, std::size_t length) {
  const double raw = std::floor(mask_ratio * static_cast<double>(length) + 0.5);
  const double clamped = std::clamp(raw, 1.0, static_cast<double>(length));
  return static_cast<std::size_t>(clamped);
}

namespace {

// First `count` entries of a partial Fisher-Yates shuffle of [0, n), sorted.
std::vector<std::size_t> choose_positions(std::size_t n, std::size_t count, Rng& rng) {
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace

Replacement random_replace(const TokenSequence& tokens, std::size_t vocabulary, double ratio, Rng& rng) {
  if (vocabulary < 2) throw std::invalid_argument("random_replace: vocabulary must have at least two tokens");
  if (ratio < 0 || ratio > 1) throw std::invalid_argument("random_replace: ratio outside [0, 1]");
  Replacement out;
  out.tokens = tokens;
  out.ratio = ratio;
  const auto count = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(tokens.size())));
  out.positions = choose_positions(tokens.size(), count, rng);
  for (std::size_t p : out.positions) out.tokens[p] = static_cast<std::size_t>(rng.below(vocabulary));
  return out;
}

Replacement random_replace(const TokenSequence& tokens, std::size_t vocabulary, Rng& rng, double max_ratio) {
  return random_replace(tokens, vocabulary, rng.uniform(0.0, max_ratio), rng);
}

AttentionMask build_bidirectional_mask(const std::vector<bool>& masked, std::size_t condition_slots) {
  const std::size_t n = masked.size() + condition_slots;
  AttentionMask m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < condition_slots; ++c) m.set(i, c, true);
    if (i < condition_slots) continue;
    for (std::size_t j = 0; j < masked.size(); ++j) {
      if (!masked[j]) m.set(i, condition_slots + j, true);
    }
  }
  return m;
}

AttentionMask build_permuted_causal_mask(const std::vector<bool>& masked, const Permutation& permutation,
                                         Direction direction, std::size_t condition_slots) {
  if (permutation.size() != masked.size()) throw std::invalid_argument("permutation length differs from sequence");
  const std::size_t n = masked.size() + condition_slots;
  AttentionMask m(n, n);
  for (std::size_t i = 0; i < masked.size(); ++i) {
    if (!masked[i]) continue;
    const std::size_t pi = permutation.rank[i];
    for (std::size_t j = 0; j < masked.size(); ++j) {
      if (!masked[j]) continue;
      const std::size_t pj = permutation.rank[j];
      const bool allow = direction == Direction::suffix ? pj >= pi : pj <= pi;
      if (allow) m.set(condition_slots + i, condition_slots + j, true);
    }
  }
  return m;
}

AttentionMask build_hybrid_mask(const std::vector<bool>& masked, const Permutation& permutation, Direction direction,
                                std::size_t condition_slots) {
  AttentionMask hyb = build_bidirectional_mask(masked, condition_slots);
  const AttentionMask per = build_permuted_causal_mask(masked, permutation, direction, condition_slots);
  for (std::size_t i = 0; i < hyb.queries(); ++i) {
    for (std::size_t j = 0; j < hyb.keys(); ++j) {
      if (per(i, j)) hyb.set(i, j, true);
    }
  }
  if (!hyb.every_row_nonempty()) throw std::logic_error("hybrid mask has a row with no allowed keys");
  return hyb;
}

std::vector<std::size_t> maskbook_rows(const Permutation& permutation, MaskbookIndexing indexing) {
  if (indexing == MaskbookIndexing::position) {
    std::vector<std::size_t> rows(permutation.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return rows;
  }
  return permutation.rank;
}

CorruptionPlan corrupt(const TokenSequence& tokens, std::size_t vocabulary, Rng& rng, const CorruptionConfig& config) {
  const std::size_t length = tokens.size();
  if (length == 0) throw std::invalid_argument("corrupt: empty token sequence");
  for (std::size_t t : tokens) {
    if (t >= vocabulary) {
      throw std::out_of_range("corrupt: token " + std::to_string(t) + " outside vocabulary of " +
                              std::to_string(vocabulary));
    }
  }
  CorruptionPlan plan;
  plan.targets = tokens;
  plan.direction = config.direction;

  const double cr = config.forced_replace_ratio ? *config.forced_replace_ratio
                                                : rng.uniform(0.0, config.max_replace_ratio);
  Replacement rep = random_replace(tokens, vocabulary, cr, rng);
  plan.inputs = std::move(rep.tokens);
  plan.replaced_positions = std::move(rep.positions);
  plan.replace_ratio = cr;

  plan.mask_ratio = config.forced_mask_ratio ? *config.forced_mask_ratio : sample_mask_ratio(rng);
  plan.n_masked = masked_count(plan.mask_ratio, length);
  plan.masked_positions = choose_positions(length, plan.n_masked, rng);
  plan.masked.assign(length, false);
  for (std::size_t p : plan.masked_positions) plan.masked[p] = true;

  if (config.forced_permutation) {
    if (config.forced_permutation->size() != length) throw std::invalid_argument("forced permutation length mismatch");
    plan.permutation = *config.forced_permutation;
  } else {
    plan.permutation = sample_permutation(length, rng);
  }
  plan.maskbook_rows = maskbook_rows(plan.permutation, config.maskbook_indexing);

  plan.attention = build_hybrid_mask(plan.masked, plan.permutation, config.direction);
  return plan;
}

}  // namespace bad::corruption
