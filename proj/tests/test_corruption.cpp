#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "bad/corruption.hpp"
#include "bad/oracles.hpp"

using namespace bad;
using namespace bad::corruption;

namespace {

constexpr std::size_t S = kConditionSlots;

// Allowed sequence columns of a sequence row, as 0-based positions.
std::vector<std::size_t> allowed_positions(const AttentionMask& m, std::size_t position) {
  std::vector<std::size_t> out;
  for (std::size_t k = S; k < m.keys(); ++k) {
    if (m(S + position, k)) out.push_back(k - S);
  }
  return out;
}

std::vector<bool> mask_of(std::size_t length, std::initializer_list<std::size_t> positions) {
  std::vector<bool> m(length, false);
  for (std::size_t p : positions) m[p] = true;
  return m;
}

// Mixture CDF of the mask ratio: 0.1 * U(0, 0.5) + 0.9 * U(0.5, 1).
double ratio_cdf(double c) {
  if (c <= 0) return 0;
  if (c <= 0.5) return 0.2 * c;
  if (c <= 1) return 0.1 + 1.8 * (c - 0.5);
  return 1;
}

}  // namespace

TEST(Permutation, IdentityAndInverse) {
  Rng rng(1);
  EXPECT_EQ(sample_permutation(1, rng).order, std::vector<std::size_t>{0});
  for (int i = 0; i < 100; ++i) {
    const Permutation p = sample_permutation(1 + rng.below(20), rng);
    std::vector<std::size_t> sorted = p.order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t j = 0; j < sorted.size(); ++j) ASSERT_EQ(sorted[j], j);
    for (std::size_t r = 0; r < p.size(); ++r) ASSERT_EQ(p.rank[p.order[r]], r);
  }
  EXPECT_THROW(Permutation::from_order({0, 0}), std::invalid_argument);
  EXPECT_THROW(Permutation::from_order({0, 2}), std::invalid_argument);
  EXPECT_THROW(sample_permutation(0, rng), std::invalid_argument);
}

TEST(Permutation, UniformOverOrderingsOfThree) {
  Rng rng(2);
  std::map<std::vector<std::size_t>, int> counts;
  for (int i = 0; i < 60000; ++i) ++counts[sample_permutation(3, rng).order];
  ASSERT_EQ(counts.size(), 6u);
  for (const auto& [order, n] : counts) EXPECT_NEAR(n, 10000, 400);
}

TEST(MaskRatio, MixtureMeanAndCountRounding) {
  Rng rng(3);
  double total = 0;
  const int draws = 1000000;
  for (int i = 0; i < draws; ++i) total += sample_mask_ratio(rng);
  EXPECT_NEAR(total / draws, 0.1 * 0.25 + 0.9 * 0.75, 0.01);
  EXPECT_EQ(masked_count(1.0, 16), 16u);
  EXPECT_EQ(masked_count(0.0, 16), 1u);
  EXPECT_EQ(masked_count(0.5 / 16, 16), 1u);
  EXPECT_EQ(masked_count(2.5 / 16, 16), 3u);  // half rounds up
}

TEST(RandomReplace, FloorCountAndIdentity) {
  Rng rng(4);
  const TokenSequence tokens = {0, 1, 2, 3, 4, 5, 6, 7, 0, 1};
  EXPECT_EQ(random_replace(tokens, 8, 0.0, rng).tokens, tokens);
  const Replacement r = random_replace(tokens, 8, 0.35, rng);
  EXPECT_EQ(r.positions.size(), 3u);
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    if (std::find(r.positions.begin(), r.positions.end(), j) == r.positions.end()) EXPECT_EQ(r.tokens[j], tokens[j]);
  }
  for (int i = 0; i < 1000; ++i) EXPECT_LE(random_replace(tokens, 8, rng).ratio, 0.4);
  EXPECT_THROW(random_replace(tokens, 1, 0.2, rng), std::invalid_argument);
}

TEST(Masks, BidirectionalExamples) {
  const AttentionMask none = build_bidirectional_mask(std::vector<bool>(3, false));
  for (std::size_t p = 0; p < 3; ++p) EXPECT_EQ(allowed_positions(none, p), (std::vector<std::size_t>{0, 1, 2}));
  const AttentionMask all = build_bidirectional_mask(std::vector<bool>(3, true));
  for (std::size_t p = 0; p < 3; ++p) {
    EXPECT_TRUE(allowed_positions(all, p).empty());
    EXPECT_TRUE(all(S + p, 0) && all(S + p, 1));
  }
  const AttentionMask two = build_bidirectional_mask(mask_of(4, {0, 2}));
  for (std::size_t p = 0; p < 4; ++p) EXPECT_EQ(allowed_positions(two, p), (std::vector<std::size_t>{1, 3}));
}

TEST(Masks, PermutedCausalExamples) {
  const Permutation id = Permutation::identity(4);
  const std::vector<bool> all(4, true);
  const AttentionMask up = build_permuted_causal_mask(all, id, Direction::suffix);
  const AttentionMask down = build_permuted_causal_mask(all, id, Direction::prefix);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_EQ(up(S + i, S + j), j >= i);
      EXPECT_EQ(down(S + i, S + j), j <= i);
    }
  }
  // Masked {0, 2}, decoded order (2, 0, 3, 1).
  const Permutation z = Permutation::from_order({2, 0, 3, 1});
  const AttentionMask m = build_permuted_causal_mask(mask_of(4, {0, 2}), z, Direction::suffix);
  EXPECT_EQ(allowed_positions(m, 2), (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(allowed_positions(m, 0), (std::vector<std::size_t>{0}));
  EXPECT_TRUE(allowed_positions(m, 1).empty());
}

TEST(Masks, HybridWorkedExample) {
  const Permutation z = Permutation::from_order({2, 0, 3, 1});
  const AttentionMask h = build_hybrid_mask(mask_of(4, {0, 2}), z, Direction::suffix);
  EXPECT_EQ(allowed_positions(h, 0), (std::vector<std::size_t>{0, 1, 3}));
  EXPECT_EQ(allowed_positions(h, 1), (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(allowed_positions(h, 2), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(allowed_positions(h, 3), (std::vector<std::size_t>{1, 3}));
  // Condition slots: attendable by all, attending only to each other.
  for (std::size_t q = 0; q < h.queries(); ++q) EXPECT_TRUE(h(q, 0) && h(q, 1));
  for (std::size_t k = S; k < h.keys(); ++k) EXPECT_FALSE(h(0, k) || h(1, k));
}

TEST(Masks, HybridMatchesRuleCheckerExhaustively) {
  Rng rng(5);
  for (std::size_t t = 1; t <= 6; ++t) {
    for (std::size_t bits = 0; bits < (std::size_t{1} << t); ++bits) {
      std::vector<bool> masked(t);
      for (std::size_t j = 0; j < t; ++j) masked[j] = ((bits >> j) & 1u) != 0;
      for (int trial = 0; trial < 50; ++trial) {
        const Permutation z = sample_permutation(t, rng);
        for (Direction d : {Direction::suffix, Direction::prefix}) {
          const AttentionMask bi = build_bidirectional_mask(masked);
          const AttentionMask per = build_permuted_causal_mask(masked, z, d);
          const AttentionMask hyb = build_hybrid_mask(masked, z, d);
          ASSERT_EQ(hyb, oracles::rule_mask(masked, z.order, d)) << "T=" << t << " bits=" << bits;
          ASSERT_TRUE(hyb.every_row_nonempty());
          for (std::size_t q = 0; q < hyb.queries(); ++q) {
            for (std::size_t k = 0; k < hyb.keys(); ++k) {
              ASSERT_FALSE(bi(q, k) && per(q, k));
              ASSERT_EQ(hyb(q, k), bi(q, k) || per(q, k));
            }
          }
        }
      }
    }
  }
}

TEST(Masks, FullMaskingReducesToTriangular) {
  for (std::size_t t = 1; t <= 8; ++t) {
    const std::vector<bool> all(t, true);
    const Permutation id = Permutation::identity(t);
    EXPECT_EQ(build_hybrid_mask(all, id, Direction::prefix), oracles::causal_mask(t, Direction::prefix));
    EXPECT_EQ(build_hybrid_mask(all, id, Direction::suffix), oracles::causal_mask(t, Direction::suffix));
  }
  const std::vector<bool> none(5, false);
  EXPECT_EQ(build_hybrid_mask(none, Permutation::identity(5), Direction::suffix), build_bidirectional_mask(none));
}

TEST(Masks, EachMaskedPairAllowedInHalfThePermutations) {
  const std::vector<bool> all(4, true);
  std::vector<std::size_t> order = {0, 1, 2, 3};
  std::vector<int> count(16, 0);
  int perms = 0;
  do {
    ++perms;
    const AttentionMask m = build_permuted_causal_mask(all, Permutation::from_order(order), Direction::suffix);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 4; ++j) count[i * 4 + j] += m(S + i, S + j) ? 1 : 0;
    }
  } while (std::next_permutation(order.begin(), order.end()));
  ASSERT_EQ(perms, 24);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(count[i * 4 + j], i == j ? 24 : 12);
  }
}

TEST(Maskbook, PositionAndRankIndexing) {
  const Permutation z = Permutation::from_order({2, 0, 3, 1});
  EXPECT_EQ(maskbook_rows(z, MaskbookIndexing::position), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(maskbook_rows(z, MaskbookIndexing::rank), (std::vector<std::size_t>{1, 3, 0, 2}));
}

TEST(Corrupt, FullMaskKeepsTargets) {
  Rng rng(6);
  const TokenSequence tokens = {3, 1, 4, 1, 5, 2, 6, 0};
  CorruptionConfig cfg;
  cfg.forced_mask_ratio = 1.0;
  cfg.forced_replace_ratio = 0.0;
  const CorruptionPlan plan = corrupt(tokens, 8, rng, cfg);
  EXPECT_EQ(plan.n_masked, 8u);
  EXPECT_EQ(plan.targets, tokens);
  EXPECT_EQ(plan.inputs, tokens);
  EXPECT_EQ(plan.masked_positions.size(), plan.n_masked);
  EXPECT_THROW(corrupt(TokenSequence{9}, 8, rng, cfg), std::out_of_range);
  EXPECT_THROW(corrupt(TokenSequence{}, 8, rng, cfg), std::invalid_argument);
}

TEST(Corrupt, FixedSeedIsReproducible) {
  const TokenSequence tokens = {3, 1, 4, 1, 5, 2, 6, 0, 7, 7};
  Rng a(7), b(7);
  const CorruptionPlan p = corrupt(tokens, 8, a, {});
  const CorruptionPlan q = corrupt(tokens, 8, b, {});
  EXPECT_EQ(p.inputs, q.inputs);
  EXPECT_EQ(p.masked, q.masked);
  EXPECT_EQ(p.permutation.order, q.permutation.order);
  EXPECT_EQ(p.attention, q.attention);
  EXPECT_EQ(p.replaced_positions, q.replaced_positions);
}

TEST(Corrupt, MaskedFractionMatchesMixtureDistribution) {
  Rng rng(8);
  const std::size_t t = 16;
  const TokenSequence tokens(t, 0);
  std::vector<int> hist(t + 1, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const CorruptionPlan plan = corrupt(tokens, 2, rng, {});
    ASSERT_EQ(std::count(plan.masked.begin(), plan.masked.end(), true), static_cast<long>(plan.n_masked));
    ++hist[plan.n_masked];
  }
  // P(n <= k) = P(c * T < k + 1/2) for k < T, from the stated mixture.
  double emp = 0, worst = 0;
  for (std::size_t k = 1; k <= t; ++k) {
    emp += static_cast<double>(hist[k]) / draws;
    const double expected = k == t ? 1.0 : ratio_cdf((static_cast<double>(k) + 0.5) / static_cast<double>(t));
    worst = std::max(worst, std::abs(emp - expected));
  }
  EXPECT_LE(worst, 0.01);
}
