#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "bad/oracles.hpp"
#include "bad/sampling.hpp"
#include "test_util.hpp"

using namespace bad;
using namespace bad::sampling;
using corruption::Direction;

namespace {

std::vector<std::size_t> prompt() { return transformer::encode_prompt("a person walks", 32); }

GenerationRequest request(std::size_t length, std::optional<corruption::Permutation> z = std::nullopt,
                          std::vector<KnownToken> known = {}) {
  return GenerationRequest{prompt(), length, std::move(known), std::move(z)};
}

std::vector<DecodeEvent> record(transformer::Transformer& model, const std::vector<GenerationRequest>& reqs,
                                const SamplerConfig& cfg, std::uint64_t seed, std::vector<TokenSequence>* out = nullptr) {
  std::vector<DecodeEvent> events;
  Rng rng(seed);
  auto result = generate(model, reqs, cfg, rng, [&](const DecodeEvent& e) { events.push_back(e); });
  if (out) *out = std::move(result);
  return events;
}

}  // namespace

TEST(Schedule, ClosedFormAndShape) {
  EXPECT_EQ(cosine_schedule(5, 10, 64), 45u);
  EXPECT_EQ(cosine_schedule(10, 10, 64), 0u);
  EXPECT_EQ(cosine_schedule(1, 1, 64), 0u);
  EXPECT_EQ(cosine_schedule(2, 3, 16), 8u);  // 16 cos(pi/3) is exactly 8
  EXPECT_THROW(cosine_schedule(0, 10, 64), std::out_of_range);
  EXPECT_THROW(cosine_schedule(11, 10, 64), std::out_of_range);
  for (std::size_t iters = 1; iters <= 40; ++iters) {
    for (std::size_t t = 1; t <= 70; ++t) {
      std::size_t prev = t;
      for (std::size_t i = 1; i <= iters; ++i) {
        const std::size_t n = cosine_schedule(i, iters, t);
        ASSERT_LE(n, prev);
        ASSERT_EQ(n, oracles::schedule(i, iters, t)) << i << "/" << iters << " T=" << t;
        prev = n;
      }
      ASSERT_EQ(prev, 0u);
      if (iters >= 2) ASSERT_LT(cosine_schedule(1, iters, t), t);
    }
  }
}

TEST(Schedule, MatchesOracleOnRandomTriples) {
  Rng rng(1);
  for (int c = 0; c < 1000; ++c) {
    const std::size_t iters = 1 + rng.below(50), t = rng.below(512), i = 1 + rng.below(iters);
    ASSERT_EQ(cosine_schedule(i, iters, t), oracles::schedule(i, iters, t));
  }
}

TEST(Oaas, DecodeOrderFollowsRanks) {
  for (Direction d : {Direction::suffix, Direction::prefix}) {
    Rng init(2);
    transformer::Transformer model(test::tiny_model(d, 8), init);
    Rng zr(3);
    const auto z = corruption::sample_permutation(8, zr);
    SamplerConfig cfg;
    const auto events = record(model, {request(8, z)}, cfg, 4);
    ASSERT_EQ(events.size(), 8u);
    for (std::size_t n = 1; n < events.size(); ++n) {
      const std::size_t a = z.rank[events[n - 1].position], b = z.rank[events[n].position];
      if (d == Direction::suffix) EXPECT_LT(a, b);
      else EXPECT_GT(a, b);
      EXPECT_LE(events[n - 1].iteration, events[n].iteration);
    }
  }
}

TEST(Oaas, SingleIterationDecodesEverythingAtOnce) {
  Rng init(5);
  transformer::Transformer model(test::tiny_model(Direction::suffix, 8), init);
  SamplerConfig cfg;
  cfg.iterations = 1;
  const auto events = record(model, {request(8)}, cfg, 6);
  ASSERT_EQ(events.size(), 8u);
  for (const auto& e : events) EXPECT_EQ(e.iteration, 1u);
}

TEST(Oaas, OnePositionPerStepEqualsAutoregressiveSampler) {
  // With I = 2T each schedule step drops by at most one position, so every
  // iteration that does work decodes exactly one token.
  for (std::size_t t : {1u, 3u, 8u}) {
    Rng init(7);
    transformer::Transformer model(test::tiny_model(Direction::prefix, 8), init);
    SamplerConfig cfg;
    cfg.iterations = 2 * t;
    std::vector<TokenSequence> out;
    const auto events = record(model, {request(t, corruption::Permutation::identity(t))}, cfg, 8, &out);
    std::vector<DecodeEvent> reference;
    Rng rng(8);
    const TokenSequence ar = oracles::autoregressive_sample(model, prompt(), t, rng,
                                                            [&](const DecodeEvent& e) { reference.push_back(e); });
    ASSERT_EQ(events.size(), t);
    ASSERT_EQ(reference.size(), t);
    for (std::size_t n = 0; n < t; ++n) {
      if (n > 0) EXPECT_LT(events[n - 1].iteration, events[n].iteration);
      EXPECT_EQ(events[n].position, reference[n].position);
      for (std::size_t k = 0; k < events[n].probabilities.size(); ++k) {
        EXPECT_NEAR(events[n].probabilities[k], reference[n].probabilities[k], 1e-5);
      }
    }
    EXPECT_EQ(out.front(), ar);
  }
}

TEST(Cbs, RetainedSetIsTopConfidence) {
  Rng init(9);
  const auto mc = test::tiny_model(Direction::suffix, 8);
  transformer::Transformer model(mc, init);
  Rng zr(10);
  const auto z = corruption::sample_permutation(8, zr);
  SamplerConfig cfg;
  cfg.method = Method::cbs;
  cfg.iterations = 4;
  cfg.temperature = 0;  // greedy keeps the check free of sampling noise
  const auto events = record(model, {request(8, z)}, cfg, 11);
  ASSERT_EQ(events.size(), 8u);

  // Replay: rebuild each iteration's input and rank positions independently.
  TokenSequence tokens(8, 0);
  std::vector<bool> masked(8, true);
  std::size_t remaining = 8, e = 0;
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    const std::size_t target = oracles::schedule(it, cfg.iterations, 8);
    if (remaining == target) continue;
    std::vector<std::size_t> rows(8);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    const std::vector<transformer::ModelInput> in = {
        {tokens, masked, rows, corruption::build_hybrid_mask(masked, z, Direction::suffix), prompt()}};
    Graph g(false);
    const Tensor logits = model.logits(g, in).value();
    std::vector<std::pair<double, std::size_t>> conf;  // (-confidence, position)
    for (std::size_t p = 0; p < 8; ++p) {
      if (!masked[p]) continue;
      double top = -INFINITY, total = 0;
      for (real v : logits.row(p)) top = std::max(top, double(v));
      for (real v : logits.row(p)) total += std::exp(double(v) - top);
      conf.push_back({-1.0 / total, p});
    }
    std::sort(conf.begin(), conf.end());
    std::vector<std::size_t> expected;
    for (std::size_t n = 0; n < remaining - target; ++n) expected.push_back(conf[n].second);
    std::vector<std::size_t> got;
    for (; e < events.size() && events[e].iteration == it; ++e) {
      got.push_back(events[e].position);
      tokens[events[e].position] = events[e].token;
      masked[events[e].position] = false;
    }
    std::sort(expected.begin(), expected.end());
    std::sort(got.begin(), got.end());
    EXPECT_EQ(got, expected) << "iteration " << it;
    remaining = target;
  }
  EXPECT_EQ(remaining, 0u);
}

TEST(Cbs, TiesGoToLowestPosition) {
  Rng init(12);
  transformer::Transformer model(test::tiny_model(Direction::suffix, 8), init);
  for (Parameter* p : model.parameters()) {
    if (p->name == "head.weight" || p->name == "head.bias") p->value.fill(0);
  }
  SamplerConfig cfg;
  cfg.method = Method::cbs;
  cfg.iterations = 4;
  cfg.temperature = 0;
  const auto events = record(model, {request(8)}, cfg, 13);
  std::vector<std::size_t> order;
  for (const auto& e : events) order.push_back(e.position);
  EXPECT_EQ(order, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7}));
}

TEST(Cbs, FinalIterationLeavesNothingMasked) {
  Rng init(14);
  transformer::Transformer model(test::tiny_model(Direction::suffix, 8), init);
  Rng rng(15);
  for (std::size_t iters : {1u, 2u, 10u}) {
    const TokenSequence out = cbs_generate(model, prompt(), 8, iters, rng);
    EXPECT_EQ(out.size(), 8u);
    for (std::size_t t : out) EXPECT_LT(t, 5u);
  }
  SamplerConfig cfg;
  cfg.method = Method::cbs;
  cfg.gumbel_temperature = 2.0;
  cfg.confidence = Confidence::sampled_probability;
  EXPECT_EQ(record(model, {request(8)}, cfg, 16).size(), 8u);
}

TEST(Sampling, TopKAndGreedyRestrictTheDistribution) {
  Rng init(17);
  transformer::Transformer model(test::tiny_model(Direction::suffix, 8), init);
  SamplerConfig cfg;
  cfg.top_k = 2;
  cfg.temperature = 0.7;
  for (const auto& e : record(model, {request(8)}, cfg, 18)) {
    EXPECT_LE(std::count_if(e.probabilities.begin(), e.probabilities.end(), [](double p) { return p > 0; }), 2);
    EXPECT_GT(e.probabilities[e.token], 0);
  }
  cfg.temperature = 0;
  for (const auto& e : record(model, {request(8)}, cfg, 19)) {
    EXPECT_EQ(e.probabilities[e.token], 1.0);
  }
}

TEST(Sampling, ReproducibleAndIndependentOfBatching) {
  Rng init(20);
  transformer::Transformer model(test::tiny_model(Direction::suffix, 8), init);
  std::vector<GenerationRequest> reqs;
  for (std::size_t n = 0; n < 7; ++n) reqs.push_back(request(3 + n % 6));
  for (Method m : {Method::oaas, Method::cbs}) {
    SamplerConfig cfg;
    cfg.method = m;
    std::vector<TokenSequence> a, b, c;
    record(model, reqs, cfg, 21, &a);
    record(model, reqs, cfg, 21, &b);
    cfg.batch = 2;
    record(model, reqs, cfg, 21, &c);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a, c);
    std::vector<TokenSequence> d;
    record(model, reqs, cfg, 22, &d);
    EXPECT_NE(a, d);
  }
}

TEST(Sampling, RejectsInvalidRequests) {
  Rng init(23);
  transformer::Transformer model(test::tiny_model(Direction::suffix, 8), init);
  SamplerConfig cfg;
  Rng rng(24);
  auto run = [&](GenerationRequest r) { return generate(model, std::vector{r}, cfg, rng); };
  EXPECT_THROW(run(request(9)), std::invalid_argument);
  EXPECT_THROW(run(request(0)), std::invalid_argument);
  EXPECT_THROW(run(request(4, std::nullopt, {{1, 2}, {1, 3}})), std::invalid_argument);
  EXPECT_THROW(run(request(4, std::nullopt, {{4, 2}})), std::out_of_range);
  EXPECT_THROW(run(request(4, std::nullopt, {{0, 5}})), std::out_of_range);
  EXPECT_THROW(run(request(4, corruption::Permutation::identity(3))), std::invalid_argument);
  cfg.iterations = 0;
  EXPECT_THROW(run(request(4)), std::invalid_argument);
}

TEST(Edit, KnownPositionsPerMode) {
  const auto pos = [](EditMode m) { return known_positions(m, 16); };
  EXPECT_EQ(pos(EditMode::inpaint), (std::vector<std::size_t>{0, 1, 2, 3, 12, 13, 14, 15}));
  EXPECT_EQ(pos(EditMode::outpaint), (std::vector<std::size_t>{4, 5, 6, 7, 8, 9, 10, 11}));
  EXPECT_EQ(pos(EditMode::prefix), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7}));
  EXPECT_EQ(pos(EditMode::suffix), (std::vector<std::size_t>{8, 9, 10, 11, 12, 13, 14, 15}));
  for (auto m : {EditMode::inpaint, EditMode::outpaint, EditMode::prefix, EditMode::suffix}) {
    EXPECT_EQ(parse_edit_mode(to_string(m)), m);
  }
  EXPECT_THROW(parse_edit_mode("middle"), std::invalid_argument);
}

TEST(Edit, KnownTokensArePreservedExactly) {
  for (Direction d : {Direction::suffix, Direction::prefix}) {
    Rng init(25);
    transformer::Transformer model(test::tiny_model(d, 16), init);
    Rng rng(26);
    for (auto m : {EditMode::inpaint, EditMode::outpaint, EditMode::prefix, EditMode::suffix}) {
      for (Method method : {Method::oaas, Method::cbs}) {
        SamplerConfig cfg;
        cfg.method = method;
        for (std::size_t t : {4u, 7u, 16u}) {
          TokenSequence ref(t);
          for (auto& v : ref) v = rng.below(5);
          const TokenSequence out = edit_generate(model, prompt(), ref, m, cfg, rng);
          ASSERT_EQ(out.size(), t);
          for (std::size_t p : known_positions(m, t)) EXPECT_EQ(out[p], ref[p]);
        }
      }
    }
  }
}

TEST(Edit, NothingUnknownReturnsInput) {
  Rng init(27);
  transformer::Transformer model(test::tiny_model(Direction::suffix, 8), init);
  std::vector<KnownToken> all;
  const TokenSequence ref = {4, 3, 2, 1, 0, 1, 2, 3};
  for (std::size_t p = 0; p < ref.size(); ++p) all.push_back({p, ref[p]});
  std::vector<TokenSequence> out;
  const auto events = record(model, {request(8, std::nullopt, all)}, SamplerConfig{}, 28, &out);
  EXPECT_TRUE(events.empty());
  EXPECT_EQ(out.front(), ref);
}
