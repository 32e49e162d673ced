#include <gtest/gtest.h>

#include <cmath>

#include "bad/grad_check.hpp"
#include "bad/oracles.hpp"
#include "bad/ops.hpp"
#include "bad/training.hpp"
#include "test_util.hpp"

using namespace bad;
using namespace bad::training;
using corruption::Direction;

namespace {

// A batch of fully masked, identity-ordered prefix plans.
struct CausalBatch {
  std::vector<TokenSequence> sequences;
  std::vector<std::vector<std::size_t>> prompts;
  std::vector<corruption::CorruptionPlan> plans;
};

CausalBatch causal_batch(const transformer::ModelConfig& mc, std::size_t count, Rng& rng) {
  CausalBatch b;
  corruption::CorruptionConfig cc;
  cc.direction = Direction::prefix;
  cc.forced_mask_ratio = 1.0;
  cc.forced_replace_ratio = 0.0;
  cc.forced_permutation = corruption::Permutation::identity(mc.max_length);
  for (std::size_t i = 0; i < count; ++i) {
    TokenSequence s(mc.max_length);
    for (auto& v : s) v = rng.below(mc.vocabulary);
    b.plans.push_back(corruption::corrupt(s, mc.vocabulary, rng, cc));
    b.sequences.push_back(s);
    b.prompts.push_back(transformer::encode_prompt(i % 2 ? "walk forward" : "jump back", mc.word_vocabulary));
  }
  return b;
}

std::vector<Tensor> snapshot(transformer::Transformer& model) {
  std::vector<Tensor> out;
  for (Parameter* p : model.parameters()) out.push_back(p->value);
  return out;
}

}  // namespace

TEST(LrSchedule, PiecewiseConstant) {
  const TrainConfig desk = TrainConfig::desk();
  EXPECT_EQ(lr_schedule(0, desk), 2e-4);
  EXPECT_EQ(lr_schedule(1999, desk), 2e-4);
  EXPECT_EQ(lr_schedule(2000, desk), 1e-5);
  const TrainConfig paper = TrainConfig::paper_scale();
  EXPECT_EQ(paper.batch_size, 128u);
  EXPECT_EQ(lr_schedule(149999, paper), 2e-4);
  EXPECT_EQ(lr_schedule(150000, paper), 1e-5);
  EXPECT_EQ(paper.adam.beta1, 0.5);
  EXPECT_EQ(paper.adam.beta2, 0.99);
}

TEST(Objective, WorkedExamples) {
  Graph g;
  // All masked: plain mean cross-entropy, whatever the unmasked weight.
  const Tensor logits = Tensor::from_rows({{0.3, -1.0, 2.0}, {1.0, 1.0, 0.0}});
  const std::vector<std::size_t> targets = {2, 0};
  const long double ce0 = std::log(std::exp(0.3L) + std::exp(-1.0L) + std::exp(2.0L)) - 2.0L;
  const long double ce1 = std::log(2 * std::exp(1.0L) + 1.0L) - 1.0L;
  for (double w : {0.0, 0.1, 7.0}) {
    EXPECT_NEAR(bad_objective(g.input(logits), targets, {true, true}, w).value().item(),
                static_cast<double>((ce0 + ce1) / 2), 1e-14);
  }
  EXPECT_EQ(bad_objective(g.input(logits), targets, {false, false}, 0.0).value().item(), 0);
  const Tensor uniform = Tensor::from_rows({{0, 0, 0, 0}, {0, 0, 0, 0}});
  EXPECT_NEAR(bad_objective(g.input(uniform), std::vector<std::size_t>{1, 3}, {true, false}, 1.0).value().item(),
              std::log(4.0), 1e-14);
  EXPECT_THROW(bad_objective(g.input(uniform), std::vector<std::size_t>{1}, {true}, 1.0), std::invalid_argument);
}

TEST(Objective, GradientMatchesFiniteDifferences) {
  if (sizeof(real) < sizeof(double)) GTEST_SKIP() << "gradient checks need 64-bit reals";
  Rng rng(1);
  const std::vector<std::size_t> targets = {0, 3, 2, 1, 3};
  const std::vector<bool> masked = {true, false, true, true, false};
  const auto r = gradient_check(
      [&](Graph&, std::span<const Var> x) { return bad_objective(x[0], targets, masked, 0.1); },
      {test::random_tensor({5, 4}, rng)});
  EXPECT_TRUE(r.passed(1e-4)) << r.summary();
}

TEST(Reduction, FullMaskPrefixStepEqualsCausalLanguageModel) {
  Rng rng(2);
  transformer::ModelConfig mc = test::tiny_model(Direction::prefix, 8);
  transformer::Transformer model(mc, rng);
  const CausalBatch b = causal_batch(mc, 6, rng);
  EXPECT_EQ(b.plans[0].attention, oracles::causal_mask(8, Direction::prefix));
  const double lm = oracles::causal_lm_loss(model, b.sequences, b.prompts);
  const double objective = evaluate_objective(model, b.plans, b.prompts, 0.1);
  EXPECT_LE(std::abs(objective - lm) / lm, 1e-10);
  TrainConfig tc;
  tc.corruption.direction = Direction::prefix;
  Trainer trainer(model, tc);
  const StepResult step = trainer.step_with_plans(b.plans, b.prompts);
  EXPECT_LE(std::abs(step.loss - lm) / lm, 1e-10);
}

TEST(Objective, InvariantToOrderingOfUnmaskedPositions) {
  Rng rng(3);
  transformer::ModelConfig mc = test::tiny_model(Direction::suffix, 6);
  transformer::Transformer model(mc, rng);
  const TokenSequence tokens = {1, 4, 0, 2, 3, 3};
  const std::vector<std::size_t> prompt = transformer::encode_prompt("walk", mc.word_vocabulary);
  // Masked {0, 2, 4} keep relative order 4, 0, 2 while unmasked slots move.
  const std::vector<std::vector<std::size_t>> orders = {{4, 0, 1, 2, 3, 5}, {1, 4, 3, 0, 5, 2}, {4, 5, 0, 1, 3, 2}};
  std::vector<double> losses;
  for (const auto& order : orders) {
    corruption::CorruptionConfig cc;
    cc.forced_replace_ratio = 0.0;
    cc.forced_mask_ratio = 0.5;
    cc.forced_permutation = corruption::Permutation::from_order(order);
    Rng fixed(10);  // same masked set each time
    const auto plan = corruption::corrupt(tokens, mc.vocabulary, fixed, cc);
    ASSERT_EQ(plan.masked_positions, (std::vector<std::size_t>{0, 2, 4})) << "pick another seed";
    losses.push_back(evaluate_objective(model, std::vector{plan}, std::vector<std::vector<std::size_t>>{prompt}, 0.1));
  }
  EXPECT_EQ(losses[0], losses[1]);
  EXPECT_EQ(losses[0], losses[2]);
}

TEST(Trainer, ZeroLearningRateLeavesWeightsUnchanged) {
  Rng rng(4);
  transformer::ModelConfig mc = test::tiny_model(Direction::suffix, 8);
  transformer::Transformer model(mc, rng);
  TrainConfig tc;
  tc.learning_rate = 0;
  tc.final_learning_rate = 0;
  Trainer trainer(model, tc);
  const auto before = snapshot(model);
  std::vector<TrainingExample> batch(4, {TokenSequence{0, 1, 2, 3, 4, 0, 1, 2}, {1, 2}});
  trainer.step(batch, rng);
  EXPECT_EQ(snapshot(model), before);
}

TEST(Trainer, LossDecreasesOnFixedBatch) {
  Rng rng(5);
  transformer::ModelConfig mc = test::tiny_model(Direction::prefix, 8);
  transformer::Transformer model(mc, rng);
  const CausalBatch b = causal_batch(mc, 8, rng);
  TrainConfig tc;
  tc.learning_rate = 3e-3;
  tc.corruption.direction = Direction::prefix;
  Trainer trainer(model, tc);
  const double first = trainer.step_with_plans(b.plans, b.prompts).loss;
  double last = first;
  for (int i = 1; i < 100; ++i) last = trainer.step_with_plans(b.plans, b.prompts).loss;
  // Random tokens leave an irreducible floor, so only a clear drop is required.
  EXPECT_LT(last, 0.75 * first);
  EXPECT_EQ(trainer.steps_done(), 100u);
}

TEST(Trainer, TrainRunsConfiguredStepsAndLogs) {
  Rng rng(6);
  transformer::ModelConfig mc = test::tiny_model(Direction::suffix, 8);
  transformer::Transformer model(mc, rng);
  TrainConfig tc;
  tc.steps = 5;
  tc.batch_size = 3;
  tc.log_interval = 1;
  Trainer trainer(model, tc);
  std::vector<TrainingExample> data(10, {TokenSequence{0, 1, 2, 3, 4, 0, 1, 2}, {1}});
  std::size_t calls = 0;
  trainer.train(data, rng, [&](const StepResult& r) {
    ++calls;
    EXPECT_TRUE(std::isfinite(r.loss));
    EXPECT_GE(r.masked_accuracy, 0);
    EXPECT_LE(r.masked_accuracy, 1);
  });
  EXPECT_EQ(trainer.steps_done(), 5u);
  EXPECT_EQ(calls, 5u);
  EXPECT_THROW(trainer.train({}, rng), std::invalid_argument);
}
