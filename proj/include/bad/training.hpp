#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "bad/corruption.hpp"
#include "bad/optim.hpp"
#include "bad/transformer.hpp"

namespace bad::training {

struct TrainConfig {
  double learning_rate = 2e-4;
  std::size_t decay_step = 2000;
  double final_learning_rate = 1e-5;
  AdamWConfig adam{0.5, 0.99, 1e-8, 0.0};
  std::size_t batch_size = 128;
  std::size_t steps = 3000;
  double unmasked_weight = 0.1;
  double grad_clip = 1.0;
  std::size_t log_interval = 50;
  corruption::CorruptionConfig corruption;

  void validate() const;
  static TrainConfig desk();
  static TrainConfig paper_scale();
};

// Piecewise constant: learning_rate before decay_step, final_learning_rate after.
double lr_schedule(std::size_t step, const TrainConfig& config);

// Mean over all positions of  m' * CE + (1 - m') * unmasked_weight * CE,
// where m' = 1 at masked positions. logits [N, K]; targets and masked have N entries.
Var bad_objective(Var logits, std::span<const std::size_t> targets, const std::vector<bool>& masked,
                  double unmasked_weight);

struct TrainingExample {
  TokenSequence tokens;
  std::vector<std::size_t> prompt_words;
};

struct StepResult {
  std::size_t step = 0;
  double loss = 0;
  double masked_accuracy = 0;
  double learning_rate = 0;
  double grad_norm = 0;
};

class Trainer {
 public:
  Trainer(transformer::Transformer& model, TrainConfig config);

  // corrupt -> forward -> objective -> backward -> clip -> AdamW.
  // Throws NumericError on a non-finite loss.
  StepResult step(std::span<const TrainingExample> batch, Rng& rng);
  // As step(), with explicit corruption plans (targets come from the plans).
  StepResult step_with_plans(std::span<const corruption::CorruptionPlan> plans,
                             std::span<const std::vector<std::size_t>> prompts);

  // Runs until config.steps with batches drawn uniformly from `data`.
  void train(std::span<const TrainingExample> data, Rng& rng,
             const std::function<void(const StepResult&)>& log = {});

  std::size_t steps_done() const { return step_; }
  AdamW& optimizer() { return optimizer_; }
  const TrainConfig& config() const { return config_; }

 private:
  transformer::Transformer& model_;
  TrainConfig config_;
  AdamW optimizer_;
  std::size_t step_ = 0;
};

// Objective value on a batch without updating weights.
double evaluate_objective(transformer::Transformer& model, std::span<const corruption::CorruptionPlan> plans,
                          std::span<const std::vector<std::size_t>> prompts, double unmasked_weight);

}  // namespace bad::training
