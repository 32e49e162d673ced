#include "bad/training.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "bad/ops.hpp"

namespace bad::training {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0 && final_learning_rate >= 0)) throw std::invalid_argument("train: learning rates must be >= 0");
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be > 0");
  if (!(unmasked_weight >= 0)) throw std::invalid_argument("train: unmasked_weight must be >= 0");
  if (!(grad_clip > 0)) throw std::invalid_argument("train: grad_clip must be > 0");
  if (!(adam.beta1 > 0 && adam.beta1 < 1 && adam.beta2 > 0 && adam.beta2 < 1)) {
    throw std::invalid_argument("train: beta1 and beta2 must lie in (0, 1)");
  }
}

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::paper_scale() {
  TrainConfig c;
  c.decay_step = 150000;
  c.steps = 300000;
  c.batch_size = 128;
  return c;
}

double lr_schedule(std::size_t step, const TrainConfig& config) {
  return step < config.decay_step ? config.learning_rate : config.final_learning_rate;
}

Var bad_objective(Var logits, std::span<const std::size_t> targets, const std::vector<bool>& masked,
                  double unmasked_weight) {
  const std::size_t n = logits.rows();
  if (targets.size() != n || masked.size() != n) {
    throw std::invalid_argument("bad_objective: logits must cover every position");
  }
  std::vector<real> weights(n);
  for (std::size_t i = 0; i < n; ++i) weights[i] = masked[i] ? real(1) : static_cast<real>(unmasked_weight);
  return ops::scale(ops::cross_entropy(logits, targets, weights), real(1) / static_cast<real>(n));
}

namespace {

struct FlatBatch {
  std::vector<transformer::ModelInput> inputs;
  std::vector<std::size_t> targets;
  std::vector<bool> masked;
};

FlatBatch flatten(std::span<const corruption::CorruptionPlan> plans, std::span<const std::vector<std::size_t>> prompts) {
  if (plans.size() != prompts.size()) throw std::invalid_argument("one prompt per plan required");
  FlatBatch fb;
  for (std::size_t b = 0; b < plans.size(); ++b) {
    fb.inputs.push_back(transformer::make_input(plans[b], prompts[b]));
    fb.targets.insert(fb.targets.end(), plans[b].targets.begin(), plans[b].targets.end());
    fb.masked.insert(fb.masked.end(), plans[b].masked.begin(), plans[b].masked.end());
  }
  return fb;
}

double masked_accuracy(const Tensor& logits, const FlatBatch& fb) {
  std::size_t hits = 0, total = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    if (!fb.masked[r]) continue;
    auto row = logits.row(r);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    hits += best == fb.targets[r] ? 1 : 0;
    ++total;
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

}  // namespace

Trainer::Trainer(transformer::Transformer& model, TrainConfig config)
    : model_(model), config_(std::move(config)), optimizer_(model.parameters(), config_.adam) {
  config_.validate();
  config_.corruption.direction = model.config().direction;
  config_.corruption.maskbook_indexing = model.config().maskbook_indexing;
}

StepResult Trainer::step_with_plans(std::span<const corruption::CorruptionPlan> plans,
                                    std::span<const std::vector<std::size_t>> prompts) {
  const FlatBatch fb = flatten(plans, prompts);
  Graph g;
  Var logits = model_.logits(g, fb.inputs);
  Var loss = bad_objective(logits, fb.targets, fb.masked, config_.unmasked_weight);
  const double value = loss.value().item();
  if (!std::isfinite(value)) throw NumericError("training loss is not finite at step " + std::to_string(step_));

  optimizer_.zero_grad();
  g.backward(loss);
  StepResult r;
  r.grad_norm = clip_grad_norm(optimizer_.parameters(), config_.grad_clip);
  r.learning_rate = lr_schedule(step_, config_);
  optimizer_.step(r.learning_rate);
  ++step_;
  r.step = step_;
  r.loss = value;
  r.masked_accuracy = masked_accuracy(logits.value(), fb);
  return r;
}

StepResult Trainer::step(std::span<const TrainingExample> batch, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("train step: empty batch");
  std::vector<corruption::CorruptionPlan> plans;
  std::vector<std::vector<std::size_t>> prompts;
  plans.reserve(batch.size());
  for (const auto& ex : batch) {
    plans.push_back(corruption::corrupt(ex.tokens, model_.config().vocabulary, rng, config_.corruption));
    prompts.push_back(ex.prompt_words);
  }
  return step_with_plans(plans, prompts);
}

void Trainer::train(std::span<const TrainingExample> data, Rng& rng, const std::function<void(const StepResult&)>& log) {
  if (data.empty()) throw std::invalid_argument("training needs data");
  std::vector<TrainingExample> batch;
  while (step_ < config_.steps) {
    batch.clear();
    for (std::size_t b = 0; b < config_.batch_size; ++b) batch.push_back(data[rng.below(data.size())]);
    const StepResult r = step(batch, rng);
    if (log && config_.log_interval > 0 && (r.step % config_.log_interval == 0 || r.step == config_.steps)) log(r);
  }
}

double evaluate_objective(transformer::Transformer& model, std::span<const corruption::CorruptionPlan> plans,
                          std::span<const std::vector<std::size_t>> prompts, double unmasked_weight) {
  const FlatBatch fb = flatten(plans, prompts);
  Graph g(false);
  return bad_objective(model.logits(g, fb.inputs), fb.targets, fb.masked, unmasked_weight).value().item();
}

}  // namespace bad::training
