#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "bad/autodiff.hpp"
#include "bad/optim.hpp"
#include "bad/random.hpp"

namespace bad {

using TokenSequence = std::vector<std::size_t>;

namespace tokenizer {

// K x d code vectors with exponential-moving-average statistics.
struct Codebook {
  Tensor codes;
  std::vector<real> ema_counts;
  Tensor ema_sums;
  std::vector<std::size_t> usage;

  Codebook() = default;
  explicit Codebook(Tensor code_vectors);

  std::size_t size() const { return codes.rows(); }
  std::size_t dim() const { return codes.cols(); }
  std::size_t live_codes(real threshold) const;
};

// Nearest code by squared Euclidean distance, lowest index on ties.
std::size_t quantize(std::span<const real> latent, const Codebook& codebook);
std::vector<std::size_t> quantize_rows(const Tensor& latents, const Codebook& codebook);
Tensor lookup(const Codebook& codebook, std::span<const std::size_t> indices);

// counts <- decay*counts + (1-decay)*n_k; sums likewise; codes <- sums / max(counts, eps).
void ema_update(Codebook& codebook, const Tensor& latents, std::span<const std::size_t> assigned, double decay,
                double epsilon = 1e-5);

// Re-seeds codes whose EMA count is below `threshold` from random donor rows.
// Returns how many codes were reset.
std::size_t reset_dead_codes(Codebook& codebook, double threshold, const Tensor& donors, Rng& rng);

struct VqVaeConfig {
  std::size_t features = 6;         // D
  std::size_t width = 64;           // conv channels
  std::size_t latent_dim = 32;      // d
  std::size_t codebook_size = 64;   // K
  std::size_t downsample = 4;       // l, a power of two
  std::size_t frames = 64;          // tau used in training
  double commitment = 0.02;         // beta
  double ema_decay = 0.99;          // lambda
  double dead_code_threshold = 1.0;
  std::size_t reset_interval = 256;
};

struct VqLossTerms {
  Var total;
  Var reconstruction;
  Var codebook;
  Var commitment;
};

// ||F - Fhat||_1 + ||sg[E] - X||_2 + beta ||E - sg[X]||_2 with mean reductions
// (mean absolute error, mean squared error).
VqLossTerms vq_loss(Var frames, Var reconstruction, Var latents, Var quantized, double beta);

// 1-D convolutional VQ-VAE. Sequences are stacked by rows: frames
// [batch*tau, D] -> latents [batch*tau/l, d].
class VqVae {
 public:
  VqVae(const VqVaeConfig& config, Rng& rng);

  const VqVaeConfig& config() const { return config_; }
  Codebook& codebook() { return codebook_; }
  const Codebook& codebook() const { return codebook_; }

  Var encode(Graph& g, Var frames, std::size_t batch);
  Var decode(Graph& g, Var quantized, std::size_t batch);

  // Single sequence, no gradient. Throws if tau is not a multiple of l.
  Tensor encode(const Tensor& frames);
  TokenSequence tokenize(const Tensor& frames);
  Tensor decode_tokens(const TokenSequence& tokens);
  Tensor reconstruct(const Tensor& frames);

  std::vector<Parameter*> parameters();
  std::vector<Parameter*> decoder_parameters();

 private:
  struct Conv {
    Parameter weight;
    Parameter bias;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t padding = 1;
  };
  struct ResBlock {
    Conv conv3;
    Conv conv1;
  };

  Conv make_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t kernel, std::size_t stride,
                 std::size_t padding, Rng& rng, double gain = 2.0);
  Var apply(Graph& g, Conv& c, Var x, std::size_t batch);
  Var apply(Graph& g, ResBlock& r, Var x, std::size_t batch);

  VqVaeConfig config_;
  std::size_t stages_ = 0;
  Conv enc_in_;
  std::vector<Conv> enc_down_;
  std::vector<ResBlock> enc_res_;
  Conv enc_out_;
  Conv dec_in_;
  std::vector<ResBlock> dec_res_;
  std::vector<Conv> dec_up_;
  Conv dec_out_;
  Codebook codebook_;
};

struct TokenizerTrainConfig {
  std::size_t steps = 3000;
  std::size_t batch = 32;
  double learning_rate = 2e-4;
  std::size_t decay_step = 2000;
  double final_learning_rate = 1e-5;
  AdamWConfig adam{0.9, 0.99, 1e-8, 0.0};
  std::size_t log_interval = 100;
};

struct TokenizerLogRow {
  std::size_t step = 0;
  double loss = 0;
  double reconstruction = 0;
  double commitment = 0;
  double codebook_term = 0;
  std::size_t live_codes = 0;
  double learning_rate = 0;
};

struct TokenizerStepResult {
  double loss = 0;
  double reconstruction = 0;
  double commitment = 0;
  double codebook_term = 0;
};

class TokenizerTrainer {
 public:
  TokenizerTrainer(VqVae& model, TokenizerTrainConfig config);

  // One optimization step on a batch of tau x D frame sequences.
  TokenizerStepResult step(std::span<const Tensor> batch, Rng& rng);
  // Samples batches from `dataset` for config.steps steps.
  void train(std::span<const Tensor> dataset, Rng& rng, const std::function<void(const TokenizerLogRow&)>& log = {});
  std::size_t steps_done() const { return step_; }

 private:
  VqVae& model_;
  TokenizerTrainConfig config_;
  AdamW optimizer_;
  std::size_t step_ = 0;
  bool codebook_seeded_ = false;
};

// Mean absolute reconstruction error over a set of sequences.
double reconstruction_l1(VqVae& model, std::span<const Tensor> sequences);
// Fraction of codes hit at least once when tokenizing `sequences`.
double codebook_usage(VqVae& model, std::span<const Tensor> sequences);

}  // namespace tokenizer
}  // namespace bad
