#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bad/autodiff.hpp"
#include "bad/corruption.hpp"
#include "bad/random.hpp"

namespace bad::transformer {

struct ModelConfig {
  std::size_t layers = 4;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t cross_layers = 2;   // leading blocks that cross-attend to prompt words
  std::size_t vocabulary = 8;     // K
  std::size_t max_length = 16;    // T_max
  std::size_t time_buckets = 64;
  std::size_t word_vocabulary = 256;
  std::size_t ffn_multiplier = 4;
  corruption::Direction direction = corruption::Direction::suffix;
  corruption::MaskbookIndexing maskbook_indexing = corruption::MaskbookIndexing::position;

  void validate() const;
  static ModelConfig desk();
  static ModelConfig paper_scale();
};

// Whitespace-split, lower-cased prompt hashed (FNV-1a) into word ids.
std::vector<std::size_t> encode_prompt(std::string_view text, std::size_t word_vocabulary);

// Time-token bucket for n_masked of length positions.
std::size_t time_bucket(std::size_t n_masked, std::size_t length, std::size_t buckets);

// One sequence as the model sees it.
struct ModelInput {
  TokenSequence tokens;                   // identities read at unmasked positions
  std::vector<bool> masked;
  std::vector<std::size_t> maskbook_rows; // Maskbook row per position
  AttentionMask attention;                // (T + 2) x (T + 2)
  std::vector<std::size_t> prompt_words;

  std::size_t length() const { return tokens.size(); }
  std::size_t n_masked() const;
};

ModelInput make_input(const corruption::CorruptionPlan& plan, std::vector<std::size_t> prompt_words);

// Prompt-side conditioning for a batch: S rows [B, d] and stacked word rows W.
struct ConditionBundle {
  Var sentence;
  Var words;
  Var time;
  std::vector<std::size_t> word_offsets;  // B + 1 entries into `words`
};

class Transformer {
 public:
  Transformer(const ModelConfig& config, Rng& rng);

  const ModelConfig& config() const { return config_; }

  ConditionBundle encode_conditions(Graph& g, std::span<const ModelInput> batch);
  // [sentence, time, x_1 .. x_T] + positions for every sequence, stacked:
  // [B * (T + 2), d_model].
  Var embed_inputs(Graph& g, std::span<const ModelInput> batch);
  // Logits for sequence positions only: [B * T, K]. Condition slots produce none.
  Var forward(Graph& g, Var embedded, std::span<const ModelInput> batch);
  Var logits(Graph& g, std::span<const ModelInput> batch) { return forward(g, embed_inputs(g, batch), batch); }

  std::vector<Parameter*> parameters();
  std::size_t parameter_count();

  // Shared block used by forward(); exposed for gradient verification.
  Var apply_block(Graph& g, std::size_t layer, Var x, std::span<const ModelInput> batch, const ConditionBundle& cond);

 private:
  struct Block {
    Parameter ln1_gain, ln1_bias;
    Parameter wq, bq, wk, bk, wv, bv, wo, bo;
    Parameter ln2_gain, ln2_bias;
    Parameter w1, b1, w2, b2;
    bool cross = false;
  };

  ModelConfig config_;
  Parameter token_embedding_;
  Parameter maskbook_;
  Parameter position_embedding_;
  Parameter time_embedding_;
  Parameter word_embedding_;
  std::vector<Block> blocks_;
  Parameter final_gain_, final_bias_;
  Parameter head_weight_, head_bias_;
};

}  // namespace bad::transformer
