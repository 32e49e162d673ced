#include "bad/transformer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>
#include <string>

#include "bad/ops.hpp"

namespace bad::transformer {

using corruption::kConditionSlots;

void ModelConfig::validate() const {
  if (layers == 0 || d_model == 0 || heads == 0) throw std::invalid_argument("model: layers, d_model, heads must be > 0");
  if (d_model % heads != 0) throw std::invalid_argument("model: heads must divide d_model");
  if (cross_layers > layers) throw std::invalid_argument("model: cross_layers exceeds layers");
  if (vocabulary < 2) throw std::invalid_argument("model: vocabulary must be >= 2");
  if (max_length == 0 || time_buckets == 0 || word_vocabulary == 0 || ffn_multiplier == 0) {
    throw std::invalid_argument("model: max_length, time_buckets, word_vocabulary, ffn_multiplier must be > 0");
  }
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper_scale() {
  ModelConfig c;
  c.layers = 18;
  c.d_model = 1024;
  c.heads = 16;
  c.cross_layers = 2;
  c.vocabulary = 8192;
  c.max_length = 16;  // tau = 64 frames at downsampling 4
  c.word_vocabulary = 4096;
  return c;
}

std::vector<std::size_t> encode_prompt(std::string_view text, std::size_t word_vocabulary) {
  if (word_vocabulary == 0) throw std::invalid_argument("encode_prompt: empty word vocabulary");
  std::vector<std::size_t> ids;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= text.size()) break;
    std::uint64_t h = 1469598103934665603ull;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) {
      h ^= static_cast<unsigned char>(std::tolower(static_cast<unsigned char>(text[i])));
      h *= 1099511628211ull;
      ++i;
    }
    ids.push_back(static_cast<std::size_t>(h % word_vocabulary));
  }
  if (ids.empty()) throw std::invalid_argument("encode_prompt: prompt has no words");
  return ids;
}

std::size_t time_bucket(std::size_t n_masked, std::size_t length, std::size_t buckets) {
  if (length == 0 || buckets == 0) throw std::invalid_argument("time_bucket: empty length or buckets");
  const double ratio = static_cast<double>(std::min(n_masked, length)) / static_cast<double>(length);
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(buckets - 1) + 0.5));
}

std::size_t ModelInput::n_masked() const {
  return static_cast<std::size_t>(std::count(masked.begin(), masked.end(), true));
}

ModelInput make_input(const corruption::CorruptionPlan& plan, std::vector<std::size_t> prompt_words) {
  return ModelInput{plan.inputs, plan.masked, plan.maskbook_rows, plan.attention, std::move(prompt_words)};
}

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, double std_dev, Rng& rng) {
  Tensor t = Tensor::matrix(rows, cols);
  for (auto& v : t.values()) v = static_cast<real>(rng.normal() * std_dev);
  return t;
}

Tensor ones(std::size_t n) { return Tensor({n}, real(1)); }

void check_input(const ModelInput& in, const ModelConfig& cfg) {
  const std::size_t t = in.length();
  if (t == 0) throw std::invalid_argument("model input: empty sequence");
  if (t > cfg.max_length) {
    throw std::invalid_argument("model input: length " + std::to_string(t) + " exceeds max_length " +
                                std::to_string(cfg.max_length));
  }
  if (in.masked.size() != t || in.maskbook_rows.size() != t) throw std::invalid_argument("model input: ragged fields");
  if (in.attention.queries() != t + kConditionSlots || in.attention.keys() != t + kConditionSlots) {
    throw std::invalid_argument("model input: attention mask must cover T + 2 slots");
  }
  if (in.prompt_words.empty()) throw std::invalid_argument("model input: prompt has no words");
  for (std::size_t j = 0; j < t; ++j) {
    if (in.masked[j]) {
      if (in.maskbook_rows[j] >= cfg.max_length) throw std::out_of_range("model input: maskbook row out of range");
    } else if (in.tokens[j] >= cfg.vocabulary) {
      throw std::out_of_range("model input: token " + std::to_string(in.tokens[j]) + " outside vocabulary");
    }
  }
  for (std::size_t w : in.prompt_words) {
    if (w >= cfg.word_vocabulary) throw std::out_of_range("model input: word id out of range");
  }
}

}  // namespace

Transformer::Transformer(const ModelConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model;
  const std::size_t hidden = d * config_.ffn_multiplier;
  const double emb_std = 0.02;
  const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double out_std = in_std / std::sqrt(2.0 * static_cast<double>(config_.layers));

  token_embedding_ = Parameter("embed.tokens", random_matrix(config_.vocabulary, d, emb_std, rng));
  maskbook_ = Parameter("embed.maskbook", random_matrix(config_.max_length, d, emb_std, rng));
  position_embedding_ = Parameter("embed.positions", random_matrix(config_.max_length + kConditionSlots, d, emb_std, rng));
  time_embedding_ = Parameter("embed.time", random_matrix(config_.time_buckets, d, emb_std, rng));
  word_embedding_ = Parameter("embed.words", random_matrix(config_.word_vocabulary, d, emb_std, rng));

  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    Block b;
    b.cross = l < config_.cross_layers;
    b.ln1_gain = Parameter(p + "ln1.gain", ones(d));
    b.ln1_bias = Parameter(p + "ln1.bias", Tensor({d}));
    b.wq = Parameter(p + "attn.wq", random_matrix(d, d, in_std, rng));
    b.bq = Parameter(p + "attn.bq", Tensor({d}));
    b.wk = Parameter(p + "attn.wk", random_matrix(d, d, in_std, rng));
    b.bk = Parameter(p + "attn.bk", Tensor({d}));
    b.wv = Parameter(p + "attn.wv", random_matrix(d, d, in_std, rng));
    b.bv = Parameter(p + "attn.bv", Tensor({d}));
    b.wo = Parameter(p + "attn.wo", random_matrix(d, d, out_std, rng));
    b.bo = Parameter(p + "attn.bo", Tensor({d}));
    b.ln2_gain = Parameter(p + "ln2.gain", ones(d));
    b.ln2_bias = Parameter(p + "ln2.bias", Tensor({d}));
    b.w1 = Parameter(p + "ffn.w1", random_matrix(d, hidden, in_std, rng));
    b.b1 = Parameter(p + "ffn.b1", Tensor({hidden}));
    b.w2 = Parameter(p + "ffn.w2", random_matrix(hidden, d, out_std / std::sqrt(double(config_.ffn_multiplier)), rng));
    b.b2 = Parameter(p + "ffn.b2", Tensor({d}));
    blocks_.push_back(std::move(b));
  }
  final_gain_ = Parameter("final.gain", ones(d));
  final_bias_ = Parameter("final.bias", Tensor({d}));
  head_weight_ = Parameter("head.weight", random_matrix(d, config_.vocabulary, in_std, rng));
  head_bias_ = Parameter("head.bias", Tensor({config_.vocabulary}));
}

ConditionBundle Transformer::encode_conditions(Graph& g, std::span<const ModelInput> batch) {
  ConditionBundle c;
  std::vector<std::size_t> word_ids;
  std::vector<std::size_t> buckets;
  c.word_offsets.push_back(0);
  for (const auto& in : batch) {
    word_ids.insert(word_ids.end(), in.prompt_words.begin(), in.prompt_words.end());
    c.word_offsets.push_back(word_ids.size());
    buckets.push_back(time_bucket(in.n_masked(), in.length(), config_.time_buckets));
  }
  c.words = ops::gather_rows(g.parameter(word_embedding_), word_ids);
  // Sentence embedding = mean of the prompt's word embeddings.
  Tensor averaging = Tensor::matrix(batch.size(), word_ids.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const std::size_t n = c.word_offsets[b + 1] - c.word_offsets[b];
    for (std::size_t w = c.word_offsets[b]; w < c.word_offsets[b + 1]; ++w) {
      averaging(b, w) = real(1) / static_cast<real>(n);
    }
  }
  c.sentence = ops::matmul(g.constant(std::move(averaging)), c.words);
  c.time = ops::gather_rows(g.parameter(time_embedding_), buckets);
  return c;
}

Var Transformer::embed_inputs(Graph& g, std::span<const ModelInput> batch) {
  if (batch.empty()) throw std::invalid_argument("embed_inputs: empty batch");
  for (const auto& in : batch) check_input(in, config_);
  const ConditionBundle cond = encode_conditions(g, batch);

  // Rows [0, K) are token embeddings, rows [K, K + T_max) the Maskbook.
  const std::size_t k = config_.vocabulary;
  std::vector<std::size_t> table_rows;
  std::size_t total = 0;
  for (const auto& in : batch) total += in.length() + kConditionSlots;
  std::vector<std::size_t> slot_source(total);  // index into concat([S; time; sequence rows])
  std::vector<std::size_t> positions(total);
  const std::size_t nb = batch.size();
  std::size_t row = 0;
  for (std::size_t b = 0; b < nb; ++b) {
    const auto& in = batch[b];
    slot_source[row] = b;
    positions[row++] = 0;
    slot_source[row] = nb + b;
    positions[row++] = 1;
    for (std::size_t j = 0; j < in.length(); ++j) {
      table_rows.push_back(in.masked[j] ? k + in.maskbook_rows[j] : in.tokens[j]);
      slot_source[row] = 2 * nb + table_rows.size() - 1;
      positions[row++] = kConditionSlots + j;
    }
  }
  const Var tables[] = {g.parameter(token_embedding_), g.parameter(maskbook_)};
  Var sequence = ops::gather_rows(ops::concat_rows(tables), table_rows);
  const Var parts[] = {cond.sentence, cond.time, sequence};
  Var slots = ops::gather_rows(ops::concat_rows(parts), slot_source);
  return ops::add(slots, ops::gather_rows(g.parameter(position_embedding_), positions));
}

Var Transformer::apply_block(Graph& g, std::size_t layer, Var x, std::span<const ModelInput> batch,
                             const ConditionBundle& cond) {
  Block& b = blocks_.at(layer);
  const std::size_t heads = config_.heads;
  const real scale = real(1) / std::sqrt(static_cast<real>(config_.d_model / heads));

  std::vector<ops::AttentionSegment> segments;
  segments.reserve(batch.size());
  std::size_t row = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::size_t slots = batch[i].length() + kConditionSlots;
    if (b.cross) {
      segments.push_back({row, slots, cond.word_offsets[i], cond.word_offsets[i + 1] - cond.word_offsets[i], {}});
    } else {
      segments.push_back({row, slots, row, slots, batch[i].attention});
    }
    row += slots;
  }
  if (row != x.rows()) throw std::invalid_argument("forward: embedded rows do not match the batch layout");

  Var h = ops::layer_norm(x, g.parameter(b.ln1_gain), g.parameter(b.ln1_bias));
  Var q = ops::linear(h, g.parameter(b.wq), g.parameter(b.bq));
  Var source = b.cross ? cond.words : h;
  Var k = ops::linear(source, g.parameter(b.wk), g.parameter(b.bk));
  Var v = ops::linear(source, g.parameter(b.wv), g.parameter(b.bv));
  Var a = ops::attention(q, k, v, segments, heads, scale);
  x = ops::add(x, ops::linear(a, g.parameter(b.wo), g.parameter(b.bo)));

  Var h2 = ops::layer_norm(x, g.parameter(b.ln2_gain), g.parameter(b.ln2_bias));
  Var f = ops::gelu(ops::linear(h2, g.parameter(b.w1), g.parameter(b.b1)));
  return ops::add(x, ops::linear(f, g.parameter(b.w2), g.parameter(b.b2)));
}

Var Transformer::forward(Graph& g, Var embedded, std::span<const ModelInput> batch) {
  if (embedded.cols() != config_.d_model) throw std::invalid_argument("forward: embedding width mismatch");
  for (const auto& in : batch) check_input(in, config_);
  const ConditionBundle cond = encode_conditions(g, batch);
  Var x = embedded;
  for (std::size_t l = 0; l < blocks_.size(); ++l) x = apply_block(g, l, x, batch, cond);
  x = ops::layer_norm(x, g.parameter(final_gain_), g.parameter(final_bias_));

  std::vector<std::size_t> sequence_rows;
  std::size_t row = 0;
  for (const auto& in : batch) {
    for (std::size_t j = 0; j < in.length(); ++j) sequence_rows.push_back(row + kConditionSlots + j);
    row += in.length() + kConditionSlots;
  }
  return ops::linear(ops::gather_rows(x, sequence_rows), g.parameter(head_weight_), g.parameter(head_bias_));
}

std::vector<Parameter*> Transformer::parameters() {
  std::vector<Parameter*> out{&token_embedding_, &maskbook_, &position_embedding_, &time_embedding_, &word_embedding_};
  for (Block& b : blocks_) {
    for (Parameter* p : {&b.ln1_gain, &b.ln1_bias, &b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo, &b.bo,
                         &b.ln2_gain, &b.ln2_bias, &b.w1, &b.b1, &b.w2, &b.b2}) {
      out.push_back(p);
    }
  }
  for (Parameter* p : {&final_gain_, &final_bias_, &head_weight_, &head_bias_}) out.push_back(p);
  return out;
}

std::size_t Transformer::parameter_count() {
  std::size_t n = 0;
  for (Parameter* p : parameters()) n += p->value.size();
  return n;
}

}  // namespace bad::transformer
