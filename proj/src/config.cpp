#include "bad/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace bad {

namespace {

const std::vector<std::pair<std::string, std::string>>& desk_defaults() {
  static const std::vector<std::pair<std::string, std::string>> d = {
      {"data.states", "8"},
      {"data.length", "16"},
      {"data.sequences", "50000"},
      {"data.eval_per_condition", "2000"},
      {"transformer.layers", "4"},
      {"transformer.d_model", "64"},
      {"transformer.heads", "4"},
      {"transformer.cross_layers", "2"},
      {"transformer.time_buckets", "64"},
      {"transformer.word_vocabulary", "256"},
      {"transformer.ffn_multiplier", "4"},
      {"transformer.direction", "suffix"},
      {"transformer.maskbook_indexing", "position"},
      {"train.learning_rate", "2e-4"},
      {"train.final_learning_rate", "1e-5"},
      {"train.decay_step", "2000"},
      {"train.steps", "3000"},
      {"train.batch_size", "128"},
      {"train.beta1", "0.5"},
      {"train.beta2", "0.99"},
      {"train.weight_decay", "0"},
      {"train.unmasked_weight", "0.1"},
      {"train.grad_clip", "1"},
      {"train.max_replace_ratio", "0.4"},
      {"train.log_interval", "50"},
      {"tokenizer.features", "6"},
      {"tokenizer.frames", "64"},
      {"tokenizer.width", "64"},
      {"tokenizer.latent_dim", "32"},
      {"tokenizer.codebook_size", "64"},
      {"tokenizer.downsample", "4"},
      {"tokenizer.commitment", "0.02"},
      {"tokenizer.ema_decay", "0.99"},
      {"tokenizer.dead_code_threshold", "1"},
      {"tokenizer.reset_interval", "256"},
      {"tokenizer.sequences", "4096"},
      {"tokenizer.steps", "3000"},
      {"tokenizer.batch_size", "32"},
      {"tokenizer.learning_rate", "2e-4"},
      {"tokenizer.final_learning_rate", "1e-5"},
      {"tokenizer.decay_step", "2000"},
      {"tokenizer.beta1", "0.9"},
      {"tokenizer.beta2", "0.99"},
      {"tokenizer.log_interval", "100"},
      {"sample.method", "oaas"},
      {"sample.iterations", "10"},
      {"sample.temperature", "1"},
      {"sample.top_k", "0"},
      {"sample.confidence", "max"},
      {"sample.gumbel_temperature", "0"},
      {"sample.batch", "64"},
  };
  return d;
}

const std::vector<std::pair<std::string, std::string>>& paper_overrides() {
  static const std::vector<std::pair<std::string, std::string>> d = {
      {"transformer.layers", "18"},
      {"transformer.d_model", "1024"},
      {"transformer.heads", "16"},
      {"transformer.word_vocabulary", "4096"},
      {"train.decay_step", "150000"},
      {"train.steps", "300000"},
      {"tokenizer.codebook_size", "8192"},
      {"tokenizer.width", "512"},
      {"tokenizer.batch_size", "256"},
      {"tokenizer.steps", "300000"},
      {"tokenizer.decay_step", "200000"},
  };
  return d;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

Config Config::preset(std::string_view name) {
  Config c;
  for (const auto& [k, v] : desk_defaults()) c.values_[k] = v;
  if (name == "desk") return c;
  if (name == "paper-scale") {
    for (const auto& [k, v] : paper_overrides()) c.values_[k] = v;
    return c;
  }
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected desk or paper-scale)");
}

void Config::apply_text(std::string_view text, std::string_view source) {
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const std::string where = std::string(source) + ":" + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'section.key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto dot = key.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == key.size() || key.find('.', dot + 1) != std::string::npos) {
      throw ConfigError(where + ": key '" + key + "' must have the form section.key");
    }
    if (value.empty()) throw ConfigError(where + ": empty value for '" + key + "'");
    if (!has(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    values_[key] = value;
  }
}

void Config::apply_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  apply_text(ss.str(), path);
}

void Config::set(const std::string& key, const std::string& value) {
  if (!has(key)) throw ConfigError("unknown key '" + key + "'");
  values_[key] = value;
}

const std::string& Config::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second;
}

std::size_t Config::get_size(const std::string& key) const {
  const std::string& v = get(key);
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

double Config::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  }
}

std::string Config::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

namespace {

corruption::Direction direction(const Config& c) {
  const std::string& v = c.get("transformer.direction");
  if (v == "suffix") return corruption::Direction::suffix;
  if (v == "prefix") return corruption::Direction::prefix;
  throw ConfigError("transformer.direction must be suffix or prefix, got '" + v + "'");
}

corruption::MaskbookIndexing indexing(const Config& c) {
  const std::string& v = c.get("transformer.maskbook_indexing");
  if (v == "position") return corruption::MaskbookIndexing::position;
  if (v == "rank") return corruption::MaskbookIndexing::rank;
  throw ConfigError("transformer.maskbook_indexing must be position or rank, got '" + v + "'");
}

template <typename F>
auto checked(F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

transformer::ModelConfig model_config(const Config& c) {
  return checked([&] {
    transformer::ModelConfig m;
    m.layers = c.get_size("transformer.layers");
    m.d_model = c.get_size("transformer.d_model");
    m.heads = c.get_size("transformer.heads");
    m.cross_layers = c.get_size("transformer.cross_layers");
    m.time_buckets = c.get_size("transformer.time_buckets");
    m.word_vocabulary = c.get_size("transformer.word_vocabulary");
    m.ffn_multiplier = c.get_size("transformer.ffn_multiplier");
    m.vocabulary = c.get_size("data.states");
    m.max_length = c.get_size("data.length");
    m.direction = direction(c);
    m.maskbook_indexing = indexing(c);
    m.validate();
    return m;
  });
}

training::TrainConfig train_config(const Config& c) {
  return checked([&] {
    training::TrainConfig t;
    t.learning_rate = c.get_double("train.learning_rate");
    t.final_learning_rate = c.get_double("train.final_learning_rate");
    t.decay_step = c.get_size("train.decay_step");
    t.steps = c.get_size("train.steps");
    t.batch_size = c.get_size("train.batch_size");
    t.adam.beta1 = c.get_double("train.beta1");
    t.adam.beta2 = c.get_double("train.beta2");
    t.adam.weight_decay = c.get_double("train.weight_decay");
    t.unmasked_weight = c.get_double("train.unmasked_weight");
    t.grad_clip = c.get_double("train.grad_clip");
    t.corruption.max_replace_ratio = c.get_double("train.max_replace_ratio");
    t.log_interval = c.get_size("train.log_interval");
    t.corruption.direction = direction(c);
    t.corruption.maskbook_indexing = indexing(c);
    t.validate();
    return t;
  });
}

tokenizer::VqVaeConfig vq_config(const Config& c) {
  return checked([&] {
    tokenizer::VqVaeConfig v;
    v.features = c.get_size("tokenizer.features");
    v.frames = c.get_size("tokenizer.frames");
    v.width = c.get_size("tokenizer.width");
    v.latent_dim = c.get_size("tokenizer.latent_dim");
    v.codebook_size = c.get_size("tokenizer.codebook_size");
    v.downsample = c.get_size("tokenizer.downsample");
    v.commitment = c.get_double("tokenizer.commitment");
    v.ema_decay = c.get_double("tokenizer.ema_decay");
    v.dead_code_threshold = c.get_double("tokenizer.dead_code_threshold");
    v.reset_interval = c.get_size("tokenizer.reset_interval");
    return v;
  });
}

tokenizer::TokenizerTrainConfig tokenizer_train_config(const Config& c) {
  return checked([&] {
    tokenizer::TokenizerTrainConfig t;
    t.steps = c.get_size("tokenizer.steps");
    t.batch = c.get_size("tokenizer.batch_size");
    t.learning_rate = c.get_double("tokenizer.learning_rate");
    t.final_learning_rate = c.get_double("tokenizer.final_learning_rate");
    t.decay_step = c.get_size("tokenizer.decay_step");
    t.adam.beta1 = c.get_double("tokenizer.beta1");
    t.adam.beta2 = c.get_double("tokenizer.beta2");
    t.log_interval = c.get_size("tokenizer.log_interval");
    return t;
  });
}

sampling::SamplerConfig sampler_config(const Config& c) {
  return checked([&] {
    sampling::SamplerConfig s;
    const std::string& method = c.get("sample.method");
    if (method == "oaas") s.method = sampling::Method::oaas;
    else if (method == "cbs") s.method = sampling::Method::cbs;
    else throw ConfigError("sample.method must be oaas or cbs, got '" + method + "'");
    s.iterations = c.get_size("sample.iterations");
    s.temperature = c.get_double("sample.temperature");
    s.top_k = c.get_size("sample.top_k");
    const std::string& conf = c.get("sample.confidence");
    if (conf == "max") s.confidence = sampling::Confidence::max_probability;
    else if (conf == "sampled") s.confidence = sampling::Confidence::sampled_probability;
    else throw ConfigError("sample.confidence must be max or sampled, got '" + conf + "'");
    s.gumbel_temperature = c.get_double("sample.gumbel_temperature");
    s.batch = c.get_size("sample.batch");
    s.validate();
    return s;
  });
}

}  // namespace bad
