#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bad/sampling.hpp"
#include "bad/tokenizer.hpp"
#include "bad/training.hpp"
#include "bad/transformer.hpp"

namespace bad {

// Bad key, unknown key, malformed line or value. The CLI maps it to exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Flat `section.key = value` settings. Only keys present in the preset exist.
class Config {
 public:
  static Config preset(std::string_view name);  // "desk" or "paper-scale"

  // Parses `section.key = value` lines with `#` comments and overrides
  // existing keys. Unknown keys throw ConfigError naming `source` and the line.
  void apply_text(std::string_view text, std::string_view source = "config");
  void apply_file(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  double get_double(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  std::string to_text() const;

 private:
  std::map<std::string, std::string> values_;
};

transformer::ModelConfig model_config(const Config& c);
training::TrainConfig train_config(const Config& c);
tokenizer::VqVaeConfig vq_config(const Config& c);
tokenizer::TokenizerTrainConfig tokenizer_train_config(const Config& c);
sampling::SamplerConfig sampler_config(const Config& c);

}  // namespace bad
