#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bad/config.hpp"
#include "bad/tensor.hpp"
#include "bad/tokenizer.hpp"
#include "bad/transformer.hpp"

namespace bad {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

// File layout: "<manifest bytes>\n", a UTF-8 manifest, then every tensor as
// little-endian float32 values concatenated in manifest order.
struct Checkpoint {
  std::string module;
  Config config;
  std::vector<NamedTensor> tensors;

  const Tensor& tensor(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
// Validates version, manifest and payload length before returning anything.
Checkpoint load_checkpoint(const std::string& path);

// Copies every parameter from the checkpoint, or none if any name or shape
// is missing or mismatched.
void restore_parameters(const Checkpoint& checkpoint, std::span<Parameter* const> params);

Checkpoint transformer_checkpoint(transformer::Transformer& model, const Config& config);
std::unique_ptr<transformer::Transformer> load_transformer(const Checkpoint& checkpoint);

Checkpoint tokenizer_checkpoint(tokenizer::VqVae& model, const Config& config);
std::unique_ptr<tokenizer::VqVae> load_tokenizer(const Checkpoint& checkpoint);

}  // namespace bad
