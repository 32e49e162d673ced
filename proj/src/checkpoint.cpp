#include "bad/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace bad {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw CheckpointError("checkpoint has no tensor '" + name + "'");
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  std::ostringstream manifest;
  manifest << "version " << kCheckpointVersion << "\n";
  manifest << "module " << checkpoint.module << "\n";
  for (const auto& [k, v] : checkpoint.config.values()) manifest << "config " << k << " " << v << "\n";
  std::size_t offset = 0;
  for (const auto& t : checkpoint.tensors) {
    manifest << "tensor " << t.name << " " << offset << " " << t.value.shape().size();
    for (std::size_t d : t.value.shape()) manifest << " " << d;
    manifest << "\n";
    offset += t.value.size();
  }
  const std::string text = manifest.str();

  std::vector<float> payload;
  payload.reserve(offset);
  for (const auto& t : checkpoint.tensors) {
    for (real v : t.value.values()) payload.push_back(static_cast<float>(v));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
  out << text.size() << "\n" << text;
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw CheckpointError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::string first;
  if (!std::getline(in, first)) throw CheckpointError(path + ": missing manifest length");
  std::size_t manifest_bytes = 0;
  try {
    std::size_t used = 0;
    manifest_bytes = std::stoul(first, &used);
    if (used != first.size()) throw std::invalid_argument(first);
  } catch (const std::exception&) {
    throw CheckpointError(path + ": malformed manifest length line");
  }
  std::string text(manifest_bytes, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(manifest_bytes))) {
    throw CheckpointError(path + ": truncated manifest");
  }

  Checkpoint cp;
  cp.config = Config::preset("desk");
  struct Entry {
    std::string name;
    std::size_t offset;
    Shape shape;
  };
  std::vector<Entry> entries;
  bool have_version = false;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "version") {
      int v = 0;
      ls >> v;
      if (v != kCheckpointVersion) {
        throw CheckpointError(path + ": checkpoint version " + std::to_string(v) + ", expected " +
                              std::to_string(kCheckpointVersion));
      }
      have_version = true;
    } else if (kind == "module") {
      ls >> cp.module;
    } else if (kind == "config") {
      std::string key, value;
      ls >> key;
      std::getline(ls >> std::ws, value);
      try {
        cp.config.set(key, value);
      } catch (const ConfigError& e) {
        throw CheckpointError(path + ": " + e.what());
      }
    } else if (kind == "tensor") {
      Entry e;
      std::size_t rank = 0;
      if (!(ls >> e.name >> e.offset >> rank)) throw CheckpointError(path + ": malformed tensor line");
      e.shape.resize(rank);
      for (auto& d : e.shape) {
        if (!(ls >> d) || d == 0) throw CheckpointError(path + ": malformed shape for '" + e.name + "'");
      }
      entries.push_back(std::move(e));
    } else if (!kind.empty()) {
      throw CheckpointError(path + ": unknown manifest entry '" + kind + "'");
    }
  }
  if (!have_version) throw CheckpointError(path + ": manifest has no version");

  std::size_t expected = 0;
  for (const auto& e : entries) {
    if (e.offset != expected) throw CheckpointError(path + ": tensor '" + e.name + "' has an inconsistent offset");
    std::size_t n = 1;
    for (std::size_t d : e.shape) n *= d;
    expected += n;
  }
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != expected * sizeof(float)) {
    throw CheckpointError(path + ": payload has " + std::to_string(bytes.size()) + " bytes, manifest needs " +
                          std::to_string(expected * sizeof(float)));
  }
  for (const auto& e : entries) {
    Tensor t(e.shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
      float f;
      std::memcpy(&f, bytes.data() + (e.offset + i) * sizeof(float), sizeof(float));
      t[i] = static_cast<real>(f);
    }
    cp.tensors.push_back({e.name, std::move(t)});
  }
  return cp;
}

void restore_parameters(const Checkpoint& checkpoint, std::span<Parameter* const> params) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& t : checkpoint.tensors) by_name[t.name] = &t.value;
  for (const Parameter* p : params) {
    const auto it = by_name.find(p->name);
    if (it == by_name.end()) throw CheckpointError("checkpoint is missing parameter '" + p->name + "'");
    if (it->second->shape() != p->value.shape()) {
      throw CheckpointError("parameter '" + p->name + "' has shape " + shape_to_string(it->second->shape()) +
                            " in the checkpoint, model expects " + shape_to_string(p->value.shape()));
    }
  }
  for (Parameter* p : params) p->value = *by_name[p->name];
}

Checkpoint transformer_checkpoint(transformer::Transformer& model, const Config& config) {
  Checkpoint cp{"transformer", config, {}};
  for (const Parameter* p : model.parameters()) cp.tensors.push_back({p->name, p->value});
  return cp;
}

std::unique_ptr<transformer::Transformer> load_transformer(const Checkpoint& checkpoint) {
  if (checkpoint.module != "transformer") {
    throw CheckpointError("expected a transformer checkpoint, found '" + checkpoint.module + "'");
  }
  Rng rng(0);
  auto model = std::make_unique<transformer::Transformer>(model_config(checkpoint.config), rng);
  restore_parameters(checkpoint, model->parameters());
  return model;
}

Checkpoint tokenizer_checkpoint(tokenizer::VqVae& model, const Config& config) {
  Checkpoint cp{"tokenizer", config, {}};
  for (const Parameter* p : model.parameters()) cp.tensors.push_back({p->name, p->value});
  const auto& book = model.codebook();
  cp.tensors.push_back({"codebook.codes", book.codes});
  cp.tensors.push_back({"codebook.ema_counts", Tensor({book.ema_counts.size()}, book.ema_counts)});
  cp.tensors.push_back({"codebook.ema_sums", book.ema_sums});
  return cp;
}

std::unique_ptr<tokenizer::VqVae> load_tokenizer(const Checkpoint& checkpoint) {
  if (checkpoint.module != "tokenizer") {
    throw CheckpointError("expected a tokenizer checkpoint, found '" + checkpoint.module + "'");
  }
  Rng rng(0);
  auto model = std::make_unique<tokenizer::VqVae>(vq_config(checkpoint.config), rng);
  const Tensor& codes = checkpoint.tensor("codebook.codes");
  const Tensor& counts = checkpoint.tensor("codebook.ema_counts");
  const Tensor& sums = checkpoint.tensor("codebook.ema_sums");
  auto& book = model->codebook();
  if (codes.shape() != book.codes.shape() || sums.shape() != book.ema_sums.shape() ||
      counts.size() != book.ema_counts.size()) {
    throw CheckpointError("tokenizer checkpoint codebook does not match its config");
  }
  restore_parameters(checkpoint, model->parameters());
  book.codes = codes;
  book.ema_sums = sums;
  book.ema_counts.assign(counts.values().begin(), counts.values().end());
  return model;
}

}  // namespace bad
