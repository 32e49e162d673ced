#include "bad/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "bad/ops.hpp"

namespace bad::tokenizer {

Codebook::Codebook(Tensor code_vectors)
    : codes(std::move(code_vectors)), ema_counts(codes.rows(), real(1)), ema_sums(codes), usage(codes.rows(), 0) {
  if (codes.rows() < 2) throw std::invalid_argument("codebook needs at least two entries");
}

std::size_t Codebook::live_codes(real threshold) const {
  return static_cast<std::size_t>(
      std::count_if(ema_counts.begin(), ema_counts.end(), [threshold](real c) { return c >= threshold; }));
}

std::size_t quantize(std::span<const real> latent, const Codebook& codebook) {
  if (codebook.size() == 0) throw std::invalid_argument("quantize: empty codebook");
  if (latent.size() != codebook.dim()) throw std::invalid_argument("quantize: latent dimension mismatch");
  std::size_t best = 0;
  real best_dist = std::numeric_limits<real>::infinity();
  for (std::size_t k = 0; k < codebook.size(); ++k) {
    auto c = codebook.codes.row(k);
    real d = 0;
    for (std::size_t j = 0; j < latent.size(); ++j) {
      const real diff = latent[j] - c[j];
      d += diff * diff;
    }
    if (d < best_dist) {
      best_dist = d;
      best = k;
    }
  }
  return best;
}

std::vector<std::size_t> quantize_rows(const Tensor& latents, const Codebook& codebook) {
  std::vector<std::size_t> out(latents.rows());
  for (std::size_t r = 0; r < latents.rows(); ++r) out[r] = quantize(latents.row(r), codebook);
  return out;
}

Tensor lookup(const Codebook& codebook, std::span<const std::size_t> indices) {
  Tensor out = Tensor::matrix(indices.size(), codebook.dim());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= codebook.size()) {
      throw std::out_of_range("token " + std::to_string(indices[i]) + " outside codebook of " +
                              std::to_string(codebook.size()));
    }
    auto src = codebook.codes.row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

void ema_update(Codebook& codebook, const Tensor& latents, std::span<const std::size_t> assigned, double decay,
                double epsilon) {
  if (!(decay > 0 && decay < 1)) throw std::invalid_argument("ema_update: decay must lie in (0, 1)");
  if (assigned.empty()) return;
  if (assigned.size() != latents.rows()) throw std::invalid_argument("ema_update: one assignment per latent");
  const std::size_t k = codebook.size();
  const std::size_t d = codebook.dim();
  std::vector<double> counts(k, 0.0);
  std::vector<double> sums(k * d, 0.0);
  for (std::size_t r = 0; r < assigned.size(); ++r) {
    const std::size_t idx = assigned[r];
    counts[idx] += 1.0;
    codebook.usage[idx] += 1;
    for (std::size_t j = 0; j < d; ++j) sums[idx * d + j] += latents(r, j);
  }
  for (std::size_t c = 0; c < k; ++c) {
    codebook.ema_counts[c] = static_cast<real>(decay * codebook.ema_counts[c] + (1 - decay) * counts[c]);
    const double denom = std::max(static_cast<double>(codebook.ema_counts[c]), epsilon);
    for (std::size_t j = 0; j < d; ++j) {
      codebook.ema_sums(c, j) = static_cast<real>(decay * codebook.ema_sums(c, j) + (1 - decay) * sums[c * d + j]);
      codebook.codes(c, j) = static_cast<real>(codebook.ema_sums(c, j) / denom);
    }
  }
}

std::size_t reset_dead_codes(Codebook& codebook, double threshold, const Tensor& donors, Rng& rng) {
  if (donors.rows() == 0 || donors.cols() != codebook.dim()) {
    throw std::invalid_argument("reset_dead_codes: donor latents must match the code dimension");
  }
  std::size_t reset = 0;
  for (std::size_t c = 0; c < codebook.size(); ++c) {
    if (codebook.ema_counts[c] >= threshold) continue;
    auto src = donors.row(static_cast<std::size_t>(rng.below(donors.rows())));
    for (std::size_t j = 0; j < codebook.dim(); ++j) {
      codebook.codes(c, j) = src[j];
      codebook.ema_sums(c, j) = src[j];
    }
    codebook.ema_counts[c] = real(1);
    ++reset;
  }
  return reset;
}

VqLossTerms vq_loss(Var frames, Var reconstruction, Var latents, Var quantized, double beta) {
  VqLossTerms t;
  t.reconstruction = ops::mean_abs(ops::sub(frames, reconstruction));
  t.codebook = ops::mean_square(ops::sub(ops::stop_gradient(latents), quantized));
  t.commitment = ops::mean_square(ops::sub(latents, ops::stop_gradient(quantized)));
  t.total = ops::add(ops::add(t.reconstruction, t.codebook), ops::scale(t.commitment, static_cast<real>(beta)));
  return t;
}

VqVae::Conv VqVae::make_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t kernel,
                             std::size_t stride, std::size_t padding, Rng& rng, double gain) {
  Conv c;
  const double std_dev = std::sqrt(gain / static_cast<double>(cin * kernel));
  Tensor w = Tensor::matrix(cout, kernel * cin);
  for (auto& v : w.values()) v = static_cast<real>(rng.normal() * std_dev);
  c.weight = Parameter(name + ".weight", std::move(w));
  c.bias = Parameter(name + ".bias", Tensor({cout}));
  c.kernel = kernel;
  c.stride = stride;
  c.padding = padding;
  return c;
}

VqVae::VqVae(const VqVaeConfig& config, Rng& rng) : config_(config) {
  if (config_.downsample < 2 || (config_.downsample & (config_.downsample - 1)) != 0) {
    throw std::invalid_argument("VQ-VAE downsampling rate must be a power of two >= 2");
  }
  if (config_.codebook_size < 2) throw std::invalid_argument("codebook needs at least two entries");
  for (std::size_t l = config_.downsample; l > 1; l /= 2) ++stages_;
  const std::size_t w = config_.width;
  enc_in_ = make_conv("encoder.in", config_.features, w, 3, 1, 1, rng);
  for (std::size_t s = 0; s < stages_; ++s) {
    const std::string p = "encoder.stage" + std::to_string(s);
    enc_down_.push_back(make_conv(p + ".down", w, w, 4, 2, 1, rng));
    enc_res_.push_back({make_conv(p + ".res.conv3", w, w, 3, 1, 1, rng), make_conv(p + ".res.conv1", w, w, 1, 1, 0, rng, 0.5)});
  }
  enc_out_ = make_conv("encoder.out", w, config_.latent_dim, 3, 1, 1, rng, 1.0);
  dec_in_ = make_conv("decoder.in", config_.latent_dim, w, 3, 1, 1, rng);
  for (std::size_t s = 0; s < stages_; ++s) {
    const std::string p = "decoder.stage" + std::to_string(s);
    dec_res_.push_back({make_conv(p + ".res.conv3", w, w, 3, 1, 1, rng), make_conv(p + ".res.conv1", w, w, 1, 1, 0, rng, 0.5)});
    dec_up_.push_back(make_conv(p + ".up", w, w, 3, 1, 1, rng));
  }
  dec_out_ = make_conv("decoder.out", w, config_.features, 3, 1, 1, rng, 1.0);

  Tensor codes = Tensor::matrix(config_.codebook_size, config_.latent_dim);
  for (auto& v : codes.values()) v = static_cast<real>(rng.normal());
  codebook_ = Codebook(std::move(codes));
}

Var VqVae::apply(Graph& g, Conv& c, Var x, std::size_t batch) {
  return ops::conv1d(x, g.parameter(c.weight), g.parameter(c.bias), batch, c.kernel, c.stride, c.padding);
}

Var VqVae::apply(Graph& g, ResBlock& r, Var x, std::size_t batch) {
  Var h = apply(g, r.conv3, ops::relu(x), batch);
  h = apply(g, r.conv1, ops::relu(h), batch);
  return ops::add(x, h);
}

Var VqVae::encode(Graph& g, Var frames, std::size_t batch) {
  if (frames.cols() != config_.features) throw std::invalid_argument("encode: frame width mismatch");
  if (batch == 0 || frames.rows() % batch != 0) throw std::invalid_argument("encode: rows not divisible by batch");
  const std::size_t tau = frames.rows() / batch;
  if (tau % config_.downsample != 0) {
    throw std::invalid_argument("encode: sequence length " + std::to_string(tau) +
                                " is not divisible by the downsampling rate " + std::to_string(config_.downsample));
  }
  Var h = ops::relu(apply(g, enc_in_, frames, batch));
  for (std::size_t s = 0; s < stages_; ++s) {
    h = apply(g, enc_down_[s], h, batch);
    h = apply(g, enc_res_[s], h, batch);
  }
  return apply(g, enc_out_, ops::relu(h), batch);
}

Var VqVae::decode(Graph& g, Var quantized, std::size_t batch) {
  if (quantized.cols() != config_.latent_dim) throw std::invalid_argument("decode: latent width mismatch");
  Var h = ops::relu(apply(g, dec_in_, quantized, batch));
  for (std::size_t s = 0; s < stages_; ++s) {
    h = apply(g, dec_res_[s], h, batch);
    h = ops::repeat_rows(h, 2);
    h = ops::relu(apply(g, dec_up_[s], h, batch));
  }
  return apply(g, dec_out_, h, batch);
}

Tensor VqVae::encode(const Tensor& frames) {
  Graph g(false);
  return encode(g, g.constant(frames), 1).value();
}

TokenSequence VqVae::tokenize(const Tensor& frames) { return quantize_rows(encode(frames), codebook_); }

Tensor VqVae::decode_tokens(const TokenSequence& tokens) {
  if (tokens.empty()) throw std::invalid_argument("decode_tokens: empty token sequence");
  Graph g(false);
  return decode(g, g.constant(lookup(codebook_, tokens)), 1).value();
}

Tensor VqVae::reconstruct(const Tensor& frames) { return decode_tokens(tokenize(frames)); }

std::vector<Parameter*> VqVae::parameters() {
  std::vector<Parameter*> out;
  auto conv = [&](Conv& c) {
    out.push_back(&c.weight);
    out.push_back(&c.bias);
  };
  conv(enc_in_);
  for (std::size_t s = 0; s < stages_; ++s) {
    conv(enc_down_[s]);
    conv(enc_res_[s].conv3);
    conv(enc_res_[s].conv1);
  }
  conv(enc_out_);
  for (Parameter* p : decoder_parameters()) out.push_back(p);
  return out;
}

std::vector<Parameter*> VqVae::decoder_parameters() {
  std::vector<Parameter*> out;
  auto conv = [&](Conv& c) {
    out.push_back(&c.weight);
    out.push_back(&c.bias);
  };
  conv(dec_in_);
  for (std::size_t s = 0; s < stages_; ++s) {
    conv(dec_res_[s].conv3);
    conv(dec_res_[s].conv1);
    conv(dec_up_[s]);
  }
  conv(dec_out_);
  return out;
}

TokenizerTrainer::TokenizerTrainer(VqVae& model, TokenizerTrainConfig config)
    : model_(model), config_(config), optimizer_(model.parameters(), config.adam) {}

namespace {

Tensor stack(std::span<const Tensor> batch) {
  const std::size_t tau = batch.front().rows();
  const std::size_t d = batch.front().cols();
  Tensor out = Tensor::matrix(batch.size() * tau, d);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch[b].rows() != tau || batch[b].cols() != d) throw std::invalid_argument("ragged frame batch");
    std::copy(batch[b].values().begin(), batch[b].values().end(), out.data() + b * tau * d);
  }
  return out;
}

}  // namespace

TokenizerStepResult TokenizerTrainer::step(std::span<const Tensor> batch, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("tokenizer step: empty batch");
  const auto& cfg = model_.config();
  Graph g;
  Var frames = g.constant(stack(batch));
  Var latents = model_.encode(g, frames, batch.size());
  Codebook& book = model_.codebook();
  if (!codebook_seeded_) {
    // Start from encoder outputs so no code begins far from the data.
    reset_dead_codes(book, std::numeric_limits<double>::infinity(), latents.value(), rng);
    codebook_seeded_ = true;
  }
  const auto assigned = quantize_rows(latents.value(), book);
  Var quantized = g.constant(lookup(book, assigned));
  Var decoded = model_.decode(g, ops::straight_through(latents, quantized), batch.size());
  VqLossTerms loss = vq_loss(frames, decoded, latents, quantized, cfg.commitment);
  const double total = loss.total.value().item();
  if (!std::isfinite(total)) throw NumericError("tokenizer loss is not finite at step " + std::to_string(step_));

  optimizer_.zero_grad();
  g.backward(loss.total);
  const double lr = step_ < config_.decay_step ? config_.learning_rate : config_.final_learning_rate;
  optimizer_.step(lr);

  ema_update(book, latents.value(), assigned, cfg.ema_decay);
  ++step_;
  if (cfg.reset_interval > 0 && step_ % cfg.reset_interval == 0) {
    reset_dead_codes(book, cfg.dead_code_threshold, latents.value(), rng);
  }
  return {total, loss.reconstruction.value().item(), loss.commitment.value().item(), loss.codebook.value().item()};
}

void TokenizerTrainer::train(std::span<const Tensor> dataset, Rng& rng,
                             const std::function<void(const TokenizerLogRow&)>& log) {
  if (dataset.empty()) throw std::invalid_argument("tokenizer training needs data");
  std::vector<Tensor> batch;
  const std::size_t start = step_;
  for (std::size_t s = start; s < config_.steps; ++s) {
    batch.clear();
    for (std::size_t b = 0; b < config_.batch; ++b) batch.push_back(dataset[rng.below(dataset.size())]);
    const double lr = step_ < config_.decay_step ? config_.learning_rate : config_.final_learning_rate;
    const auto r = step(batch, rng);
    if (log && config_.log_interval > 0 && (step_ % config_.log_interval == 0 || step_ == config_.steps)) {
      log({step_, r.loss, r.reconstruction, r.commitment, r.codebook_term,
           model_.codebook().live_codes(static_cast<real>(model_.config().dead_code_threshold)), lr});
    }
  }
}

double reconstruction_l1(VqVae& model, std::span<const Tensor> sequences) {
  double total = 0;
  std::size_t count = 0;
  for (const Tensor& f : sequences) {
    const Tensor r = model.reconstruct(f);
    for (std::size_t i = 0; i < f.size(); ++i) total += std::abs(static_cast<double>(f[i]) - r[i]);
    count += f.size();
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

double codebook_usage(VqVae& model, std::span<const Tensor> sequences) {
  std::vector<bool> hit(model.codebook().size(), false);
  for (const Tensor& f : sequences) {
    for (std::size_t t : model.tokenize(f)) hit[t] = true;
  }
  return static_cast<double>(std::count(hit.begin(), hit.end(), true)) / static_cast<double>(hit.size());
}

}  // namespace bad::tokenizer
