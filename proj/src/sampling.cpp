#include "bad/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "bad/ops.hpp"

namespace bad::sampling {

std::size_t cosine_schedule(std::size_t i, std::size_t iterations, std::size_t length) {
  if (iterations == 0 || i == 0 || i > iterations) {
    throw std::out_of_range("cosine_schedule: iteration " + std::to_string(i) + " outside [1, " +
                            std::to_string(iterations) + "]");
  }
  if (i == iterations) return 0;
  const double angle = std::numbers::pi * static_cast<double>(i) / (2.0 * static_cast<double>(iterations));
  double v = static_cast<double>(length) * std::cos(angle);
  // Values such as T cos(pi/3) are exact integers; keep rounding noise from flooring them down.
  const double nearest = std::round(v);
  if (std::abs(v - nearest) <= 1e-9 * std::max(1.0, v)) v = nearest;
  return std::min(length, static_cast<std::size_t>(std::max(0.0, std::floor(v))));
}

void SamplerConfig::validate() const {
  if (iterations == 0) throw std::invalid_argument("sampler: iterations must be >= 1");
  if (!(temperature >= 0)) throw std::invalid_argument("sampler: temperature must be >= 0");
  if (!(gumbel_temperature >= 0)) throw std::invalid_argument("sampler: gumbel_temperature must be >= 0");
  if (batch == 0) throw std::invalid_argument("sampler: batch must be >= 1");
}

namespace {

struct State {
  Rng rng;
  std::vector<std::size_t> prompt;
  TokenSequence tokens;
  std::vector<bool> masked;
  corruption::Permutation permutation;
  std::vector<std::size_t> decode_order;  // OAAS: masked positions in decode order
  std::size_t cursor = 0;
  std::size_t unknown = 0;
  std::size_t remaining = 0;
};

State make_state(const GenerationRequest& req, const transformer::ModelConfig& cfg, Rng rng) {
  const std::size_t t = req.length;
  if (t == 0) throw std::invalid_argument("generate: length must be >= 1");
  if (t > cfg.max_length) {
    throw std::invalid_argument("generate: length " + std::to_string(t) + " exceeds max_length " +
                                std::to_string(cfg.max_length));
  }
  State s{std::move(rng), req.prompt_words, TokenSequence(t, 0), std::vector<bool>(t, true), {}, {}, 0, t, t};
  std::vector<bool> seen(t, false);
  for (const KnownToken& k : req.known) {
    if (k.position >= t) throw std::out_of_range("generate: known position outside the sequence");
    if (k.token >= cfg.vocabulary) throw std::out_of_range("generate: known token outside the vocabulary");
    if (seen[k.position]) throw std::invalid_argument("generate: known position given twice");
    seen[k.position] = true;
    s.tokens[k.position] = k.token;
    s.masked[k.position] = false;
    --s.unknown;
  }
  s.remaining = s.unknown;
  if (req.permutation) {
    if (req.permutation->size() != t) throw std::invalid_argument("generate: permutation length mismatch");
    s.permutation = *req.permutation;
  } else {
    s.permutation = corruption::sample_permutation(t, s.rng);
  }
  for (std::size_t r = 0; r < t; ++r) {
    const std::size_t pos = s.permutation.order[r];
    if (s.masked[pos]) s.decode_order.push_back(pos);
  }
  if (cfg.direction == corruption::Direction::prefix) std::reverse(s.decode_order.begin(), s.decode_order.end());
  return s;
}

transformer::ModelInput make_model_input(const State& s, const transformer::ModelConfig& cfg) {
  transformer::ModelInput in;
  in.tokens = s.tokens;
  in.masked = s.masked;
  in.maskbook_rows = corruption::maskbook_rows(s.permutation, cfg.maskbook_indexing);
  in.attention = corruption::build_hybrid_mask(s.masked, s.permutation, cfg.direction);
  in.prompt_words = s.prompt;
  return in;
}

std::vector<double> distribution(std::span<const real> logits, const SamplerConfig& cfg) {
  const std::size_t k = logits.size();
  std::vector<double> p(k, 0.0);
  if (cfg.temperature == 0) {
    const auto best = std::max_element(logits.begin(), logits.end()) - logits.begin();
    p[static_cast<std::size_t>(best)] = 1.0;
    return p;
  }
  std::vector<bool> keep(k, true);
  if (cfg.top_k > 0 && cfg.top_k < k) {
    std::vector<std::size_t> idx(k);
    for (std::size_t i = 0; i < k; ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
    std::fill(keep.begin(), keep.end(), false);
    for (std::size_t i = 0; i < cfg.top_k; ++i) keep[idx[i]] = true;
  }
  double top = -INFINITY;
  for (std::size_t i = 0; i < k; ++i) {
    if (keep[i]) top = std::max(top, static_cast<double>(logits[i]) / cfg.temperature);
  }
  double total = 0;
  for (std::size_t i = 0; i < k; ++i) {
    if (!keep[i]) continue;
    p[i] = std::exp(static_cast<double>(logits[i]) / cfg.temperature - top);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

std::size_t draw(const std::vector<double>& p, const SamplerConfig& cfg, Rng& rng) {
  if (cfg.temperature == 0) return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
  return rng.categorical(p);
}

void run_chunk(transformer::Transformer& model, std::span<State> states, std::size_t first_index,
               const SamplerConfig& cfg, const DecodeObserver& observer) {
  const auto& mcfg = model.config();
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    std::vector<std::size_t> active;
    std::vector<std::size_t> counts;
    for (std::size_t s = 0; s < states.size(); ++s) {
      const std::size_t target = cosine_schedule(it, cfg.iterations, states[s].unknown);
      const std::size_t k = states[s].remaining > target ? states[s].remaining - target : 0;
      if (k == 0) continue;
      active.push_back(s);
      counts.push_back(k);
    }
    if (active.empty()) continue;

    std::vector<transformer::ModelInput> inputs;
    inputs.reserve(active.size());
    for (std::size_t s : active) inputs.push_back(make_model_input(states[s], mcfg));
    Graph g(false);
    const Tensor logits = model.logits(g, inputs).value();

    std::size_t row0 = 0;
    for (std::size_t a = 0; a < active.size(); ++a) {
      State& st = states[active[a]];
      const std::size_t t = st.tokens.size();
      auto emit = [&](std::size_t pos, std::size_t token, std::vector<double>&& p) {
        if (observer) observer({first_index + active[a], it, pos, token, std::move(p)});
      };
      if (cfg.method == Method::oaas) {
        for (std::size_t n = 0; n < counts[a]; ++n) {
          const std::size_t pos = st.decode_order[st.cursor++];
          std::vector<double> p = distribution(logits.row(row0 + pos), cfg);
          const std::size_t token = draw(p, cfg, st.rng);
          st.tokens[pos] = token;
          st.masked[pos] = false;
          emit(pos, token, std::move(p));
        }
      } else {
        struct Candidate {
          std::size_t pos, token;
          double score;
          std::vector<double> p;
        };
        std::vector<Candidate> cands;
        SamplerConfig unit = cfg;
        unit.temperature = 1.0;
        const double noise = cfg.gumbel_temperature *
                             (1.0 - static_cast<double>(it) / static_cast<double>(cfg.iterations));
        for (std::size_t pos = 0; pos < t; ++pos) {
          if (!st.masked[pos]) continue;
          std::vector<double> p = distribution(logits.row(row0 + pos), cfg);
          const std::size_t token = draw(p, cfg, st.rng);
          // A greedy one-hot distribution says nothing about certainty, so
          // greedy decoding ranks by the untempered softmax instead.
          const std::vector<double> plain = cfg.temperature == 0 ? distribution(logits.row(row0 + pos), unit) : p;
          const double conf = cfg.confidence == Confidence::max_probability
                                  ? *std::max_element(plain.begin(), plain.end())
                                  : plain[token];
          double score = conf;
          if (noise > 0) score = std::log(conf) + noise * st.rng.gumbel();
          cands.push_back({pos, token, score, std::move(p)});
        }
        std::stable_sort(cands.begin(), cands.end(),
                         [](const Candidate& x, const Candidate& y) { return x.score > y.score; });
        for (std::size_t n = 0; n < counts[a]; ++n) {
          st.tokens[cands[n].pos] = cands[n].token;
          st.masked[cands[n].pos] = false;
          emit(cands[n].pos, cands[n].token, std::move(cands[n].p));
        }
      }
      st.remaining -= counts[a];
      row0 += t;
    }
  }
  for (const State& st : states) {
    if (st.remaining != 0) throw std::logic_error("generation ended with masked positions");
  }
}

}  // namespace

std::vector<TokenSequence> generate(transformer::Transformer& model, std::span<const GenerationRequest> requests,
                                    const SamplerConfig& config, Rng& rng, const DecodeObserver& observer) {
  config.validate();
  std::vector<State> states;
  states.reserve(requests.size());
  for (const auto& req : requests) states.push_back(make_state(req, model.config(), rng.fork()));
  for (std::size_t begin = 0; begin < states.size(); begin += config.batch) {
    const std::size_t n = std::min(config.batch, states.size() - begin);
    run_chunk(model, std::span<State>(states).subspan(begin, n), begin, config, observer);
  }
  std::vector<TokenSequence> out;
  out.reserve(states.size());
  for (auto& s : states) out.push_back(std::move(s.tokens));
  return out;
}

TokenSequence oaas_generate(transformer::Transformer& model, const std::vector<std::size_t>& prompt_words,
                            std::size_t length, std::size_t iterations, Rng& rng, const DecodeObserver& observer) {
  SamplerConfig cfg;
  cfg.method = Method::oaas;
  cfg.iterations = iterations;
  GenerationRequest req{prompt_words, length, {}, std::nullopt};
  return generate(model, std::span<const GenerationRequest>(&req, 1), cfg, rng, observer).front();
}

TokenSequence cbs_generate(transformer::Transformer& model, const std::vector<std::size_t>& prompt_words,
                           std::size_t length, std::size_t iterations, Rng& rng) {
  SamplerConfig cfg;
  cfg.method = Method::cbs;
  cfg.iterations = iterations;
  GenerationRequest req{prompt_words, length, {}, std::nullopt};
  return generate(model, std::span<const GenerationRequest>(&req, 1), cfg, rng).front();
}

EditMode parse_edit_mode(const std::string& name) {
  if (name == "inpaint") return EditMode::inpaint;
  if (name == "outpaint") return EditMode::outpaint;
  if (name == "prefix") return EditMode::prefix;
  if (name == "suffix") return EditMode::suffix;
  throw std::invalid_argument("unknown edit mode '" + name + "' (inpaint, outpaint, prefix, suffix)");
}

std::string to_string(EditMode mode) {
  switch (mode) {
    case EditMode::inpaint: return "inpaint";
    case EditMode::outpaint: return "outpaint";
    case EditMode::prefix: return "prefix";
    case EditMode::suffix: return "suffix";
  }
  return "?";
}

std::vector<std::size_t> known_positions(EditMode mode, std::size_t length) {
  const std::size_t quarter = length / 4;
  const std::size_t half = length / 2;
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p < length; ++p) {
    bool known = false;
    switch (mode) {
      case EditMode::inpaint: known = p < quarter || p >= length - quarter; break;
      case EditMode::outpaint: known = p >= quarter && p < length - quarter; break;
      case EditMode::prefix: known = p < half; break;
      case EditMode::suffix: known = p >= length - half; break;
    }
    if (known) out.push_back(p);
  }
  return out;
}

std::vector<TokenSequence> edit_generate(transformer::Transformer& model,
                                         std::span<const std::vector<std::size_t>> prompts,
                                         std::span<const TokenSequence> references, EditMode mode,
                                         const SamplerConfig& config, Rng& rng) {
  if (prompts.size() != references.size()) throw std::invalid_argument("edit: one prompt per reference required");
  std::vector<GenerationRequest> requests;
  requests.reserve(references.size());
  for (std::size_t i = 0; i < references.size(); ++i) {
    GenerationRequest req{prompts[i], references[i].size(), {}, std::nullopt};
    for (std::size_t p : known_positions(mode, references[i].size())) req.known.push_back({p, references[i][p]});
    requests.push_back(std::move(req));
  }
  return generate(model, requests, config, rng);
}

TokenSequence edit_generate(transformer::Transformer& model, const std::vector<std::size_t>& prompt_words,
                            const TokenSequence& reference, EditMode mode, const SamplerConfig& config, Rng& rng) {
  return edit_generate(model, std::span<const std::vector<std::size_t>>(&prompt_words, 1),
                       std::span<const TokenSequence>(&reference, 1), mode, config, rng)
      .front();
}

}  // namespace bad::sampling
