#include "bad/oracles.hpp"

#include <cmath>
#include <filesystem>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include "bad/checkpoint.hpp"
#include "bad/grad_check.hpp"
#include "bad/ops.hpp"
#include "bad/tokenizer.hpp"
#include "bad/training.hpp"

namespace bad::oracles {

namespace {
constexpr std::size_t kSlots = corruption::kConditionSlots;
}

bool rule_allows(std::size_t query, std::size_t key, const std::vector<bool>& masked,
                 const std::vector<std::size_t>& order, corruption::Direction direction) {
  const bool query_is_condition = query < kSlots;
  const bool key_is_condition = key < kSlots;
  if (key_is_condition) return true;
  if (query_is_condition) return false;
  const std::size_t qi = query - kSlots;
  const std::size_t kj = key - kSlots;
  if (!masked[kj]) return true;
  if (!masked[qi]) return false;
  // Walk the ordering: which of the two appears first?
  std::size_t seen_query = order.size(), seen_key = order.size();
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (order[r] == qi) seen_query = r;
    if (order[r] == kj) seen_key = r;
  }
  if (direction == corruption::Direction::suffix) return seen_key >= seen_query;
  return seen_key <= seen_query;
}

AttentionMask rule_mask(const std::vector<bool>& masked, const std::vector<std::size_t>& order,
                        corruption::Direction direction) {
  const std::size_t n = masked.size() + kSlots;
  AttentionMask m(n, n);
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t k = 0; k < n; ++k) m.set(q, k, rule_allows(q, k, masked, order, direction));
  }
  return m;
}

AttentionMask causal_mask(std::size_t length, corruption::Direction direction) {
  const std::size_t n = length + kSlots;
  AttentionMask m(n, n);
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t k = 0; k < kSlots; ++k) m.set(q, k, true);
  }
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t j = 0; j < length; ++j) {
      const bool allowed = direction == corruption::Direction::prefix ? j <= i : j >= i;
      m.set(kSlots + i, kSlots + j, allowed);
    }
  }
  return m;
}

std::size_t nearest_code(std::span<const real> latent, const Tensor& codes) {
  std::size_t best = 0;
  long double best_d = INFINITY;
  for (std::size_t k = 0; k < codes.rows(); ++k) {
    long double d = 0;
    for (std::size_t c = 0; c < codes.cols(); ++c) {
      const long double diff = static_cast<long double>(latent[c]) - static_cast<long double>(codes(k, c));
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

std::size_t schedule(std::size_t i, std::size_t iterations, std::size_t length) {
  if (i == iterations) return 0;
  const long double pi = std::numbers::pi_v<long double>;
  const long double v = static_cast<long double>(length) * std::cos(pi * i / (2.0L * iterations));
  // Exact-integer products (cos(pi/3) = 1/2 and the like) must not floor one below.
  const long double nearest = std::round(v);
  return static_cast<std::size_t>(std::abs(v - nearest) < 1e-12L * (1 + v) ? nearest : std::floor(v));
}

double causal_lm_loss(transformer::Transformer& model, std::span<const TokenSequence> targets,
                      std::span<const std::vector<std::size_t>> prompts) {
  std::vector<transformer::ModelInput> inputs;
  std::vector<std::size_t> flat;
  for (std::size_t b = 0; b < targets.size(); ++b) {
    const std::size_t t = targets[b].size();
    transformer::ModelInput in;
    in.tokens.assign(t, 0);
    in.masked.assign(t, true);
    for (std::size_t j = 0; j < t; ++j) in.maskbook_rows.push_back(j);
    in.attention = causal_mask(t, model.config().direction);
    in.prompt_words = prompts[b];
    inputs.push_back(std::move(in));
    flat.insert(flat.end(), targets[b].begin(), targets[b].end());
  }
  Graph g(false);
  Var ce = ops::cross_entropy(model.logits(g, inputs), flat);
  return static_cast<double>(ce.value().item()) / static_cast<double>(flat.size());
}

TokenSequence autoregressive_sample(transformer::Transformer& model, const std::vector<std::size_t>& prompt,
                                    std::size_t length, Rng& rng, const sampling::DecodeObserver& observer) {
  if (model.config().direction != corruption::Direction::prefix) {
    throw std::invalid_argument("autoregressive reference needs a prefix-direction model");
  }
  Rng r = rng.fork();
  std::vector<std::size_t> order(length);
  for (std::size_t j = 0; j < length; ++j) order[j] = j;
  TokenSequence tokens(length, 0);
  std::vector<bool> masked(length, true);
  for (std::size_t step = 0; step < length; ++step) {
    const std::size_t pos = length - 1 - step;
    transformer::ModelInput in;
    in.tokens = tokens;
    in.masked = masked;
    in.maskbook_rows = order;
    in.attention = rule_mask(masked, order, corruption::Direction::prefix);
    in.prompt_words = prompt;
    Graph g(false);
    const Tensor logits = model.logits(g, std::span<const transformer::ModelInput>(&in, 1)).value();
    const auto row = logits.row(pos);
    double top = -INFINITY;
    for (real v : row) top = std::max(top, static_cast<double>(v));
    std::vector<double> p(row.size());
    double total = 0;
    for (std::size_t k = 0; k < row.size(); ++k) total += p[k] = std::exp(static_cast<double>(row[k]) - top);
    for (double& v : p) v /= total;
    const std::size_t token = r.categorical(p);
    tokens[pos] = token;
    masked[pos] = false;
    if (observer) observer({0, step + 1, pos, token, p});
  }
  return tokens;
}

namespace {

bool report(std::ostream& out, const std::string& name, bool ok, const std::string& detail = {}) {
  out << (ok ? "PASS " : "FAIL ") << name;
  if (!detail.empty()) out << ": " << detail;
  out << "\n";
  return ok;
}

bool check_masks(Rng& rng) {
  for (std::size_t t = 1; t <= 5; ++t) {
    for (std::size_t bits = 0; bits < (std::size_t{1} << t); ++bits) {
      std::vector<bool> masked(t);
      for (std::size_t j = 0; j < t; ++j) masked[j] = ((bits >> j) & 1u) != 0;
      for (int trial = 0; trial < 5; ++trial) {
        const auto perm = corruption::sample_permutation(t, rng);
        for (auto dir : {corruption::Direction::suffix, corruption::Direction::prefix}) {
          if (!(corruption::build_hybrid_mask(masked, perm, dir) == rule_mask(masked, perm.order, dir))) return false;
        }
      }
    }
  }
  return true;
}

bool check_quantizer(Rng& rng) {
  for (int c = 0; c < 200; ++c) {
    const std::size_t k = 2 + rng.below(15), d = 1 + rng.below(6);
    Tensor codes = Tensor::matrix(k, d);
    for (auto& v : codes.values()) v = static_cast<real>(rng.below(3));  // small grid forces ties
    tokenizer::Codebook book(codes);
    std::vector<real> x(d);
    for (auto& v : x) v = static_cast<real>(rng.below(3));
    if (tokenizer::quantize(x, book) != nearest_code(x, codes)) return false;
  }
  return true;
}

bool check_schedule(Rng& rng) {
  for (int c = 0; c < 1000; ++c) {
    const std::size_t iters = 1 + rng.below(32), t = rng.below(128), i = 1 + rng.below(iters);
    if (sampling::cosine_schedule(i, iters, t) != schedule(i, iters, t)) return false;
  }
  return sampling::cosine_schedule(5, 10, 64) == 45;
}

bool check_gradients(std::string& detail) {
  if (sizeof(real) < sizeof(double)) {
    detail = "skipped in a 32-bit build";
    return true;
  }
  Rng rng(3);
  auto random = [&](std::size_t r, std::size_t c) {
    Tensor t = Tensor::matrix(r, c);
    for (auto& v : t.values()) v = static_cast<real>(rng.normal());
    return t;
  };
  const std::vector<std::size_t> targets = {1, 0, 3};
  const auto report_ = gradient_check(
      [&](Graph&, std::span<const Var> in) {
        Var h = ops::gelu(ops::layer_norm(ops::matmul(in[0], in[1]), in[2], in[3]));
        return ops::cross_entropy(h, targets);
      },
      {random(3, 5), random(5, 4), random(1, 4), random(1, 4)});
  detail = report_.summary();
  return report_.passed(1e-4);
}

bool check_checkpoint(std::string& detail) {
  Rng rng(5);
  transformer::ModelConfig mc = transformer::ModelConfig::desk();
  mc.layers = 2;
  mc.d_model = 16;
  mc.heads = 2;
  mc.cross_layers = 1;
  transformer::Transformer model(mc, rng);
  for (Parameter* p : model.parameters()) {
    for (auto& v : p->value.values()) v = static_cast<real>(static_cast<float>(v));
  }
  Config cfg = Config::preset("desk");
  cfg.set("transformer.layers", "2");
  cfg.set("transformer.d_model", "16");
  cfg.set("transformer.heads", "2");
  cfg.set("transformer.cross_layers", "1");
  const auto path = std::filesystem::temp_directory_path() / "bad_selftest.ckpt";
  save_checkpoint(path.string(), transformer_checkpoint(model, cfg));
  auto loaded = load_transformer(load_checkpoint(path.string()));
  std::filesystem::remove(path);
  const auto a = model.parameters();
  const auto b = loaded->parameters();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a[i]->value == b[i]->value)) {
      detail = "parameter " + a[i]->name + " differs";
      return false;
    }
  }
  return true;
}

bool check_reduction(std::string& detail) {
  Rng rng(11);
  transformer::ModelConfig mc = transformer::ModelConfig::desk();
  mc.layers = 2;
  mc.d_model = 16;
  mc.heads = 2;
  mc.cross_layers = 1;
  mc.direction = corruption::Direction::prefix;
  transformer::Transformer model(mc, rng);
  std::vector<TokenSequence> seqs;
  std::vector<std::vector<std::size_t>> prompts;
  std::vector<corruption::CorruptionPlan> plans;
  corruption::CorruptionConfig cc;
  cc.direction = corruption::Direction::prefix;
  cc.forced_mask_ratio = 1.0;
  cc.forced_replace_ratio = 0.0;
  cc.forced_permutation = corruption::Permutation::identity(mc.max_length);
  for (int b = 0; b < 4; ++b) {
    TokenSequence s(mc.max_length);
    for (auto& v : s) v = rng.below(mc.vocabulary);
    plans.push_back(corruption::corrupt(s, mc.vocabulary, rng, cc));
    seqs.push_back(s);
    prompts.push_back(transformer::encode_prompt(b % 2 ? "a person walks" : "a person jumps", mc.word_vocabulary));
  }
  const double bad = training::evaluate_objective(model, plans, prompts, 0.1);
  const double lm = causal_lm_loss(model, seqs, prompts);
  const double rel = std::abs(bad - lm) / std::abs(lm);
  detail = "relative difference " + std::to_string(rel);
  return rel <= 1e-10 && plans[0].attention == causal_mask(mc.max_length, corruption::Direction::prefix);
}

}  // namespace

bool run_selftest(std::ostream& out) {
  Rng rng(2024);
  bool ok = true;
  std::string detail;
  ok &= report(out, "hybrid mask matches rule checker (T <= 5)", check_masks(rng));
  ok &= report(out, "quantizer matches exhaustive search", check_quantizer(rng));
  ok &= report(out, "cosine schedule matches closed form", check_schedule(rng));
  ok &= report(out, "finite-difference gradients", check_gradients(detail), detail);
  detail.clear();
  ok &= report(out, "checkpoint round trip", check_checkpoint(detail), detail);
  detail.clear();
  ok &= report(out, "full-mask prefix objective equals causal LM", check_reduction(detail), detail);
  return ok;
}

}  // namespace bad::oracles
