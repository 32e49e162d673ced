#pragma once

// Perturbation check: the logits of a query row must not move when every key
// that row is not allowed to attend to gets a different input embedding.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "bad/corruption.hpp"
#include "bad/transformer.hpp"
#include "test_util.hpp"

namespace bad::test {

struct LeakageReport {
  double max_change = 0;
  std::size_t queries = 0;
  std::size_t perturbed_keys = 0;
};

// With `control` set the allowed keys are perturbed instead, which must move the logits.
inline LeakageReport leakage_check(transformer::Transformer& model, std::size_t draws, Rng& rng,
                                   bool control = false) {
  const auto& cfg = model.config();
  const std::size_t slots = corruption::kConditionSlots;
  LeakageReport out;
  for (std::size_t d = 0; d < draws; ++d) {
    const std::size_t length = cfg.max_length;
    TokenSequence tokens(length);
    for (auto& t : tokens) t = rng.below(cfg.vocabulary);
    corruption::CorruptionConfig cc;
    cc.direction = cfg.direction;
    cc.maskbook_indexing = cfg.maskbook_indexing;
    const auto plan = corruption::corrupt(tokens, cfg.vocabulary, rng, cc);
    std::vector<transformer::ModelInput> batch = {
        transformer::make_input(plan, transformer::encode_prompt("a person walks forward", cfg.word_vocabulary))};

    Graph g(false);
    const Tensor embedded = model.embed_inputs(g, batch).value();
    const Tensor base = model.forward(g, g.constant(embedded), batch).value();
    for (std::size_t q = 0; q < length; ++q) {
      Tensor perturbed = embedded;
      std::size_t changed = 0;
      for (std::size_t k = 0; k < length + slots; ++k) {
        if (plan.attention(slots + q, k) != control) continue;
        for (auto& v : perturbed.row(k)) v += static_cast<real>(3.0 * rng.normal());
        ++changed;
      }
      if (changed == 0) continue;
      Graph h(false);
      const Tensor logits = model.forward(h, h.constant(perturbed), batch).value();
      for (std::size_t c = 0; c < logits.cols(); ++c) {
        out.max_change = std::max(out.max_change, std::abs(double(logits(q, c)) - double(base(q, c))));
      }
      ++out.queries;
      out.perturbed_keys += changed;
    }
  }
  return out;
}

}  // namespace bad::test
