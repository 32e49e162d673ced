#include "bad/sources.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace bad::sources {

namespace {

void check_distribution(std::span<const double> p, const std::string& what) {
  double total = 0;
  for (double v : p) {
    if (!(v >= 0)) throw std::invalid_argument(what + " has a negative or non-finite entry");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument(what + " does not sum to 1");
}

// Circulant chain: moves[i] = (offset, probability); leftover mass spread over the other states.
std::vector<double> circulant(std::size_t k, const std::vector<std::pair<long, double>>& moves) {
  std::vector<double> t(k * k, 0.0);
  for (std::size_t s = 0; s < k; ++s) {
    double used = 0;
    std::vector<bool> hit(k, false);
    for (const auto& [offset, prob] : moves) {
      const auto to = static_cast<std::size_t>(((static_cast<long>(s) + offset) % static_cast<long>(k) +
                                                static_cast<long>(k)) % static_cast<long>(k));
      t[s * k + to] += prob;
      hit[to] = true;
      used += prob;
    }
    const auto others = static_cast<double>(std::count(hit.begin(), hit.end(), false));
    for (std::size_t to = 0; to < k; ++to) {
      if (!hit[to]) t[s * k + to] = (1.0 - used) / others;
    }
  }
  return t;
}

}  // namespace

void MarkovSource::validate() const {
  if (states < 2) throw std::invalid_argument("markov source needs at least two states");
  if (conditions.empty()) throw std::invalid_argument("markov source needs at least one condition");
  for (std::size_t c = 0; c < conditions.size(); ++c) {
    const auto& cond = conditions[c];
    const std::string tag = "condition " + std::to_string(c);
    if (cond.initial.size() != states || cond.transition.size() != states * states) {
      throw std::invalid_argument(tag + " has wrongly sized distributions");
    }
    check_distribution(cond.initial, tag + " initial distribution");
    for (std::size_t s = 0; s < states; ++s) {
      check_distribution(std::span<const double>(cond.transition).subspan(s * states, states),
                         tag + " transition row " + std::to_string(s));
    }
  }
}

MarkovSource desk_markov_source(std::size_t states) {
  if (states < 5) throw std::invalid_argument("desk markov source needs at least five states");
  MarkovSource src;
  src.states = states;
  MarkovCondition walk;
  walk.prompt = "a person walks forward";
  walk.transition = circulant(states, {{1, 0.6}, {0, 0.25}, {2, 0.1}});
  walk.initial.assign(states, 0.5 / static_cast<double>(states - 1));
  walk.initial[0] = 0.5;
  MarkovCondition jump;
  jump.prompt = "a person jumps back and forth";
  jump.transition = circulant(states, {{3, 0.55}, {-1, 0.3}, {0, 0.1}});
  jump.initial.assign(states, 1.0 / static_cast<double>(states));
  src.conditions = {walk, jump};
  src.validate();
  return src;
}

TokenSequence sample_markov(const MarkovSource& source, std::size_t label, std::size_t length, Rng& rng) {
  if (length < 2) throw std::invalid_argument("markov sequences need length >= 2");
  if (label >= source.conditions.size()) throw std::out_of_range("markov label out of range");
  const auto& cond = source.conditions[label];
  const std::size_t k = source.states;
  TokenSequence seq(length);
  seq[0] = rng.categorical(cond.initial);
  for (std::size_t t = 1; t < length; ++t) {
    seq[t] = rng.categorical(std::span<const double>(cond.transition).subspan(seq[t - 1] * k, k));
  }
  return seq;
}

std::vector<LabeledSequence> generate_markov_dataset(const MarkovSource& source, std::size_t count,
                                                     std::size_t length, Rng& rng) {
  source.validate();
  std::vector<LabeledSequence> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t label = i % source.conditions.size();
    out.push_back({label, sample_markov(source, label, length, rng)});
  }
  return out;
}

std::vector<double> analytic_bigram(const MarkovSource& source, std::size_t label, std::size_t length,
                                    std::size_t first) {
  if (first < 1 || first >= length) throw std::invalid_argument("analytic_bigram: need 1 <= first < length");
  const std::size_t k = source.states;
  const auto& cond = source.conditions.at(label);
  std::vector<double> marginal = cond.initial;
  std::vector<double> joint(k * k, 0.0);
  for (std::size_t t = 1; t < length; ++t) {
    std::vector<double> next(k, 0.0);
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < k; ++b) {
        const double pab = marginal[a] * source.p(label, a, b);
        next[b] += pab;
        if (t >= first) joint[a * k + b] += pab;
      }
    }
    marginal = std::move(next);
  }
  const double transitions = static_cast<double>(length - first);
  for (double& v : joint) v /= transitions;
  return joint;
}

double bigram_kl(std::span<const TokenSequence> sequences, const MarkovSource& source, std::size_t label,
                 std::size_t first, double smoothing) {
  if (sequences.empty()) throw std::invalid_argument("bigram_kl: no sequences");
  const std::size_t length = sequences.front().size();
  const std::size_t k = source.states;
  std::vector<double> counts(k * k, 0.0);
  double total = 0;
  for (const auto& seq : sequences) {
    if (seq.size() != length) throw std::invalid_argument("bigram_kl: sequences differ in length");
    for (std::size_t t = first; t < length; ++t) {
      if (seq[t - 1] >= k || seq[t] >= k) throw std::out_of_range("bigram_kl: token outside the source states");
      counts[seq[t - 1] * k + seq[t]] += 1.0;
      total += 1.0;
    }
  }
  const std::vector<double> q = analytic_bigram(source, label, length, first);
  const double cells = static_cast<double>(k * k);
  double kl = 0;
  for (std::size_t i = 0; i < k * k; ++i) {
    const double pe = (counts[i] / total + smoothing) / (1.0 + smoothing * cells);
    const double qa = (q[i] + smoothing) / (1.0 + smoothing * cells);
    kl += pe * std::log(pe / qa);
  }
  return kl;
}

Tensor SineMotionSource::render(std::size_t prompt, std::size_t shift) const {
  const auto& p = prompts.at(prompt);
  Tensor out = Tensor::matrix(frames, features);
  for (std::size_t f = 0; f < frames; ++f) {
    const double t = static_cast<double>(f + shift) / static_cast<double>(frames);
    for (std::size_t d = 0; d < features; ++d) {
      out(f, d) = static_cast<real>(p.amplitude[d] * std::sin(2 * std::numbers::pi * p.cycles[d] * t + p.phase[d]));
    }
  }
  return out;
}

Tensor SineMotionSource::sample(std::size_t prompt, Rng& rng) const {
  const std::size_t shifts = frames / shift_step;
  return render(prompt, shift_step * static_cast<std::size_t>(rng.below(shifts)));
}

SineMotionSource desk_sine_source(std::size_t features, std::size_t frames) {
  SineMotionSource src;
  src.features = features;
  src.frames = frames;
  const double cycle_sets[4][3] = {{1, 2, 1}, {2, 1, 4}, {1, 4, 2}, {4, 2, 1}};
  const char* names[4] = {"a person walks slowly", "a person runs", "a person waves both arms", "a person dances"};
  for (std::size_t p = 0; p < 4; ++p) {
    SinePrompt sp;
    sp.prompt = names[p];
    for (std::size_t d = 0; d < features; ++d) {
      sp.cycles.push_back(cycle_sets[p][d % 3]);
      sp.amplitude.push_back(0.5 + 0.4 * static_cast<double>((d + p) % 3) / 2.0);
      sp.phase.push_back(std::numbers::pi * static_cast<double>((d * 3 + p) % 8) / 4.0);
    }
    src.prompts.push_back(std::move(sp));
  }
  return src;
}

std::vector<Tensor> generate_sine_dataset(const SineMotionSource& source, std::size_t count, Rng& rng) {
  std::vector<Tensor> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(source.sample(i % source.prompts.size(), rng));
  return out;
}

}  // namespace bad::sources
