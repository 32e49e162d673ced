// Command-line front end: tokenizer and transformer training, generation,
// temporal editing, evaluation and the oracle selftest.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "bad/checkpoint.hpp"
#include "bad/config.hpp"
#include "bad/metrics.hpp"
#include "bad/oracles.hpp"
#include "bad/sampling.hpp"
#include "bad/sources.hpp"
#include "bad/tokenizer.hpp"
#include "bad/training.hpp"
#include "bad/transformer.hpp"

namespace fs = std::filesystem;
using namespace bad;

namespace {

struct Common {
  std::uint64_t seed = 0;
  std::string out = ".";
  std::string preset = "desk";
  std::string config_path;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
  cmd->add_option("--preset", c.preset, "Configuration preset")
      ->check(CLI::IsMember({"desk", "paper-scale"}))
      ->capture_default_str();
  cmd->add_option("--config", c.config_path, "Config file with section.key = value overrides");
}

Config load_config(const Common& c) {
  Config cfg = Config::preset(c.preset);
  if (!c.config_path.empty()) cfg.apply_file(c.config_path);
  return cfg;
}

fs::path out_dir(const Common& c) {
  fs::create_directories(c.out);
  return fs::path(c.out);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  return f;
}

double elapsed(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

struct LabeledTokens {
  std::vector<std::size_t> labels;
  std::vector<TokenSequence> tokens;
};

void write_tokens(const fs::path& path, const LabeledTokens& data) {
  auto f = open_out(path);
  const std::size_t t = data.tokens.empty() ? 0 : data.tokens.front().size();
  f << "sequence,label";
  for (std::size_t j = 0; j < t; ++j) f << ",t" << j;
  f << "\n";
  for (std::size_t i = 0; i < data.tokens.size(); ++i) {
    f << i << "," << data.labels[i];
    for (std::size_t v : data.tokens[i]) f << "," << v;
    f << "\n";
  }
}

LabeledTokens read_tokens(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read tokens file " + path);
  LabeledTokens out;
  std::string line;
  if (!std::getline(f, line) || line.rfind("sequence,label", 0) != 0) {
    throw std::runtime_error(path + ": expected a 'sequence,label,...' header");
  }
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::size_t> cells;
    while (std::getline(ss, cell, ',')) {
      try {
        cells.push_back(std::stoul(cell));
      } catch (const std::exception&) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad integer '" + cell + "'");
      }
    }
    if (cells.size() < 4) throw std::runtime_error(path + ":" + std::to_string(line_no) + ": too few columns");
    out.labels.push_back(cells[1]);
    out.tokens.emplace_back(cells.begin() + 2, cells.end());
  }
  return out;
}

void write_frames(const fs::path& path, tokenizer::VqVae& vq, const std::vector<TokenSequence>& tokens) {
  auto f = open_out(path);
  f << "sequence,frame";
  for (std::size_t d = 0; d < vq.config().features; ++d) f << ",f" << d;
  f << "\n";
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Tensor frames = vq.decode_tokens(tokens[i]);
    for (std::size_t r = 0; r < frames.rows(); ++r) {
      f << i << "," << r;
      for (std::size_t d = 0; d < frames.cols(); ++d) f << "," << fmt(frames(r, d));
      f << "\n";
    }
  }
}

sources::MarkovSource markov_source(const Config& cfg) { return sources::desk_markov_source(cfg.get_size("data.states")); }

std::vector<std::vector<std::size_t>> prompts_for(const sources::MarkovSource& src, const std::vector<std::size_t>& labels,
                                                  std::size_t word_vocabulary) {
  std::vector<std::vector<std::size_t>> out;
  out.reserve(labels.size());
  for (std::size_t l : labels) out.push_back(transformer::encode_prompt(src.conditions.at(l).prompt, word_vocabulary));
  return out;
}

int cmd_train_tokenizer(const Common& c) {
  const Config cfg = load_config(c);
  const auto vcfg = vq_config(cfg);
  const auto tcfg = tokenizer_train_config(cfg);
  const fs::path dir = out_dir(c);
  Rng rng(c.seed);
  const auto source = sources::desk_sine_source(vcfg.features, vcfg.frames);
  const auto data = sources::generate_sine_dataset(source, cfg.get_size("tokenizer.sequences"), rng);
  tokenizer::VqVae model(vcfg, rng);
  tokenizer::TokenizerTrainer trainer(model, tcfg);
  auto log = open_out(dir / "tokenizer_log.csv");
  log << "step,loss,reconstruction,commitment,codebook,live_codes,lr\n";
  const auto start = std::chrono::steady_clock::now();
  trainer.train(data, rng, [&](const tokenizer::TokenizerLogRow& r) {
    log << r.step << "," << fmt(r.loss) << "," << fmt(r.reconstruction) << "," << fmt(r.commitment) << ","
        << fmt(r.codebook_term) << "," << r.live_codes << "," << fmt(r.learning_rate) << "\n";
    std::cerr << "tokenizer step " << r.step << " loss " << fmt(r.loss) << " l1 " << fmt(r.reconstruction) << " ("
              << fmt(elapsed(start)) << " s)\n";
  });
  save_checkpoint((dir / "tokenizer.ckpt").string(), tokenizer_checkpoint(model, cfg));
  std::cerr << "wrote " << (dir / "tokenizer.ckpt").string() << "\n";
  return 0;
}

int cmd_train_transformer(const Common& c) {
  const Config cfg = load_config(c);
  const auto mcfg = model_config(cfg);
  const auto tcfg = train_config(cfg);
  const fs::path dir = out_dir(c);
  Rng rng(c.seed);
  const auto source = markov_source(cfg);
  const auto data = sources::generate_markov_dataset(source, cfg.get_size("data.sequences"), mcfg.max_length, rng);
  std::vector<training::TrainingExample> examples;
  examples.reserve(data.size());
  for (const auto& s : data) {
    examples.push_back({s.tokens, transformer::encode_prompt(source.conditions[s.label].prompt, mcfg.word_vocabulary)});
  }
  transformer::Transformer model(mcfg, rng);
  training::Trainer trainer(model, tcfg);
  auto log = open_out(dir / "train_log.csv");
  log << "step,loss,masked_accuracy,lr\n";
  const auto start = std::chrono::steady_clock::now();
  trainer.train(examples, rng, [&](const training::StepResult& r) {
    log << r.step << "," << fmt(r.loss) << "," << fmt(r.masked_accuracy) << "," << fmt(r.learning_rate) << "\n";
    std::cerr << "step " << r.step << " loss " << fmt(r.loss) << " masked_acc " << fmt(r.masked_accuracy) << " ("
              << fmt(elapsed(start)) << " s)\n";
  });
  save_checkpoint((dir / "transformer.ckpt").string(), transformer_checkpoint(model, cfg));
  std::cerr << "wrote " << (dir / "transformer.ckpt").string() << "\n";
  return 0;
}

struct GenerateOptions {
  std::string model;
  std::string tokenizer;
  std::size_t count = 0;  // per condition; 0 uses data.eval_per_condition
  std::string mode;
  std::string input;
};

int cmd_generate(const Common& c, const GenerateOptions& o) {
  Config cfg = load_config(c);
  auto model = load_transformer(load_checkpoint(o.model));
  const auto scfg = sampler_config(cfg);
  const fs::path dir = out_dir(c);
  const auto source = sources::desk_markov_source(model->config().vocabulary);
  const std::size_t per = o.count ? o.count : cfg.get_size("data.eval_per_condition");
  LabeledTokens out;
  for (std::size_t l = 0; l < source.conditions.size(); ++l) out.labels.insert(out.labels.end(), per, l);
  const auto prompts = prompts_for(source, out.labels, model->config().word_vocabulary);
  std::vector<sampling::GenerationRequest> requests;
  for (const auto& p : prompts) requests.push_back({p, model->config().max_length, {}, std::nullopt});
  Rng rng(c.seed);
  out.tokens = sampling::generate(*model, requests, scfg, rng);
  write_tokens(dir / "tokens.csv", out);
  if (!o.tokenizer.empty()) {
    auto vq = load_tokenizer(load_checkpoint(o.tokenizer));
    write_frames(dir / "frames.csv", *vq, out.tokens);
  }
  return 0;
}

int cmd_edit(const Common& c, const GenerateOptions& o) {
  Config cfg = load_config(c);
  auto model = load_transformer(load_checkpoint(o.model));
  const auto scfg = sampler_config(cfg);
  const auto mode = sampling::parse_edit_mode(o.mode);
  const fs::path dir = out_dir(c);
  const auto source = sources::desk_markov_source(model->config().vocabulary);
  Rng rng(c.seed);
  LabeledTokens refs;
  if (!o.input.empty()) {
    refs = read_tokens(o.input);
  } else {
    const std::size_t per = o.count ? o.count : cfg.get_size("data.eval_per_condition");
    for (std::size_t l = 0; l < source.conditions.size(); ++l) {
      for (std::size_t n = 0; n < per; ++n) {
        refs.labels.push_back(l);
        refs.tokens.push_back(sources::sample_markov(source, l, model->config().max_length, rng));
      }
    }
  }
  const auto prompts = prompts_for(source, refs.labels, model->config().word_vocabulary);
  LabeledTokens out{refs.labels, sampling::edit_generate(*model, prompts, refs.tokens, mode, scfg, rng)};
  write_tokens(dir / "reference.csv", refs);
  write_tokens(dir / "tokens.csv", out);
  if (!o.tokenizer.empty()) {
    auto vq = load_tokenizer(load_checkpoint(o.tokenizer));
    write_frames(dir / "frames.csv", *vq, out.tokens);
  }
  return 0;
}

struct EvalOptions {
  std::string tokens;
  std::string tokenizer;
  std::size_t first = 1;
};

int cmd_eval(const Common& c, const EvalOptions& o) {
  Config cfg = load_config(c);
  const fs::path dir = out_dir(c);
  auto f = open_out(dir / "metrics.csv");
  f << "label,metric,value\n";
  Rng rng(c.seed);
  if (!o.tokens.empty()) {
    const auto data = read_tokens(o.tokens);
    const auto source = markov_source(cfg);
    for (std::size_t l = 0; l < source.conditions.size(); ++l) {
      std::vector<TokenSequence> mine;
      for (std::size_t i = 0; i < data.tokens.size(); ++i) {
        if (data.labels[i] == l) mine.push_back(data.tokens[i]);
      }
      if (mine.empty()) continue;
      f << l << ",sequences," << mine.size() << "\n";
      f << l << ",bigram_kl," << fmt(sources::bigram_kl(mine, source, l, o.first)) << "\n";
      std::vector<TokenSequence> real_seqs;
      for (std::size_t i = 0; i < mine.size(); ++i) real_seqs.push_back(sources::sample_markov(source, l, mine[0].size(), rng));
      if (mine.size() > 2 * source.states) {
        f << l << ",frechet_distance,"
          << fmt(metrics::frechet_gaussian_distance(metrics::sequence_features(mine, source.states),
                                                     metrics::sequence_features(real_seqs, source.states)))
          << "\n";
      }
    }
  }
  if (!o.tokenizer.empty()) {
    auto vq = load_tokenizer(load_checkpoint(o.tokenizer));
    const auto sine = sources::desk_sine_source(vq->config().features, vq->config().frames);
    const auto held_out = sources::generate_sine_dataset(sine, 256, rng);
    f << "all,reconstruction_l1," << fmt(tokenizer::reconstruction_l1(*vq, held_out)) << "\n";
    f << "all,codebook_usage," << fmt(tokenizer::codebook_usage(*vq, held_out)) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Every step allocates and frees the same large activations; keeping them
  // on the heap avoids an mmap/munmap and page-fault round trip per tensor.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
  CLI::App app{"Bidirectional autoregressive diffusion toolkit"};
  app.require_subcommand(1);
  Common common;
  GenerateOptions gen;
  EvalOptions ev;

  auto* tt = app.add_subcommand("train-tokenizer", "Train the VQ-VAE on the sinusoid motion source");
  add_common(tt, common);
  auto* tr = app.add_subcommand("train-transformer", "Train the transformer on the Markov token source");
  add_common(tr, common);
  auto* ge = app.add_subcommand("generate", "Generate token sequences for every condition");
  add_common(ge, common);
  ge->add_option("--model", gen.model, "Transformer checkpoint")->required();
  ge->add_option("--tokenizer", gen.tokenizer, "Tokenizer checkpoint for decoded frames");
  ge->add_option("--count", gen.count, "Sequences per condition (default data.eval_per_condition)");
  auto* ed = app.add_subcommand("edit", "Temporal editing with known token spans");
  add_common(ed, common);
  ed->add_option("--model", gen.model, "Transformer checkpoint")->required();
  ed->add_option("--mode", gen.mode, "Editing mode")
      ->required()
      ->check(CLI::IsMember({"inpaint", "outpaint", "prefix", "suffix"}));
  ed->add_option("--tokenizer", gen.tokenizer, "Tokenizer checkpoint for decoded frames");
  ed->add_option("--count", gen.count, "Sequences per condition when sampling references");
  ed->add_option("--input", gen.input, "Reference tokens CSV (default: fresh source samples)");
  auto* va = app.add_subcommand("eval", "Write metrics for generated tokens and/or a tokenizer");
  add_common(va, common);
  va->add_option("--tokens", ev.tokens, "Tokens CSV to score against the Markov source");
  va->add_option("--tokenizer", ev.tokenizer, "Tokenizer checkpoint to score on held-out sine data");
  va->add_option("--first-position", ev.first, "First transition position scored by bigram KL")->capture_default_str();
  auto* st = app.add_subcommand("selftest", "Run the oracle suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*tt) return cmd_train_tokenizer(common);
    if (*tr) return cmd_train_transformer(common);
    if (*ge) return cmd_generate(common, gen);
    if (*ed) return cmd_edit(common, gen);
    if (*va) return cmd_eval(common, ev);
    if (*st) return oracles::run_selftest(std::cout) ? 0 : 1;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
