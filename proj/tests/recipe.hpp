// Fixture training recipe shared by the trained-model tests and the acceptance runner.
#pragma once

#include <vector>

#include "sketch/trainer.hpp"

namespace sketch::test {

struct FixtureRun {
  std::vector<SketchPair> train;
  std::vector<SketchPair> validation;
  Tokenizer tokenizer;
  EncoderModel base;
  TrainConfig config;
};

inline FixtureRun fixture_run(std::uint64_t seed = 7, std::size_t epochs = 30) {
  FixtureRun r;
  r.train = synth_fixture(4, 8, seed);
  r.validation = synth_fixture_sized(4, 59, seed + 1000);
  std::vector<std::string> corpus;
  for (const auto* part : {&r.train, &r.validation})
    for (const auto& p : *part) corpus.push_back(p.description);
  r.tokenizer = Tokenizer::build(corpus);
  EncoderConfig ec;
  ec.vocab_size = r.tokenizer.size();
  ec.seed = seed;
  r.base = EncoderModel(ec);
  r.config.epochs = epochs;
  r.config.batch_size = 32;
  r.config.adam.learning_rate = 1.5e-2f;
  r.config.seed = seed;
  r.config.lora.targets = LoraTargets::both;
  r.config.lora.rank = 4;
  r.config.lora.alpha = 8.0f;
  return r;
}

inline std::size_t decreasing_steps(const TrainLog& log) {
  std::size_t n = 0;
  for (std::size_t i = 1; i < log.epochs.size(); ++i) n += log.epochs[i].loss < log.epochs[i - 1].loss;
  return n;
}

}  // namespace sketch::test
