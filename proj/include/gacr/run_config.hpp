#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gacr/encoder.hpp"
#include "gacr/generation.hpp"
#include "gacr/retrieval.hpp"
#include "gacr/training.hpp"

namespace gacr {

/// Merged configuration for one pipeline run. Loaded from a sectioned
/// key = value file, e.g.
///
///   [run]
///   seed = 17
///   [encoder]
///   model_dim = 64
///
/// Unknown sections or keys are rejected.
struct RunConfig {
  std::filesystem::path train_path = "data/train.jsonl";
  std::filesystem::path test_path = "data/test.jsonl";
  std::filesystem::path cache_path = "work/snippets.jsonl";
  std::filesystem::path work_dir = "work";

  std::uint64_t seed = 17;
  std::size_t jobs = 1;

  std::size_t vocab_max_size = 50000;
  std::size_t vocab_min_freq = 2;

  EncoderConfig encoder;
  TrainConfig train;
  GenerationConfig generation;
  EvalOptions eval;
  std::size_t top_k = 10;
  std::vector<Variant> variants = {Variant::kDocOnly, Variant::kGenFull, Variant::kGenName,
                                   Variant::kGenBody, Variant::kGacrS,   Variant::kGacrM};

  std::filesystem::path vocab_file() const { return work_dir / "vocab.txt"; }
  std::filesystem::path checkpoint_file() const { return work_dir / "checkpoint.gacr"; }
  std::filesystem::path loss_log_file() const { return work_dir / "loss.log"; }
  std::filesystem::path index_file() const { return work_dir / "index.gacr"; }

  /// Pushes the shared seed, jobs and k into every module config.
  void propagate();
  void validate() const;
};

/// Parses configuration text on top of `base`, then propagates and validates.
RunConfig parse_run_config(const std::string& text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Applies one "section.key" = value assignment; throws ConfigError on unknown keys.
void set_config_value(RunConfig& config, const std::string& section, const std::string& key, const std::string& value);

}  // namespace gacr
