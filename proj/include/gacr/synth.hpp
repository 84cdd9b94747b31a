#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "gacr/corpus.hpp"

namespace gacr {

/// Synthetic documentation/code world.
///
/// Every function draws `keywords_per_function` identifiers from a seeded
/// lexicon; the code names the function after the first one and references
/// the rest through one of the stub's body templates. The documentation keeps
/// each identifier with probability `keep_fraction`, sometimes written the way
/// docstrings quote code (`name`, 'name', name()), interleaved with filler
/// words. The stub generator turns those mentions back into bare identifiers.
struct SynthOptions {
  std::size_t num_pairs = 600;
  std::size_t num_test = 100;
  std::size_t lexicon_size = 300;
  std::size_t keywords_per_function = 6;
  double keep_fraction = 0.3;
  double quoted_fraction = 0.75;
  double filler_fraction = 0.5;
  std::uint64_t seed = 17;
  std::string language = "python";
};

struct SynthCorpus {
  CorpusSplit train;
  CorpusSplit test;
};

SynthCorpus make_synthetic_corpus(const SynthOptions& options);

}  // namespace gacr
