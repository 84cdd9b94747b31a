#include "gacr/synth.hpp"

#include <algorithm>
#include <iterator>
#include <set>
#include <string_view>

#include "gacr/error.hpp"
#include "gacr/generation.hpp"
#include "gacr/random.hpp"

namespace gacr {

namespace {

std::vector<std::string> make_lexicon(std::size_t n, Rng& rng) {
  static constexpr std::string_view kOnsets[] = {"b", "c", "d", "f", "g", "h", "k", "l", "m", "n",
                                                 "p", "r", "s", "t", "v", "w", "z", "ch", "st", "tr"};
  static constexpr std::string_view kVowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
  std::set<std::string> seen;
  std::vector<std::string> words;
  while (words.size() < n) {
    std::string w;
    const std::size_t syllables = 2 + rng.below(2);
    for (std::size_t s = 0; s < syllables; ++s) {
      w += kOnsets[rng.below(std::size(kOnsets))];
      w += kVowels[rng.below(std::size(kVowels))];
    }
    if (seen.insert(w).second) words.push_back(w);
  }
  return words;
}

}  // namespace

SynthCorpus make_synthetic_corpus(const SynthOptions& o) {
  if (o.num_test == 0 || o.num_test >= o.num_pairs) throw ConfigError("synth: need 0 < num_test < num_pairs");
  if (o.keywords_per_function < 2 || o.keywords_per_function > o.lexicon_size)
    throw ConfigError("synth: keywords_per_function must be in [2, lexicon_size]");

  static constexpr std::string_view kFiller[] = {"returns", "the", "given", "of", "a", "from", "and", "into"};
  Rng rng(derive_seed(o.seed, "synth"));
  const auto lexicon = make_lexicon(o.lexicon_size, rng);

  SynthCorpus out;
  out.train.name = "train";
  out.test.name = "test";
  for (std::size_t i = 0; i < o.num_pairs; ++i) {
    std::vector<std::string> kw;
    while (kw.size() < o.keywords_per_function) {
      const auto& w = lexicon[rng.below(lexicon.size())];
      if (std::find(kw.begin(), kw.end(), w) == kw.end()) kw.push_back(w);
    }
    DocCodePair p;
    p.id = "synth/" + std::to_string(i);
    p.language = o.language;
    const std::vector<std::string> body_idents(kw.begin() + 1, kw.end());
    p.code_tokens = tokenize_raw(render_function(kw.front(), body_idents, rng.below(4)));

    std::vector<std::string> kept;
    for (const auto& w : kw)
      if (rng.uniform() < o.keep_fraction) kept.push_back(w);
    if (kept.empty()) kept.push_back(kw[rng.below(kw.size())]);
    for (const auto& w : kept) {
      if (rng.uniform() < o.filler_fraction) p.doc_tokens.emplace_back(kFiller[rng.below(std::size(kFiller))]);
      std::string mention = w;
      if (rng.uniform() < o.quoted_fraction) {
        switch (rng.below(3)) {
          case 0: mention = "`" + w + "`"; break;
          case 1: mention = "'" + w + "'"; break;
          default: mention = w + "()"; break;
        }
      }
      p.doc_tokens.push_back(std::move(mention));
    }

    auto& dst = i < o.num_pairs - o.num_test ? out.train : out.test;
    dst.pairs.push_back(std::move(p));
  }
  out.train.candidate_pool_size = out.train.pairs.size();
  out.test.candidate_pool_size = out.test.pairs.size();
  return out;
}

}  // namespace gacr
