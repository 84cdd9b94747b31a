#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "gacr/random.hpp"
#include "gacr/retrieval.hpp"

namespace gacr::testing {

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("gacr_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::size_t count_lines(const std::filesystem::path& path) {
  const auto text = read_text(path);
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

// Random vector whose entries are drawn from a small integer grid when
// `coarse` is set, so that exact score ties actually occur.
inline Vector random_vector(Rng& rng, std::size_t dim, bool coarse) {
  Vector v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i)
    v(i) = coarse ? static_cast<double>(rng.below(3)) - 1.0 : rng.uniform(-1.0, 1.0);
  return v;
}

inline CandidateIndex random_index(Rng& rng, std::size_t n, std::size_t dim, bool coarse) {
  CandidateIndex index;
  index.vectors = Matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < n; ++i) {
    index.ids.push_back("c" + std::to_string(i));
    index.languages.push_back("python");
    index.vectors.row(static_cast<Eigen::Index>(i)) = random_vector(rng, dim, coarse);
  }
  return index;
}

// Brute-force ranking: explicit double loop, selection by repeated scan.
inline std::vector<std::size_t> oracle_order(const DualQueryVector& q, const CandidateIndex& index) {
  const std::size_t n = index.size();
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (Eigen::Index j = 0; j < q.v_doc.size(); ++j) {
      const double z = index.vectors(static_cast<Eigen::Index>(i), j);
      s += q.v_doc(j) * z + q.v_gen(j) * z;
    }
    scores[i] = s;
  }
  std::vector<bool> taken(n, false);
  std::vector<std::size_t> order;
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      // Scores computed by different summation orders may differ in the last
      // bit; treat near-equal as tied and fall back to pool order.
      if (best == n || scores[i] > scores[best] + 1e-12) best = i;
    }
    taken[best] = true;
    order.push_back(best);
  }
  return order;
}

// Reciprocal-rank average computed from raw score rows: rank = 1 + number of
// candidates strictly better, plus earlier-index ties.
inline double oracle_mrr(const std::vector<std::vector<double>>& score_rows, const std::vector<std::size_t>& truth) {
  double total = 0;
  for (std::size_t q = 0; q < score_rows.size(); ++q) {
    const auto& row = score_rows[q];
    std::size_t rank = 1;
    for (std::size_t i = 0; i < row.size(); ++i)
      if (row[i] > row[truth[q]] || (row[i] == row[truth[q]] && i < truth[q])) ++rank;
    total += 1.0 / static_cast<double>(rank);
  }
  return total / static_cast<double>(score_rows.size());
}

}  // namespace gacr::testing

namespace gacr::testing {

// Ids drawn from the non-special range [4, vocab).
inline IdList random_ids(Rng& rng, std::size_t n, std::size_t vocab) {
  IdList ids(n);
  for (auto& id : ids) id = static_cast<TokenId>(4 + rng.below(vocab - 4));
  return ids;
}

inline EncoderConfig tiny_encoder(std::size_t vocab = 40, MaskType mask = MaskType::kA) {
  EncoderConfig c;
  c.num_layers = 2;
  c.num_heads = 2;
  c.model_dim = 16;
  c.ffn_dim = 32;
  c.max_seq_len = 24;
  c.vocab_size = vocab;
  c.mask_type = mask;
  return c;
}

}  // namespace gacr::testing

#include "gacr/synth.hpp"

namespace gacr::testing {

// Small synthetic corpus with its stub snippets, vocabulary and a tiny encoder.
struct MiniWorld {
  SynthCorpus corpus;
  SnippetCache cache;
  Vocabulary vocab;
  EncoderConfig encoder;
  TrainConfig train;
};

inline MiniWorld make_mini_world(std::size_t pairs = 48, std::size_t test = 16, std::uint64_t seed = 17) {
  MiniWorld w;
  SynthOptions o;
  o.num_pairs = pairs;
  o.num_test = test;
  o.lexicon_size = 60;
  o.seed = seed;
  w.corpus = make_synthetic_corpus(o);
  GenerationConfig g;
  g.samples_per_prompt = 2;
  g.seed = seed;
  generate_all(w.corpus.train.pairs, g, w.cache);
  generate_all(w.corpus.test.pairs, g, w.cache);
  std::vector<TokenList> extra;
  for (const auto& s : w.cache.entries()) extra.push_back(s.tokens);
  w.vocab = build_vocab({&w.corpus.train, &w.corpus.test}, extra, 5000, 1);
  w.encoder = tiny_encoder(w.vocab.size());
  w.encoder.max_seq_len = 48;
  w.train.batch_size = 8;
  w.train.epochs = 2;
  w.train.snippet_cap = 16;
  w.train.k = 2;
  w.train.seed = seed;
  return w;
}

}  // namespace gacr::testing
