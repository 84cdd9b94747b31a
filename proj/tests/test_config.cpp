#include <doctest.h>

#include "gacr/error.hpp"
#include "gacr/run_config.hpp"
#include "support.hpp"

using namespace gacr;

TEST_CASE("run config parsing") {
  const auto c = parse_run_config(R"(
# comment
[paths]
train = corpus/train.jsonl   ; trailing comment
work_dir = out

[run]
seed = 99
jobs = 2

[encoder]
mask = C
model_dim = 32

[training]
mode = gacr_m
k = 4
snippet_cap = 32
loss = literal
fill_with_stub = false

[generation]
backend = remote
backoff_ms = 50

[retrieval]
variants = doc_only, gacr_s
pool_size = 10
)");
  CHECK(c.train_path == "corpus/train.jsonl");
  CHECK(c.checkpoint_file() == std::filesystem::path("out") / "checkpoint.gacr");
  CHECK(c.seed == 99);
  CHECK(c.encoder.mask_type == MaskType::kC);
  CHECK(c.encoder.model_dim == 32);
  CHECK(c.train.mode == QueryMode::kGacrM);
  CHECK(c.train.loss == LossForm::kLiteral);
  CHECK_FALSE(c.train.fill_with_stub);
  CHECK(c.generation.backend == Backend::kRemote);
  CHECK(c.generation.backoff_base_ms == 50);
  CHECK(c.variants == std::vector<Variant>{Variant::kDocOnly, Variant::kGacrS});
  CHECK(c.eval.pool_size == 10);

  // The shared seed, k, cap and job count reach every module.
  CHECK(c.encoder.seed == 99);
  CHECK(c.train.seed == 99);
  CHECK(c.generation.seed == 99);
  CHECK(c.generation.samples_per_prompt == 4);
  CHECK(c.eval.k == 4);
  CHECK(c.eval.cap == 32);
  CHECK(c.eval.jobs == 2);
  CHECK_FALSE(c.eval.fill_with_stub);
}

TEST_CASE("run config errors") {
  CHECK_THROWS_AS(parse_run_config("[nowhere]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[run]\ncolour = red\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[run]\nseed = -3\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[run]\nseed\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("seed = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[encoder]\nmask = Z\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[training]\nlearning_rate = fast\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[encoder]\nnum_heads = 5\n"), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/gacr.ini"), ConfigError);
}

TEST_CASE("synthetic corpus") {
  SynthOptions o;
  o.num_pairs = 50;
  o.num_test = 10;
  const auto a = make_synthetic_corpus(o);
  const auto b = make_synthetic_corpus(o);
  CHECK(a.train.pairs.size() == 40);
  CHECK(a.test.pairs.size() == 10);
  for (std::size_t i = 0; i < 40; ++i) {
    CHECK(a.train.pairs[i].doc_tokens == b.train.pairs[i].doc_tokens);
    CHECK(a.train.pairs[i].code_tokens == b.train.pairs[i].code_tokens);
    CHECK_FALSE(a.train.pairs[i].doc_tokens.empty());
  }
  o.seed = 18;
  CHECK(make_synthetic_corpus(o).train.pairs[0].code_tokens != a.train.pairs[0].code_tokens);

  // Every doc mention, stripped of quoting, is an identifier of the code.
  for (const auto& p : a.train.pairs) {
    std::size_t mentions = 0;
    for (const auto& t : p.doc_tokens) {
      const auto id = as_identifier(t);
      if (std::find(p.code_tokens.begin(), p.code_tokens.end(), id) != p.code_tokens.end()) ++mentions;
    }
    CHECK(mentions >= 1);
  }
}
