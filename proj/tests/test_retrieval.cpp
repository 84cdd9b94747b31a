#include <doctest.h>

#include <sstream>

#include <json.hpp>

#include "gacr/checkpoint.hpp"
#include "gacr/error.hpp"
#include "gacr/retrieval.hpp"
#include "support.hpp"

using namespace gacr;
using gacr::testing::make_mini_world;
using gacr::testing::oracle_mrr;
using gacr::testing::oracle_order;
using gacr::testing::random_index;
using gacr::testing::random_vector;
using gacr::testing::TempDir;

namespace {

std::vector<std::size_t> order_of(const RankedList& r) {
  std::vector<std::size_t> out;
  for (const auto& e : r.entries) out.push_back(e.pool_index);
  return out;
}

Checkpoint trained(const gacr::testing::MiniWorld& w) {
  auto result = train(w.corpus.train, w.cache, w.vocab, w.train, w.encoder);
  return {w.encoder, w.train, std::move(result.params), std::move(result.optimizer)};
}

}  // namespace

TEST_CASE("search on a hand example") {
  CandidateIndex index;
  index.ids = {"c1", "c2"};
  index.languages = {"python", "python"};
  index.vectors = Matrix(2, 2);
  index.vectors << 1, 0, 0, 1;
  Vector doc(2), gen(2);
  doc << 1, 0;
  gen << 0, 0;
  const auto r = search({doc, gen}, index, 2, "q");
  REQUIRE(r.entries.size() == 2);
  CHECK(r.entries[0].id == "c1");
  CHECK(r.entries[0].score == 1);
  CHECK(r.entries[1].id == "c2");
  CHECK(r.entries[1].score == 0);
  CHECK(search({doc, gen}, index, 0).entries.empty());
  CHECK(search({doc, gen}, index, 1).entries.size() == 1);
  CHECK(search({doc, gen}, index, 10).entries.size() == 2);
}

TEST_CASE("identical candidates rank by pool index") {
  CandidateIndex index;
  index.vectors = Matrix::Constant(5, 3, 0.5);
  for (int i = 0; i < 5; ++i) {
    index.ids.push_back("c" + std::to_string(i));
    index.languages.push_back("go");
  }
  const auto r = search({Vector::Ones(3), Vector::Ones(3)}, index, 5);
  CHECK(order_of(r) == std::vector<std::size_t>{0, 1, 2, 3, 4});
}

TEST_CASE("search agrees with brute force, with and without ties") {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const bool coarse = trial % 2 == 0;
    const std::size_t n = 1 + rng.below(100);
    const auto index = random_index(rng, n, 6, coarse);
    const DualQueryVector q{random_vector(rng, 6, coarse), random_vector(rng, 6, coarse)};
    const auto r = search(q, index, n);
    REQUIRE(order_of(r) == oracle_order(q, index));
    for (std::size_t i = 1; i < r.entries.size(); ++i) CHECK(r.entries[i - 1].score >= r.entries[i].score);

    // Positive rescaling of the query keeps the order. Exact ties only
    // survive rescaling when the factor is a power of two.
    const double c = coarse ? std::ldexp(1.0, static_cast<int>(rng.below(9)) - 4) : 0.1 + rng.uniform() * 10;
    CHECK(order_of(search({q.v_doc * c, q.v_gen * c}, index, n)) == order_of(r));
  }
}

TEST_CASE("mrr") {
  auto list = [](const std::string& q, std::vector<std::string> ids) {
    RankedList r;
    r.query_id = q;
    for (std::size_t i = 0; i < ids.size(); ++i) r.entries.push_back({i, ids[i], 0.0});
    return r;
  };
  CHECK(mrr({list("a", {"x", "y"}), list("b", {"y", "x"})}, {{"a", "x"}, {"b", "y"}}) == 1.0);
  const std::vector<RankedList> ranked{list("a", {"t", "u", "v", "w"}), list("b", {"u", "t", "v", "w"}),
                                       list("c", {"u", "v", "w", "t"})};
  CHECK(mrr(ranked, {{"a", "t"}, {"b", "t"}, {"c", "t"}}) == doctest::Approx(0.5833333333333334).epsilon(1e-15));
  CHECK_THROWS_AS(mrr(ranked, {{"a", "t"}}), ContractError);
  CHECK_THROWS_AS(mrr(ranked, {{"a", "zz"}, {"b", "t"}, {"c", "t"}}), ContractError);
  CHECK(rank_of(ranked[2], "t") == 4);
}

TEST_CASE("mrr agrees with an independent reciprocal-rank average") {
  Rng rng(22);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 2 + rng.below(40);
    const std::size_t queries = 1 + rng.below(10);
    const auto index = random_index(rng, n, 4, trial % 3 == 0);
    std::vector<RankedList> lists;
    std::map<std::string, std::string> truth;
    std::vector<std::vector<double>> rows;
    std::vector<std::size_t> truth_rows;
    for (std::size_t q = 0; q < queries; ++q) {
      const DualQueryVector v{random_vector(rng, 4, trial % 3 == 0), Vector::Zero(4)};
      const std::string qid = "q" + std::to_string(q);
      lists.push_back(search(v, index, n, qid));
      truth_rows.push_back(rng.below(n));
      truth[qid] = index.ids[truth_rows.back()];
      std::vector<double> row(n);
      for (std::size_t i = 0; i < n; ++i) row[i] = lists.back().entries.size() ? 0 : 0;
      for (const auto& e : lists.back().entries) row[e.pool_index] = e.score;
      rows.push_back(row);
    }
    CHECK(std::abs(mrr(lists, truth) - oracle_mrr(rows, truth_rows)) < 1e-12);
  }
}

TEST_CASE("compare_superior") {
  auto c = compare_superior({{"q1", 1}, {"q2", 5}}, {{"q1", 2}, {"q2", 5}});
  CHECK(c.a_better == 1);
  CHECK(c.b_better == 0);
  CHECK(c.ties == 1);
  c = compare_superior({{"q1", 3}, {"q2", 4}}, {{"q1", 3}, {"q2", 4}});
  CHECK(c.ties == 2);
  Rng rng(3);
  std::map<std::string, std::size_t> a, b;
  for (int i = 0; i < 50; ++i) {
    a["q" + std::to_string(i)] = 1 + rng.below(5);
    b["q" + std::to_string(i)] = 1 + rng.below(5);
  }
  c = compare_superior(a, b);
  CHECK(c.a_better + c.b_better + c.ties == 50);
  CHECK_THROWS_AS(compare_superior({{"q1", 1}}, {{"q2", 1}}), ContractError);
  CHECK_THROWS_AS(compare_superior({{"q1", 1}}, {}), ContractError);
}

TEST_CASE("index building, persistence and determinism") {
  TempDir dir("index");
  auto w = make_mini_world(24, 10);
  w.train.epochs = 1;
  const auto ck = trained(w);
  auto pairs = w.corpus.test.pairs;
  pairs.push_back(pairs[0]);
  pairs.back().id = "duplicate";
  const auto index = build_index(pairs, w.vocab, ck.encoder, ck.params, 42, 2);
  CHECK(index.vectors.rows() == 11);
  CHECK(index.vectors.cols() == 16);
  CHECK((index.vectors.row(0).array() == index.vectors.row(10).array()).all());
  const auto again = build_index(pairs, w.vocab, ck.encoder, ck.params, 42, 1);
  CHECK((again.vectors.array() == index.vectors.array()).all());

  save_index(index, dir / "i.gacr");
  const auto back = load_index(dir / "i.gacr");
  CHECK(back.ids == index.ids);
  CHECK(back.languages == index.languages);
  CHECK(back.fingerprint == 42);
  CHECK((back.vectors.array() == index.vectors.array()).all());
  CHECK_THROWS_WITH_AS(load_index(dir / "none.gacr"), doctest::Contains("index not found"), LoadError);

  const auto other_vocab = build_vocab({}, {}, 10, 1);
  CHECK_THROWS_AS(build_index(pairs, other_vocab, ck.encoder, ck.params, 42, 1), ConfigError);
}

TEST_CASE("variant query construction") {
  const auto vocab = build_vocab({}, {{"def", "def", "f", "f", "(", "(", ")", ")", ":", ":", "x", "x", "doc", "doc"}}, 50, 1);
  EncoderConfig config;
  config.max_seq_len = 16;
  config.vocab_size = vocab.size();
  const DocCodePair pair{"p", "python", {"doc"}, {"x"}};
  const auto snip = make_snippet("p", 0, "def f():\n  x");
  auto in = build_variant_query(Variant::kGenName, pair, {snip}, vocab, config, 64);
  const IdList name_ids = encode_tokens(vocab, {"def", "f", "(", ")", ":"});
  IdList expected{Vocabulary::kCls};
  expected.insert(expected.end(), name_ids.begin(), name_ids.end());
  expected.push_back(Vocabulary::kSep);
  CHECK(IdList(in.ids.begin(), in.ids.begin() + 7) == expected);
  CHECK(in.cls_positions.size() == 1);
  in = build_variant_query(Variant::kGenBody, pair, {snip}, vocab, config, 64);
  CHECK(in.true_len == 3);
  in = build_variant_query(Variant::kGacrS, pair, {snip}, vocab, config, 64);
  CHECK(in.cls_positions == std::vector<std::size_t>{0, 3});
  CHECK_THROWS_AS(build_variant_query(Variant::kGacrS, pair, {}, vocab, config, 64), ContractError);
  CHECK(parse_variant("gen_body") == Variant::kGenBody);
  CHECK(all_variants().size() == 6);
  CHECK_THROWS_AS(parse_variant("nope"), ConfigError);
}

TEST_CASE("eval_variants on a one-pair corpus") {
  auto w = make_mini_world(16, 4);
  w.train.epochs = 1;
  const auto ck = trained(w);
  CorpusSplit one;
  one.name = "test";
  one.pairs = {w.corpus.test.pairs[0]};
  const auto index = build_index(one.pairs, w.vocab, ck.encoder, ck.params, 0, 1);
  EvalOptions opts;
  opts.cap = w.train.snippet_cap;
  opts.k = 2;
  const auto reports = eval_variants(one, w.cache, w.vocab, ck, index, {Variant::kDocOnly}, opts);
  REQUIRE(reports.size() == 1);
  CHECK(reports[0].overall_mrr == 1.0);
  CHECK(reports[0].mode == "gacr_s");
  CHECK(reports[0].cap == w.train.snippet_cap);
  CHECK(reports[0].k == 2);
  CHECK(reports[0].mask == MaskType::kA);
}

TEST_CASE("eval_variants: full report, pools, type D identity, outputs") {
  auto w = make_mini_world(32, 12);
  w.train.epochs = 1;
  w.encoder.mask_type = MaskType::kD;
  const auto ck = trained(w);
  const auto index = build_index(w.corpus.test.pairs, w.vocab, ck.encoder, ck.params, 0, 1);
  EvalOptions opts;
  opts.cap = w.train.snippet_cap;
  opts.k = 2;
  const auto reports = eval_variants(w.corpus.test, w.cache, w.vocab, ck, index, all_variants(), opts);
  REQUIRE(reports.size() == 6);
  for (const auto& r : reports) {
    CHECK(r.overall_mrr > 0);
    CHECK(r.overall_mrr <= 1);
    CHECK(r.ranks.size() == 12);
    CHECK(r.mask == MaskType::kD);
  }
  const auto threaded = [&] {
    auto o = opts;
    o.jobs = 3;
    return eval_variants(w.corpus.test, w.cache, w.vocab, ck, index, all_variants(), o);
  }();
  CHECK(threaded == reports);

  // Under type D the documentation half of the gacr_s query equals the
  // doc_only vector.
  for (const auto& pair : w.corpus.test.pairs) {
    const auto snippets = std::vector<GeneratedSnippet>{*w.cache.find(pair.id, 0)};
    const auto s = encode_query(ck.encoder, ck.params,
                                build_variant_query(Variant::kGacrS, pair, snippets, w.vocab, ck.encoder, opts.cap));
    const auto d = encode_query(ck.encoder, ck.params,
                                build_variant_query(Variant::kDocOnly, pair, snippets, w.vocab, ck.encoder, opts.cap));
    CHECK((s.v_doc.array() == d.v_doc.array()).all());
  }

  auto sampled = opts;
  sampled.pool_size = 4;
  const auto small = eval_variants(w.corpus.test, w.cache, w.vocab, ck, index, {Variant::kDocOnly}, sampled);
  for (const auto& r : small[0].ranks) CHECK(r.rank <= 4);
  CHECK(eval_variants(w.corpus.test, w.cache, w.vocab, ck, index, {Variant::kDocOnly}, sampled) == small);

  std::ostringstream table, jsonl, dump;
  write_report_table(table, reports);
  CHECK(table.str().find("gacr_m") != std::string::npos);
  write_report_jsonl(jsonl, reports);
  std::istringstream lines(jsonl.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("variant"));
    CHECK(j.contains("language"));
    CHECK(j["mask"] == "D");
    CHECK(j["cap"] == w.train.snippet_cap);
    CHECK(j["k"] == 2);
    ++n;
  }
  CHECK(n >= 6);
  write_rank_dump(dump, reports[0]);
  const std::string dumped = dump.str();
  CHECK(std::count(dumped.begin(), dumped.end(), '\n') == 12);
}

TEST_CASE("sweep shapes and determinism") {
  auto w = make_mini_world(24, 8);
  w.train.epochs = 1;
  SweepSetup setup;
  setup.train = &w.corpus.train;
  setup.test = &w.corpus.test;
  setup.cache = &w.cache;
  setup.vocab = &w.vocab;
  setup.encoder = w.encoder;
  setup.encoder.max_seq_len = 64;
  setup.train_config = w.train;
  setup.eval.k = 2;
  const auto caps = sweep(setup, SweepAxis::kCap);
  REQUIRE(caps.size() == 3);
  CHECK(caps[0].label == "32");
  CHECK(caps[1].label == "64");
  CHECK(caps[2].label == "128");
  CHECK(caps[2].report.cap == 128);
  CHECK(caps[0].report.mode == "gacr_m");
  const auto masks = sweep(setup, SweepAxis::kMask);
  REQUIRE(masks.size() == 4);
  CHECK(masks[0].label == "A");
  CHECK(masks[3].label == "D");
  CHECK(masks[3].report.mask == MaskType::kD);
  CHECK(sweep(setup, SweepAxis::kMask) == masks);

  const auto ck = trained(w);
  setup.fixed_checkpoint = &ck;
  setup.encoder = w.encoder;
  const auto fixed = sweep(setup, SweepAxis::kMask);
  CHECK(fixed.size() == 4);
  std::ostringstream out;
  write_sweep_table(out, SweepAxis::kMask, fixed);
  CHECK(out.str().find("D") != std::string::npos);
  CHECK_THROWS_AS(parse_sweep_axis("depth"), ConfigError);
}
