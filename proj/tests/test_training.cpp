#include <doctest.h>

#include <cmath>
#include <sstream>

#include "gacr/checkpoint.hpp"
#include "gacr/error.hpp"
#include "gacr/training.hpp"
#include "support.hpp"

using namespace gacr;
using gacr::testing::make_mini_world;
using gacr::testing::TempDir;
using gacr::testing::tiny_encoder;

TEST_CASE("batch_scores") {
  const DualQueryVector q1{Vector::Unit(3, 0), Vector::Zero(3)};
  const DualQueryVector q2{Vector::Zero(3), Vector::Unit(3, 1)};
  const TargetVector t1{Vector::Unit(3, 0) * 2};
  const TargetVector t2{Vector::Unit(3, 1) * 3};
  const auto s = batch_scores({q1, q2}, {t1, t2});
  CHECK(s(0, 0) == 2);
  CHECK(s(1, 1) == 3);
  CHECK(s(0, 1) == 0);
  CHECK(s(1, 0) == 0);
  CHECK(batch_scores({q1}, {t1}).size() == 1);

  Rng rng(8);
  std::vector<DualQueryVector> qs;
  std::vector<TargetVector> ts;
  for (int i = 0; i < 5; ++i) {
    qs.push_back({gacr::testing::random_vector(rng, 4, false), gacr::testing::random_vector(rng, 4, false)});
    ts.push_back({gacr::testing::random_vector(rng, 4, false)});
  }
  const auto m = batch_scores(qs, ts);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) CHECK(m(i, j) == doctest::Approx(score(qs[i], ts[j])).epsilon(1e-14));
}

TEST_CASE("batch_loss anchors") {
  auto r = batch_loss(Matrix::Constant(4, 4, 0.7));
  CHECK(std::abs(r.loss - std::log(4.0)) < 1e-12);
  Matrix s(2, 2);
  s << 10, 0, 0, 10;
  r = batch_loss(s);
  CHECK(r.loss == doctest::Approx(-std::log(std::exp(10.0) / (std::exp(10.0) + 1))).epsilon(1e-12));
  CHECK(r.loss == doctest::Approx(4.54e-5).epsilon(1e-3));
  r = batch_loss(Matrix::Constant(1, 1, 3.0));
  CHECK(r.loss == 0);
  CHECK(r.grad_scores(0, 0) == 0);
  CHECK_THROWS_AS(batch_loss(Matrix::Zero(2, 3)), ContractError);
}

TEST_CASE("batch_loss properties on random scores") {
  Rng rng(9);
  for (int t = 0; t < 100; ++t) {
    const auto n = static_cast<Eigen::Index>(1 + rng.below(8));
    Matrix s(n, n);
    for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = rng.uniform(-20, 20);
    const auto r = batch_loss(s);
    CHECK(r.loss >= 0);
    for (Eigen::Index b = 0; b < n; ++b) CHECK(std::abs(r.grad_scores.row(b).sum()) < 1e-12);

    // Permuting queries and targets together leaves the loss unchanged.
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Matrix p(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) p(i, j) = s(perm[i], perm[j]);
    CHECK(batch_loss(p).loss == doctest::Approx(r.loss).epsilon(1e-12));

    // Finite-difference check of grad_scores, both loss forms.
    for (auto form : {LossForm::kLogSoftmax, LossForm::kLiteral}) {
      const auto base = batch_loss(s, form);
      const auto i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
      const auto j = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
      Matrix up = s, down = s;
      up(i, j) += 1e-6;
      down(i, j) -= 1e-6;
      const double numeric = (batch_loss(up, form).loss - batch_loss(down, form).loss) / 2e-6;
      CHECK(std::abs(numeric - base.grad_scores(i, j)) < 1e-7);
    }
  }
  Matrix dominant = Matrix::Zero(3, 3);
  dominant.diagonal().setConstant(200);
  CHECK(batch_loss(dominant).loss < 1e-80);
}

TEST_CASE("literal loss form") {
  const auto r = batch_loss(Matrix::Constant(4, 4, 1.0), LossForm::kLiteral);
  CHECK(r.loss == doctest::Approx(-0.25));
  CHECK(parse_loss_form("literal") == LossForm::kLiteral);
  CHECK(to_string(LossForm::kLogSoftmax) == "log_softmax");
  CHECK_THROWS_AS(parse_loss_form("hinge"), ConfigError);
}

TEST_CASE("query construction by mode") {
  const IdList doc{5, 6};
  const std::vector<IdList> snippets{{7, 8, 9}, {10}};
  auto in = build_query(QueryMode::kDocOnly, doc, snippets, 64, 16, MaskType::kA);
  CHECK(in.cls_positions.size() == 1);
  CHECK(in.true_len == 4);
  CHECK(query_rows(in) == std::pair<std::size_t, std::size_t>{0, 0});
  in = build_query(QueryMode::kGacrS, doc, snippets, 2, 16, MaskType::kC);
  CHECK(in.true_len == 8);
  CHECK(in.mask_type == MaskType::kC);
  CHECK(query_rows(in) == std::pair<std::size_t, std::size_t>{0, 4});
  in = build_query(QueryMode::kGacrM, doc, snippets, 64, 16, MaskType::kA);
  CHECK(in.cls_positions.size() == 3);
  CHECK(parse_query_mode("gacr_m") == QueryMode::kGacrM);
  CHECK(to_string(QueryMode::kDocOnly) == "doc_only");
  CHECK_THROWS_AS(parse_query_mode("both"), ConfigError);
}

TEST_CASE("snippet_ids fills from the stub or fails by name") {
  const DocCodePair pair{"pair-7", "python", {"alpha"}, {"x"}};
  const auto vocab = build_vocab({}, {}, 10, 1);
  const SnippetCache empty;
  CHECK(snippet_ids(pair, empty, vocab, 2, true, 1).size() == 2);
  try {
    snippet_ids(pair, empty, vocab, 2, false, 1);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("pair-7") != std::string::npos);
  }
}

TEST_CASE("gradient check") {
  const auto config = tiny_encoder();
  const double err = grad_check(config, 17, 60);
  CHECK(err < 1e-4);
  CHECK(grad_check(config, 17, 60) == err);
  CHECK(grad_check(config, 17, 0) == 0);
  auto masked = config;
  masked.mask_type = MaskType::kB;
  CHECK(grad_check(masked, 5, 40) < 1e-4);
  CHECK(relative_error(1.0, 1.0) == 0);
  CHECK(relative_error(0.0, 1e-9) == doctest::Approx(1e-3));
}

TEST_CASE("adam_step follows the update rule") {
  auto config = tiny_encoder(6);
  config.num_layers = 1;
  auto params = init_params(config);
  const auto before = params;
  auto grads = zeros_like(config);
  grads.token_embedding(4, 0) = 0.5;
  auto state = make_optimizer_state(config);
  TrainConfig tc;
  adam_step(tc, grads, params, state);
  CHECK(state.step == 1);
  // First step moves by lr * sign(g) (bias-corrected m/sqrt(v) = g/|g|).
  CHECK(params.token_embedding(4, 0) == doctest::Approx(before.token_embedding(4, 0) - 1e-3).epsilon(1e-9));
  CHECK(params.token_embedding(5, 0) == before.token_embedding(5, 0));
}

TEST_CASE("training is deterministic and reduces the loss") {
  auto w = make_mini_world();
  w.train.epochs = 5;
  const auto a = train(w.corpus.train, w.cache, w.vocab, w.train, w.encoder);
  REQUIRE(a.epoch_losses.size() == 5);
  for (std::size_t e = 1; e < 5; ++e) CHECK(a.epoch_losses[e] <= a.epoch_losses[e - 1] + 1e-6);
  CHECK(a.epoch_losses.back() < a.epoch_losses.front());

  auto threaded = w.train;
  threaded.jobs = 3;
  const auto b = train(w.corpus.train, w.cache, w.vocab, threaded, w.encoder);
  CHECK(a.params.bitwise_equal(b.params));
  CHECK(a.epoch_losses == b.epoch_losses);

  auto other = w.train;
  other.seed = 99;
  CHECK_FALSE(a.params.bitwise_equal(train(w.corpus.train, w.cache, w.vocab, other, w.encoder).params));
}

TEST_CASE("training configuration errors") {
  auto w = make_mini_world(20, 10);
  auto tc = w.train;
  tc.batch_size = 11;
  CHECK_THROWS_AS(train(w.corpus.train, w.cache, w.vocab, tc, w.encoder), ConfigError);
  auto enc = w.encoder;
  enc.vocab_size += 1;
  CHECK_THROWS_AS(train(w.corpus.train, w.cache, w.vocab, w.train, enc), ConfigError);
}

TEST_CASE("loss log format") {
  std::ostringstream out;
  write_loss_log(out, {2.5, 1.25});
  CHECK(out.str() == "epoch 1 loss 2.5\nepoch 2 loss 1.25\n");
}

TEST_CASE("checkpoint round trip and corruption") {
  TempDir dir("ckpt");
  auto w = make_mini_world(24, 8);
  w.train.epochs = 1;
  auto result = train(w.corpus.train, w.cache, w.vocab, w.train, w.encoder);
  const Checkpoint ck{w.encoder, w.train, result.params, result.optimizer};
  save_checkpoint(ck, dir / "c.gacr");
  const auto back = load_checkpoint(dir / "c.gacr", w.encoder);
  CHECK(back.encoder == ck.encoder);
  CHECK(back.train == ck.train);
  CHECK(back.params.bitwise_equal(ck.params));
  CHECK(back.optimizer.step == ck.optimizer.step);
  CHECK(back.optimizer.first_moment.bitwise_equal(ck.optimizer.first_moment));
  CHECK(back.optimizer.second_moment.bitwise_equal(ck.optimizer.second_moment));
  save_checkpoint(back, dir / "d.gacr");
  CHECK(gacr::testing::read_text(dir / "c.gacr") == gacr::testing::read_text(dir / "d.gacr"));

  auto bytes = gacr::testing::read_text(dir / "c.gacr");
  SUBCASE("bad magic") {
    bytes[0] = 'X';
    gacr::testing::write_text(dir / "bad.gacr", bytes);
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "bad.gacr"), doctest::Contains("bad magic"), LoadError);
  }
  SUBCASE("truncated") {
    gacr::testing::write_text(dir / "short.gacr", bytes.substr(0, bytes.size() - 100));
    CHECK_THROWS_AS(load_checkpoint(dir / "short.gacr"), LoadError);
  }
  SUBCASE("shape mismatch") {
    auto narrow = w.encoder;
    narrow.model_dim = 32;
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "c.gacr", narrow), doctest::Contains("model_dim"), LoadError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint(dir / "none.gacr"), LoadError); }
}
