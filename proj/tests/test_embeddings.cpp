#include "doctest.h"

#include <random>

#include "lensctr/embeddings.hpp"
#include "test_support.hpp"

using namespace lensctr;
using num::Tape;
using num::Tensor;

namespace {

Tensor random_table(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  Tensor t({rows, cols});
  std::normal_distribution<double> d(0.0, 1.0);
  for (double& v : t.values()) v = d(rng);
  return t;
}

SequenceBatch one_token(std::int64_t item, std::int64_t action) {
  SequenceBatch s;
  s.batch = 1;
  s.width = 1;
  s.item_ids = {item};
  s.action_types = {action};
  s.valid_len = {1};
  return s;
}

}  // namespace

TEST_CASE("fuse_typed_tokens: zero action table gives plain item lookup") {
  std::mt19937_64 rng(1);
  Tape tape;
  Tensor items = random_table(rng, 6, 3);
  auto items_var = tape.constant(items);
  auto fused = emb::fuse_typed_tokens(one_token(4, 2), items_var, tape.constant(Tensor({4, 3})));
  for (std::size_t j = 0; j < 3; ++j) CHECK(fused.value()[j] == items.at({4, j}));
}

TEST_CASE("fuse_typed_tokens: one token is the sum of its rows") {
  Tape tape;
  Tensor items({3, 2});
  items.at({2, 0}) = 1.5;
  items.at({2, 1}) = -2.0;
  Tensor actions({4, 2});
  actions.at({3, 0}) = 0.25;
  actions.at({3, 1}) = 4.0;
  auto fused = emb::fuse_typed_tokens(one_token(2, 3), tape.constant(items), tape.constant(actions));
  CHECK(fused.value()[0] == 1.75);
  CHECK(fused.value()[1] == 2.0);
}

TEST_CASE("fuse_typed_tokens matches a per-position loop oracle") {
  std::mt19937_64 rng(7);
  const std::size_t v = 9, d = 5;
  Tensor items = random_table(rng, v, d), actions = random_table(rng, 4, d);
  ModelConfig c;
  c.vocab.n_items = v - 1;
  c.l_max = 7;
  auto records = testing::random_records(rng, 6, c);
  Batch b = make_batch(records, c.l_max, true);
  Tape tape;
  auto fused = emb::fuse_typed_tokens(b.seq, tape.constant(items), tape.constant(actions));
  for (std::size_t i = 0; i < b.size; ++i) {
    for (std::size_t p = 0; p < b.seq.width; ++p) {
      for (std::size_t j = 0; j < d; ++j) {
        double expect = 0.0;
        if (p < b.seq.valid_len[i]) {
          const auto it = static_cast<std::size_t>(b.seq.item_ids[i * b.seq.width + p]);
          const auto ac = static_cast<std::size_t>(b.seq.action_types[i * b.seq.width + p]);
          expect = items.at({it, j}) + actions.at({ac, j});
        }
        CHECK(fused.value()[(i * b.seq.width + p) * d + j] == expect);
      }
    }
  }
}

TEST_CASE("fuse_typed_tokens rejects out-of-range ids") {
  Tape tape;
  auto items = tape.constant(Tensor({3, 2}));
  auto actions = tape.constant(Tensor({4, 2}));
  CHECK_THROWS_AS(emb::fuse_typed_tokens(one_token(3, 0), items, actions), std::out_of_range);
  CHECK_THROWS_AS(emb::fuse_typed_tokens(one_token(1, 4), items, actions), std::out_of_range);
  CHECK_THROWS_AS(emb::fuse_typed_tokens(one_token(1, 0), items, tape.constant(Tensor({4, 3}))),
                  std::invalid_argument);
  std::vector<std::int64_t> bad{-1};
  CHECK_THROWS_AS(emb::lookup(items, bad, {1}), std::out_of_range);
}

TEST_CASE("fuse_typed_tokens is additive in the tables") {
  std::mt19937_64 rng(3);
  ModelConfig c;
  c.vocab.n_items = 7;
  c.l_max = 5;
  auto records = testing::random_records(rng, 4, c);
  Batch b = make_batch(records, c.l_max);
  Tensor i1 = random_table(rng, 8, 3), i2 = random_table(rng, 8, 3);
  Tensor a1 = random_table(rng, 4, 3), a2 = random_table(rng, 4, 3);
  Tensor isum({8, 3}), asum({4, 3});
  for (std::size_t k = 0; k < isum.numel(); ++k) isum[k] = i1[k] + i2[k];
  for (std::size_t k = 0; k < asum.numel(); ++k) asum[k] = a1[k] + a2[k];
  Tape tape;
  auto f1 = emb::fuse_typed_tokens(b.seq, tape.constant(i1), tape.constant(a1));
  auto f2 = emb::fuse_typed_tokens(b.seq, tape.constant(i2), tape.constant(a2));
  auto fs = emb::fuse_typed_tokens(b.seq, tape.constant(isum), tape.constant(asum));
  for (std::size_t k = 0; k < fs.numel(); ++k) CHECK(fs.value()[k] == doctest::Approx(f1.value()[k] + f2.value()[k]).epsilon(1e-14));
}

TEST_CASE("masked_mean examples") {
  Tape tape;
  Tensor tokens({3, 3, 2});
  const double u[2] = {1.0, 4.0}, v[2] = {3.0, -2.0};
  for (std::size_t j = 0; j < 2; ++j) {
    tokens.at({0, 0, j}) = u[j];
    tokens.at({1, 0, j}) = u[j];
    tokens.at({1, 1, j}) = v[j];
    tokens.at({2, 0, j}) = 99.0;  // beyond valid_len 0
  }
  std::vector<std::size_t> len{1, 2, 0};
  auto m = emb::masked_mean(tape.constant(tokens), len);
  CHECK(m.value().shape() == num::Shape{3, 2});
  CHECK(m.value().at({0, 0}) == 1.0);
  CHECK(m.value().at({0, 1}) == 4.0);
  CHECK(m.value().at({1, 0}) == 2.0);
  CHECK(m.value().at({1, 1}) == 1.0);
  CHECK(m.value().at({2, 0}) == 0.0);
  CHECK(m.value().at({2, 1}) == 0.0);
}

TEST_CASE("masked_mean ignores appended padding") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 3, w = 4, d = 3, extra = 1 + trial % 3;
    Tensor a = random_table(rng, b * w, d);
    a.reshape({b, w, d});
    Tensor padded({b, w + extra, d});
    std::vector<std::size_t> len(b);
    for (std::size_t i = 0; i < b; ++i) {
      len[i] = rng() % (w + 1);
      for (std::size_t p = 0; p < w; ++p) {
        for (std::size_t j = 0; j < d; ++j) {
          if (p >= len[i]) a.at({i, p, j}) = 0.0;
          padded.at({i, p, j}) = a.at({i, p, j});
        }
      }
    }
    Tape tape;
    auto m1 = emb::masked_mean(tape.constant(a), len);
    auto m2 = emb::masked_mean(tape.constant(padded), len);
    for (std::size_t k = 0; k < m1.numel(); ++k) CHECK(m1.value()[k] == m2.value()[k]);
  }
}

TEST_CASE("build_fullside_vector shapes and order") {
  Tape tape;
  Tensor t({1, 2}), ns({1, 3}), s({1, 2});
  t[0] = 1; t[1] = 2; ns[0] = 3; ns[1] = 4; ns[2] = 5; s[0] = 6; s[1] = 7;
  auto f = emb::build_fullside_vector(tape.constant(t), tape.constant(ns), tape.constant(s));
  REQUIRE(f.shape() == num::Shape{1, 7});
  for (std::size_t k = 0; k < 7; ++k) CHECK(f.value()[k] == static_cast<double>(k + 1));

  auto controlled = emb::build_fullside_vector(tape.constant(t), num::Var{}, tape.constant(s));
  CHECK(controlled.shape() == num::Shape{1, 4});
}

TEST_CASE("nonseq tokens: one table per categorical field, affine per dense field") {
  ModelConfig c;
  c.d_model = 2;
  c.vocab.n_items = 4;
  c.vocab.cat_cardinalities = {3, 2};
  c.vocab.n_dense = 1;
  ParameterStore store;
  emb::declare_tables(store, c);
  store.initialize(5);
  CHECK(store.total_size() == emb::embedding_parameter_count(c));

  SampleRecord r;
  r.item_id = 1;
  r.cat_fields = {2, 1};
  r.dense_fields = {0.5};
  std::vector<SampleRecord> rs{r};
  Batch b = make_batch(rs, 3);
  Tape tape;
  auto ns = emb::nonseq_tokens(tape, store, b, c);
  REQUIRE(ns.shape() == num::Shape{1, 3, 2});
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(ns.value().at({0, 0, j}) == store.at("emb.field.0").at({2, j}));
    CHECK(ns.value().at({0, 1, j}) == store.at("emb.field.1").at({1, j}));
    CHECK(ns.value().at({0, 2, j}) ==
          doctest::Approx(0.5 * store.at("emb.dense.0.w").at({0, j}) + store.at("emb.dense.0.b")[j]));
  }

  // Frozen canonical field order: the fullside vector for this record.
  const double golden[] = {
      store.at("emb.item").at({1, 0}), store.at("emb.item").at({1, 1}),
      store.at("emb.field.0").at({2, 0}), store.at("emb.field.0").at({2, 1}),
      store.at("emb.field.1").at({1, 0}), store.at("emb.field.1").at({1, 1}),
  };
  auto items = tape.param(store.at("emb.item"));
  auto t = emb::lookup(items, b.target, {1});
  auto f = emb::build_fullside_vector(t, ns, emb::masked_mean(emb::sequence_items(items, b.seq), b.seq.valid_len));
  REQUIRE(f.shape() == num::Shape{1, 10});
  for (std::size_t k = 0; k < 6; ++k) CHECK(f.value()[k] == golden[k]);
  CHECK(f.value()[8] == 0.0);
  CHECK(f.value()[9] == 0.0);
}

TEST_CASE("embedding tables are initialised with std 0.02") {
  ModelConfig c;
  c.d_model = 16;
  c.vocab.n_items = 2000;
  ParameterStore store;
  emb::declare_tables(store, c);
  store.initialize(42);
  double sq = 0.0;
  const auto v = store.at("emb.item").values();
  for (double x : v) sq += x * x;
  CHECK(std::sqrt(sq / static_cast<double>(v.size())) == doctest::Approx(0.02).epsilon(0.02));
}
