#include <cmath>
#include <random>

#include "doctest.h"
#include "lensctr/embeddings.hpp"
#include "lensctr/lens.hpp"
#include "lensctr/posbias.hpp"
#include "test_support.hpp"

using namespace lensctr;
using num::Tape;
using num::Tensor;

namespace {

ModelConfig lens_config(std::size_t q, std::size_t d, std::size_t r, std::size_t l_max, ConditionSource src) {
  ModelConfig c;
  c.q = q;
  c.d_model = d;
  c.heads = 1;
  c.l_max = l_max;
  c.n_layers = 1;
  c.lens.enabled = true;
  c.lens.rank = r;
  c.lens.condition = src;
  return c;
}

Tensor random_tensor(std::mt19937_64& rng, num::Shape shape) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> d(0.0, 1.0);
  for (double& v : t.values()) v = d(rng);
  return t;
}

SequenceBatch full_batch(std::size_t b, std::size_t len) {
  SequenceBatch s;
  s.batch = b;
  s.width = len;
  s.item_ids.assign(b * len, 1);
  s.action_types.assign(b * len, 0);
  s.valid_len.assign(b, len);
  return s;
}

}  // namespace

TEST_CASE("select_condition") {
  CHECK(lens::select_condition(1000, ConditionSource::kAuto) == ConditionSource::kItem);
  CHECK(lens::select_condition(22, ConditionSource::kAuto) == ConditionSource::kItemSeq);
  CHECK(lens::select_condition(59, ConditionSource::kAuto) == ConditionSource::kItem);
  CHECK(lens::select_condition(50, ConditionSource::kAuto) == ConditionSource::kItemSeq);
  CHECK(lens::select_condition(50.0001, ConditionSource::kAuto) == ConditionSource::kItem);
  CHECK(lens::select_condition(3, ConditionSource::kItem) == ConditionSource::kItem);
  CHECK(lens::select_condition(3000, ConditionSource::kItemSeq) == ConditionSource::kItemSeq);
  CHECK_THROWS_AS(lens::select_condition(0, ConditionSource::kAuto), ValidationError);
}

TEST_CASE("lens projections start at exactly zero; d_c follows the condition source") {
  for (auto src : {ConditionSource::kItem, ConditionSource::kItemSeq}) {
    auto c = lens_config(3, 4, 2, 5, src);
    c.n_layers = 2;
    ParameterStore store;
    lens::declare_params(store, c);
    store.initialize(42);
    const std::size_t dc = src == ConditionSource::kItem ? 4 : 8;
    CHECK(store.at("lens.gate.w").shape() == num::Shape{12, dc});
    for (double v : store.at("lens.gate.w").values()) CHECK(v == 0.0);
    for (std::size_t l = 0; l < 2; ++l) {
      const auto& w = store.at("lens.tcpb." + std::to_string(l) + ".w");
      CHECK(w.shape() == num::Shape{6, dc});
      for (double v : w.values()) CHECK(v == 0.0);
      bool nonzero = false;
      for (double v : store.at("lens.tcpb." + std::to_string(l) + ".pos").values()) nonzero |= v != 0.0;
      CHECK(nonzero);
    }
  }
}

TEST_CASE("condition vector") {
  Tape tape;
  Tensor t({1, 2}), s({1, 2});
  t[0] = 1; t[1] = 2; s[0] = 3; s[1] = 4;
  auto item = lens::condition_vector(tape.constant(t), tape.constant(s), ConditionSource::kItem);
  CHECK(item.shape() == num::Shape{1, 2});
  auto both = lens::condition_vector(tape.constant(t), tape.constant(s), ConditionSource::kItemSeq);
  REQUIRE(both.shape() == num::Shape{1, 4});
  CHECK(both.value()[2] == 3.0);
  CHECK_THROWS(lens::condition_vector(tape.constant(t), tape.constant(s), ConditionSource::kAuto));
}

TEST_CASE("tcqg gate: zero weights or zero condition give exactly one; saturation approaches two") {
  std::mt19937_64 rng(4);
  auto c = lens_config(2, 3, 1, 4, ConditionSource::kItem);
  ParameterStore store;
  lens::declare_params(store, c);
  store.initialize(0);
  Tape tape;
  auto g = lens::tcqg_gate(tape, store, c, tape.constant(random_tensor(rng, {5, 3})));
  REQUIRE(g.shape() == num::Shape{5, 2, 3});
  for (double v : g.value().values()) CHECK(v == 1.0);

  testing::randomize(store, rng, 2.0);
  auto g0 = lens::tcqg_gate(tape, store, c, tape.constant(Tensor({2, 3})));
  for (double v : g0.value().values()) CHECK(v == 1.0);

  auto gr = lens::tcqg_gate(tape, store, c, tape.constant(random_tensor(rng, {4, 3})));
  for (double v : gr.value().values()) {
    CHECK(v > 0.0);
    CHECK(v < 2.0);
  }

  for (double& v : store.at("lens.gate.w").values()) v = 0.0;
  store.at("lens.gate.w").at({0, 0}) = 50.0;
  Tensor one({1, 3});
  one[0] = 1.0;
  auto gs = lens::tcqg_gate(tape, store, c, tape.constant(one));
  CHECK(std::abs(gs.value()[0] - 2.0) < 1e-9);
}

TEST_CASE("tcpb: zero projection gives zero bias") {
  std::mt19937_64 rng(5);
  auto c = lens_config(3, 4, 2, 6, ConditionSource::kItemSeq);
  ParameterStore store;
  lens::declare_params(store, c);
  store.initialize(1);
  Tape tape;
  auto bias = lens::tcpb_bias(tape, store, c, 0, tape.constant(random_tensor(rng, {2, 8})), full_batch(2, 6));
  REQUIRE(bias.shape() == num::Shape{2, 3, 6});
  for (double v : bias.value().values()) CHECK(v == 0.0);
}

TEST_CASE("tcpb: rank-1 example") {
  auto c = lens_config(1, 1, 1, 3, ConditionSource::kItem);
  ParameterStore store;
  lens::declare_params(store, c);
  store.at("lens.tcpb.0.w")[0] = 2.0;
  Tensor& pos = store.at("lens.tcpb.0.pos");
  pos[0] = 0.0; pos[1] = 1.0; pos[2] = 2.0;
  Tape tape;
  Tensor cond({1, 1});
  cond[0] = 1.0;
  auto bias = lens::tcpb_bias(tape, store, c, 0, tape.constant(cond), full_batch(1, 3));
  CHECK(bias.value()[0] == 0.0);
  CHECK(bias.value()[1] == 2.0);
  CHECK(bias.value()[2] == 4.0);
}

TEST_CASE("tcpb equals a double-loop dot-product oracle") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t q = 2, r = 2, l_max = 3, d = 2;
    auto c = lens_config(q, d, r, l_max, ConditionSource::kItem);
    ParameterStore store;
    lens::declare_params(store, c);
    testing::randomize(store, rng, 1.0);
    Tensor cond = random_tensor(rng, {2, d});
    SequenceBatch seq = full_batch(2, l_max);
    seq.valid_len[1] = 1 + trial % 3;
    for (std::size_t p = seq.valid_len[1]; p < l_max; ++p) seq.item_ids[l_max + p] = 0;
    Tape tape;
    auto bias = lens::tcpb_bias(tape, store, c, 0, tape.constant(cond), seq);
    const Tensor& w = store.at("lens.tcpb.0.w");
    const Tensor& pos = store.at("lens.tcpb.0.pos");
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t i = 0; i < q; ++i) {
        for (std::size_t p = 0; p < l_max; ++p) {
          double expect = 0.0;
          if (p < seq.valid_len[b]) {
            const std::size_t col = l_max - seq.valid_len[b] + p;
            for (std::size_t k = 0; k < r; ++k) {
              double m = 0.0;
              for (std::size_t e = 0; e < d; ++e) m += w.at({i * r + k, e}) * cond.at({b, e});
              expect += m * pos.at({col, k});
            }
          }
          CHECK(bias.value().at({b, i, p}) == expect);
        }
      }
    }
  }
}

TEST_CASE("tcpb is linear in the condition") {
  std::mt19937_64 rng(8);
  auto c = lens_config(3, 4, 2, 5, ConditionSource::kItem);
  ParameterStore store;
  lens::declare_params(store, c);
  testing::randomize(store, rng, 1.0);
  Tensor cond = random_tensor(rng, {2, 4});
  Tensor scaled = cond;
  for (double& v : scaled.values()) v *= 4.0;  // power of two keeps the check exact
  Tape tape;
  auto a = lens::tcpb_bias(tape, store, c, 0, tape.constant(cond), full_batch(2, 5));
  auto b = lens::tcpb_bias(tape, store, c, 0, tape.constant(scaled), full_batch(2, 5));
  for (std::size_t k = 0; k < a.numel(); ++k) CHECK(b.value()[k] == 4.0 * a.value()[k]);
}

TEST_CASE("parameter counts for the reference configuration") {
  ModelConfig c;
  c.q = 12;
  c.d_model = 64;
  c.l_max = 200;
  c.n_layers = 4;
  c.lens.rank = 8;
  auto item = lens::param_count(c, c.d_model);
  CHECK(item.query_pos == 9600);
  CHECK(item.tcqg == 49152);
  CHECK(item.tcpb == 30976);
  CHECK(item.tcpb_tabulated == 30976);
  auto both = lens::param_count(c, 2 * c.d_model);
  CHECK(both.tcqg == 98304);
  CHECK(both.tcpb == 4 * (12 * 8 * 128 + 200 * 8));
  CHECK(both.tcpb_tabulated == 30976);
}

TEST_CASE("declared parameter sizes agree with the count reporter") {
  for (auto src : {ConditionSource::kItem, ConditionSource::kItemSeq}) {
    auto c = lens_config(3, 4, 2, 7, src);
    c.n_layers = 3;
    ParameterStore store;
    lens::declare_params(store, c);
    posbias::declare_params(store, c);
    auto n = lens::param_count(c);
    CHECK(store.size_with_prefix("lens.gate") == n.tcqg);
    CHECK(store.size_with_prefix("lens.tcpb") == n.tcpb);
    CHECK(store.size_with_prefix("pos.query") == n.query_pos);
  }
}
