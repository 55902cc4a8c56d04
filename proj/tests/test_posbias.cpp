#include <random>

#include "doctest.h"
#include "lensctr/posbias.hpp"
#include "test_support.hpp"

using namespace lensctr;
using num::Tape;
using num::Tensor;

namespace {

SequenceBatch lengths_batch(std::vector<std::size_t> lens, std::size_t width) {
  SequenceBatch s;
  s.batch = lens.size();
  s.width = width;
  s.item_ids.assign(s.batch * width, kPaddingItem);
  s.action_types.assign(s.batch * width, kPaddingAction);
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t p = 0; p < lens[b]; ++p) {
      s.item_ids[b * width + p] = 1;
      s.action_types[b * width + p] = 0;
    }
  }
  s.valid_len = std::move(lens);
  return s;
}

ModelConfig pos_config(PositionMechanism m, std::size_t q, std::size_t l_max) {
  ModelConfig c;
  c.position = m;
  c.q = q;
  c.l_max = l_max;
  c.n_layers = 2;
  return c;
}

}  // namespace

TEST_CASE("right_align_columns") {
  auto r = posbias::right_align_columns(3, 5);
  CHECK(r.begin == 2);
  CHECK(r.end == 5);
  auto all = posbias::right_align_columns(5, 5);
  CHECK(all.begin == 0);
  CHECK(all.size() == 5);
  CHECK(posbias::right_align_columns(0, 5).size() == 0);
  CHECK_THROWS_AS(posbias::right_align_columns(6, 5), std::invalid_argument);
}

TEST_CASE("static bias is zero at initialisation") {
  for (auto m : {PositionMechanism::kGlobal, PositionMechanism::kQuerySpecific}) {
    auto c = pos_config(m, 3, 6);
    ParameterStore store;
    posbias::declare_params(store, c);
    store.initialize(42);
    Tape tape;
    auto bias = posbias::static_bias(tape, store, c, 1, lengths_batch({6, 2, 0}, 6));
    REQUIRE(bias.shape() == num::Shape{3, 3, 6});
    for (double v : bias.value().values()) CHECK(v == 0.0);
  }
}

TEST_CASE("none and abs_emb return no static bias") {
  for (auto m : {PositionMechanism::kNone, PositionMechanism::kAbsEmb}) {
    auto c = pos_config(m, 2, 4);
    ParameterStore store;
    posbias::declare_params(store, c);
    Tape tape;
    CHECK_FALSE(posbias::static_bias(tape, store, c, 0, lengths_batch({2}, 4)).valid());
  }
}

TEST_CASE("global bias rows are identical across queries") {
  auto c = pos_config(PositionMechanism::kGlobal, 4, 5);
  ParameterStore store;
  posbias::declare_params(store, c);
  std::mt19937_64 rng(2);
  testing::randomize(store, rng);
  Tape tape;
  auto bias = posbias::static_bias(tape, store, c, 1, lengths_batch({3, 5}, 5));
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t i = 1; i < 4; ++i) {
      for (std::size_t j = 0; j < 5; ++j) CHECK(bias.value().at({b, i, j}) == bias.value().at({b, 0, j}));
    }
  }
}

TEST_CASE("hand-set query bias maps the two valid tokens onto the last two columns") {
  auto c = pos_config(PositionMechanism::kQuerySpecific, 2, 4);
  ParameterStore store;
  posbias::declare_params(store, c);
  Tensor& bpos = store.at("pos.query");  // [N_L, q, L_max]
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 4; ++j) bpos.at({0, i, j}) = 10.0 * static_cast<double>(i) + static_cast<double>(j) + 1;
  }
  Tape tape;
  // Sequence stored left-aligned in a width-4 batch; slots 2,3 are padding.
  auto bias = posbias::static_bias(tape, store, c, 0, lengths_batch({2}, 4));
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(bias.value().at({0, i, 0}) == bpos.at({0, i, 2}));
    CHECK(bias.value().at({0, i, 1}) == bpos.at({0, i, 3}));
    CHECK(bias.value().at({0, i, 2}) == 0.0);
    CHECK(bias.value().at({0, i, 3}) == 0.0);
  }
  // The slice of the table actually used: columns 0,1 untouched.
  std::vector<std::int64_t> cols = posbias::aligned_columns(lengths_batch({2}, 4), 4);
  CHECK(cols == std::vector<std::int64_t>{2, 3, -1, -1});
}

TEST_CASE("prepending padding does not move a valid token's bias") {
  auto c = pos_config(PositionMechanism::kQuerySpecific, 2, 8);
  ParameterStore store;
  posbias::declare_params(store, c);
  std::mt19937_64 rng(9);
  testing::randomize(store, rng);
  Tape tape;
  auto narrow = posbias::static_bias(tape, store, c, 1, lengths_batch({3}, 3));
  auto wide = posbias::static_bias(tape, store, c, 1, lengths_batch({3}, 8));
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) CHECK(narrow.value().at({0, i, j}) == wide.value().at({0, i, j}));
  }
}

TEST_CASE("bias gradient touches only columns used by valid tokens") {
  auto c = pos_config(PositionMechanism::kQuerySpecific, 2, 6);
  ParameterStore store;
  posbias::declare_params(store, c);
  store.set_requires_grad(true);
  Tape tape;
  auto bias = posbias::static_bias(tape, store, c, 0, lengths_batch({2, 3}, 3));
  tape.backward(num::sum_all(bias));
  const auto g = store.at("pos.query").grad();
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 6; ++j) {
        double expect = 0.0;
        if (l == 0 && j >= 3) expect = (j >= 4) ? 2.0 : 1.0;
        CHECK(g[(l * 2 + i) * 6 + j] == expect);
      }
    }
  }
}

TEST_CASE("abs_emb adds the right-aligned position row to each valid token") {
  auto c = pos_config(PositionMechanism::kAbsEmb, 2, 5);
  c.d_model = 3;
  ParameterStore store;
  posbias::declare_params(store, c);
  store.initialize(1);
  Tape tape;
  auto seq = lengths_batch({2, 0}, 2);
  auto out = posbias::add_absolute_positions(tape, store, c, tape.constant(Tensor({2, 2, 3})), seq);
  const Tensor& table = store.at("pos.abs");
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(out.value().at({0, 0, j}) == table.at({3, j}));
    CHECK(out.value().at({0, 1, j}) == table.at({4, j}));
    CHECK(out.value().at({1, 0, j}) == 0.0);
  }
}

TEST_CASE("layer_bias_matrix exports rows per query") {
  auto c = pos_config(PositionMechanism::kGlobal, 3, 4);
  ParameterStore store;
  posbias::declare_params(store, c);
  store.at("pos.global").at({1, 2}) = 0.5;
  Tensor m = posbias::layer_bias_matrix(store, c, 1);
  CHECK(m.shape() == num::Shape{3, 4});
  for (std::size_t i = 0; i < 3; ++i) CHECK(m.at({i, 2}) == 0.5);
  CHECK_THROWS(posbias::layer_bias_matrix(store, c, 2));
}
