#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "lensctr/backbone.hpp"
#include "lensctr/din.hpp"
#include "lensctr/embeddings.hpp"
#include "lensctr/nn.hpp"
#include "test_support.hpp"

using namespace lensctr;
using num::Tape;
using num::Tensor;
using num::Var;

namespace {

Tensor random_tensor(std::mt19937_64& rng, num::Shape shape, double std = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> d(0.0, std);
  for (double& v : t.values()) v = d(rng);
  return t;
}

ModelConfig attn_config(std::size_t q, std::size_t d, std::size_t heads) {
  ModelConfig c;
  c.q = q;
  c.d_model = d;
  c.heads = heads;
  c.n_layers = 1;
  c.l_max = 8;
  return c;
}

ParameterStore backbone_store(const ModelConfig& c, std::uint64_t seed) {
  ParameterStore store;
  backbone::declare_params(store, c);
  std::mt19937_64 rng(seed);
  testing::randomize(store, rng, 0.5);
  return store;
}

ModelConfig random_config(std::mt19937_64& rng) {
  ModelConfig c;
  const std::size_t heads = 1 + rng() % 2;
  c.heads = heads;
  c.d_model = heads * (1 + rng() % 3);
  c.q = 1 + rng() % 3;
  c.n_layers = 1 + rng() % 2;
  c.l_max = 2 + rng() % 7;
  c.mlp_head = (rng() % 2) ? std::vector<std::size_t>{6, 1} : std::vector<std::size_t>{5, 3, 1};
  c.switches.seq_pooling_tokens = rng() % 2;
  c.switches.ns_tokens_in_boosting = rng() % 2;
  c.switches.per_query_ffn = rng() % 2;
  c.vocab.n_items = 5 + rng() % 10;
  for (std::size_t k = rng() % 3; k > 0; --k) c.vocab.cat_cardinalities.push_back(2 + rng() % 3);
  c.vocab.n_dense = rng() % 2;
  c.lens.rank = 1 + rng() % 3;
  c.lens.condition = (rng() % 2) ? ConditionSource::kItem : ConditionSource::kItemSeq;
  c.lens.tcqg = true;
  c.lens.tcpb = true;
  return c;
}

}  // namespace

TEST_CASE("query_gen: zero weights give zero queries") {
  auto c = attn_config(3, 4, 2);
  ParameterStore store;
  backbone::declare_params(store, c);
  Tape tape;
  std::mt19937_64 rng(1);
  auto q = backbone::query_gen(tape, store, c, tape.constant(random_tensor(rng, {2, c.fullside_dim()})));
  REQUIRE(q.shape() == num::Shape{2, 3, 4});
  for (double v : q.value().values()) CHECK(v == 0.0);
}

TEST_CASE("query_gen: scalar affine example") {
  ModelConfig c = attn_config(2, 1, 1);
  ParameterStore store;
  nn::declare_linear(store, "qgen", 1, 2);
  store.at("qgen.w")[0] = 1.5;
  store.at("qgen.w")[1] = -3.0;
  Tape tape;
  Tensor f({1, 1});
  f[0] = 2.0;
  auto q = backbone::query_gen(tape, store, c, tape.constant(f));
  REQUIRE(q.shape() == num::Shape{1, 2, 1});
  CHECK(q.value()[0] == 3.0);
  CHECK(q.value()[1] == -6.0);
}

TEST_CASE("cross attention: one valid token takes all the weight whatever the biases") {
  auto c = attn_config(3, 4, 2);
  auto store = backbone_store(c, 2);
  std::mt19937_64 rng(3);
  Tape tape;
  std::vector<std::size_t> len{1, 1};
  std::vector<Var> biases{tape.constant(random_tensor(rng, {2, 3, 4}, 5.0))};
  Tensor weights;
  backbone::cross_attention_layer(tape, store, c, 0, tape.constant(random_tensor(rng, {2, 3, 4})),
                                  tape.constant(random_tensor(rng, {2, 4, 4})), len, biases, &weights);
  REQUIRE(weights.shape() == num::Shape{2, 2, 3, 4});
  for (std::size_t r = 0; r < 2 * 2 * 3; ++r) {
    CHECK(weights[r * 4] == 1.0);
    for (std::size_t j = 1; j < 4; ++j) CHECK(weights[r * 4 + j] == 0.0);
  }
}

TEST_CASE("cross attention: a constant shift of a bias row leaves the weights unchanged") {
  auto c = attn_config(2, 4, 2);
  auto store = backbone_store(c, 4);
  std::mt19937_64 rng(5);
  Tensor bias = random_tensor(rng, {1, 2, 5});
  Tensor shifted = bias;
  for (std::size_t j = 0; j < 5; ++j) shifted.at({0, 1, j}) += 3.25;
  Tensor q = random_tensor(rng, {1, 2, 4}), s = random_tensor(rng, {1, 5, 4});
  std::vector<std::size_t> len{4};
  Tensor w1, w2;
  Tape tape;
  std::vector<Var> b1{tape.constant(bias)}, b2{tape.constant(shifted)};
  backbone::cross_attention_layer(tape, store, c, 0, tape.constant(q), tape.constant(s), len, b1, &w1);
  backbone::cross_attention_layer(tape, store, c, 0, tape.constant(q), tape.constant(s), len, b2, &w2);
  for (std::size_t k = 0; k < w1.numel(); ++k) CHECK(w1[k] == doctest::Approx(w2[k]).epsilon(1e-13));
}

TEST_CASE("cross attention: scalar oracle for q=1, L=2, one head") {
  ModelConfig c = attn_config(1, 1, 1);
  ParameterStore store;
  backbone::declare_params(store, c);
  store.initialize(0);  // LN gain 1, bias 0
  auto set = [&](const char* name, double w, double b) {
    store.at(std::string("layer0.xattn.") + name + ".w")[0] = w;
    store.at(std::string("layer0.xattn.") + name + ".b")[0] = b;
  };
  set("q", 0.7, 0.1);
  set("k", -1.2, 0.3);
  set("v", 2.0, -0.5);
  set("o", 0.5, 0.25);
  // D = 1: LayerNorm of a single value is its beta (0). Use the LN beta to feed a query.
  store.at("layer0.xattn.ln.b")[0] = 1.5;
  const double q0 = -0.4, s0 = 0.8, s1 = -1.1, bias0 = 0.3, bias1 = -0.2;
  Tensor q({1, 1, 1}), s({1, 2, 1}), bias({1, 1, 2});
  q[0] = q0; s[0] = s0; s[1] = s1; bias[0] = bias0; bias[1] = bias1;
  Tape tape;
  std::vector<std::size_t> len{2};
  std::vector<Var> biases{tape.constant(bias)};
  auto out = backbone::cross_attention_layer(tape, store, c, 0, tape.constant(q), tape.constant(s), len, biases);

  const double qn = 1.5;  // LN output
  const double qp = 0.7 * qn + 0.1;
  const double k0 = -1.2 * s0 + 0.3, k1 = -1.2 * s1 + 0.3;
  const double v0 = 2.0 * s0 - 0.5, v1 = 2.0 * s1 - 0.5;
  const double l0 = qp * k0 + bias0, l1 = qp * k1 + bias1;
  const double m = std::max(l0, l1);
  const double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
  const double ctx = (e0 * v0 + e1 * v1) / (e0 + e1);
  const double expect = q0 + 0.5 * ctx + 0.25;
  CHECK(out.value()[0] == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("cross attention: an empty sequence leaves only the output bias") {
  auto c = attn_config(2, 4, 2);
  auto store = backbone_store(c, 7);
  std::mt19937_64 rng(8);
  Tensor q = random_tensor(rng, {2, 2, 4});
  std::vector<std::size_t> len{0, 3};
  Tensor weights;
  Tape tape;
  auto out = backbone::cross_attention_layer(tape, store, c, 0, tape.constant(q),
                                             tape.constant(random_tensor(rng, {2, 3, 4})), len, {}, &weights);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(out.value().at({0, i, j}) == doctest::Approx(q.at({0, i, j}) + store.at("layer0.xattn.o.b")[j]));
    }
  }
  for (std::size_t k = 0; k < 2 * 2 * 3; ++k) CHECK(weights[k] == 0.0);  // sample 0 rows
  for (std::size_t r = 0; r < 2 * 2; ++r) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 3; ++j) sum += weights[12 + r * 3 + j];
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("query boosting: a single query attends to itself") {
  auto c = attn_config(1, 2, 1);
  auto store = backbone_store(c, 9);
  std::mt19937_64 rng(10);
  Tensor q = random_tensor(rng, {1, 1, 2});
  Tape tape;
  auto out = backbone::query_boosting(tape, store, c, 0, tape.constant(q), Var{});

  Tape ref;
  auto x = ref.constant(q);
  auto normed = nn::layer_norm(ref, store, "layer0.boost.ln", x);
  auto v = nn::linear(ref, store, "layer0.boost.v", normed);
  auto y = num::add(x, nn::linear(ref, store, "layer0.boost.o", v));
  auto h = nn::layer_norm(ref, store, "layer0.ffn.ln", y);
  auto ffn = nn::linear(ref, store, "layer0.ffn.2", num::relu(nn::linear(ref, store, "layer0.ffn.1", h)));
  auto expect = num::add(y, ffn);
  for (std::size_t k = 0; k < 2; ++k) CHECK(out.value()[k] == doctest::Approx(expect.value()[k]).epsilon(1e-14));
}

TEST_CASE("query boosting with a shared FFN is permutation-equivariant") {
  auto c = attn_config(3, 4, 2);
  auto store = backbone_store(c, 11);
  std::mt19937_64 rng(12);
  Tensor q = random_tensor(rng, {2, 3, 4});
  Tensor ns = random_tensor(rng, {2, 2, 4});
  const std::size_t perm[3] = {2, 0, 1};
  Tensor qp({2, 3, 4});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) qp.at({b, i, j}) = q.at({b, perm[i], j});
  Tape tape;
  for (bool with_ns : {false, true}) {
    Var nsv = with_ns ? tape.constant(ns) : Var{};
    auto a = backbone::query_boosting(tape, store, c, 0, tape.constant(q), nsv);
    auto b = backbone::query_boosting(tape, store, c, 0, tape.constant(qp), nsv);
    for (std::size_t s = 0; s < 2; ++s)
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j)
          CHECK(b.value().at({s, i, j}) == doctest::Approx(a.value().at({s, perm[i], j})).epsilon(1e-13));
  }
}

TEST_CASE("per-query FFN gives each query its own weights") {
  auto c = attn_config(2, 2, 1);
  c.switches.per_query_ffn = true;
  auto store = backbone_store(c, 13);
  CHECK(store.at("layer0.ffn.1.w").shape() == num::Shape{2, 2, 4});
  std::mt19937_64 rng(14);
  Tensor q = random_tensor(rng, {1, 1, 2});
  Tensor twice({1, 2, 2});
  for (std::size_t j = 0; j < 2; ++j) twice.at({0, 0, j}) = twice.at({0, 1, j}) = q[j];
  Tape tape;
  auto out = backbone::query_boosting(tape, store, c, 0, tape.constant(twice), Var{});
  // Identical inputs, different FFN weights: outputs differ.
  CHECK(out.value().at({0, 0, 0}) != out.value().at({0, 1, 0}));

  // Copying query 0's FFN slice into query 1 makes them equal again.
  for (const char* name : {"layer0.ffn.1.w", "layer0.ffn.1.b", "layer0.ffn.2.w", "layer0.ffn.2.b"}) {
    Tensor& t = store.at(name);
    const std::size_t half = t.numel() / 2;
    std::copy_n(t.ptr(), half, t.ptr() + half);
  }
  Tape tape2;
  auto same = backbone::query_boosting(tape2, store, c, 0, tape2.constant(twice), Var{});
  CHECK(same.value().at({0, 0, 0}) == doctest::Approx(same.value().at({0, 1, 0})).epsilon(1e-14));
}

TEST_CASE("seq pooling tokens of an empty sequence are the projection biases") {
  auto c = attn_config(2, 3, 1);
  c.switches.seq_pooling_tokens = true;
  auto store = backbone_store(c, 15);
  Tape tape;
  std::vector<std::size_t> len{0};
  std::mt19937_64 rng(16);
  auto pool = backbone::seq_pooling_tokens(tape, store, c, tape.constant(random_tensor(rng, {1, 2, 3})), len);
  REQUIRE(pool.shape() == num::Shape{1, 2, 3});
  for (std::size_t k = 0; k < 6; ++k) CHECK(pool.value()[k] == store.at("pool.b")[k]);
}

TEST_CASE("k_pool = 0 is the same model as pooling switched off") {
  std::mt19937_64 rng(17);
  ModelConfig off = testing::tiny_lens_config(ConditionSource::kItem);
  ModelConfig zero = off;
  zero.switches.seq_pooling_tokens = true;
  zero.switches.k_pool = 0;
  LatentQueryModel a(off), b(zero);
  a.initialize(3);
  b.initialize(3);
  CHECK(a.params().total_size() == b.params().total_size());
  auto records = testing::random_records(rng, 5, off);
  Batch batch = make_batch(records, off.l_max);
  CHECK(a.predict(batch) == b.predict(batch));
}

TEST_CASE("predict: zero head gives logit 0; output has one entry per sample") {
  for (std::size_t q : {1u, 3u}) {
    auto c = attn_config(q, 4, 2);
    ParameterStore store;
    backbone::declare_params(store, c);
    Tape tape;
    std::mt19937_64 rng(q);
    auto z = backbone::predict(tape, store, c, tape.constant(random_tensor(rng, {5, q, 4})),
                               tape.constant(random_tensor(rng, {5, c.fullside_dim()})));
    REQUIRE(z.shape() == num::Shape{5});
    for (double v : z.value().values()) CHECK(v == 0.0);
  }
}

TEST_CASE("forward: probabilities in (0,1) for every position mechanism") {
  std::mt19937_64 rng(18);
  for (auto m : {PositionMechanism::kNone, PositionMechanism::kGlobal, PositionMechanism::kAbsEmb,
                 PositionMechanism::kQuerySpecific}) {
    ModelConfig c = testing::tiny_lens_config(ConditionSource::kItem);
    c.lens.enabled = false;
    c.position = m;
    auto model = make_model(c);
    model->initialize(42);
    testing::randomize(model->params(), rng, 0.3);
    auto records = testing::random_records(rng, 8, c);
    auto p = model->predict(make_batch(records, c.l_max));
    for (double v : p) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("zero-initialised LENS reproduces the QueryPos reference") {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 25; ++trial) {
    ModelConfig ref_cfg = random_config(rng);
    ModelConfig lens_cfg = ref_cfg;
    ref_cfg.lens.enabled = false;
    lens_cfg.lens.enabled = true;
    lens_cfg.lens.tcqg = trial % 3 != 1;
    lens_cfg.lens.tcpb = trial % 3 != 2;
    LatentQueryModel ref(ref_cfg), lens(lens_cfg);
    ref.initialize(100 + trial);
    testing::randomize(ref.params(), rng, 0.4);
    lens.initialize(100 + trial);
    testing::copy_shared(ref.params(), lens.params());
    auto records = testing::random_records(rng, 6, ref_cfg);
    Batch batch = make_batch(records, ref_cfg.l_max);
    CHECK(testing::max_abs_diff(ref.predict(batch), lens.predict(batch)) <= 1e-10);
  }
}

TEST_CASE("shared parameters initialise identically with and without LENS") {
  ModelConfig base = testing::tiny_lens_config(ConditionSource::kItemSeq);
  ModelConfig plain = base;
  plain.lens.enabled = false;
  LatentQueryModel a(plain), b(base);
  a.initialize(42);
  b.initialize(42);
  for (const Parameter& p : a.params().entries()) {
    const auto x = p.value.values();
    const auto y = b.params().at(p.name).values();
    CHECK(std::equal(x.begin(), x.end(), y.begin()));
  }
  std::mt19937_64 rng(20);
  auto records = testing::random_records(rng, 7, base);
  Batch batch = make_batch(records, base.l_max);
  CHECK(testing::max_abs_diff(a.predict(batch), b.predict(batch)) <= 1e-10);
}

TEST_CASE("appending padding never changes the forward output") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig c = random_config(rng);
    c.lens.enabled = trial % 2 == 0;
    c.position = static_cast<PositionMechanism>(trial % 4);
    if (c.lens.enabled) c.position = PositionMechanism::kQuerySpecific;
    auto model = make_model(c);
    model->initialize(trial);
    testing::randomize(model->params(), rng, 0.4);
    auto records = testing::random_records(rng, 5, c);
    auto tight = model->predict(make_batch(records, c.l_max, false));
    auto padded = model->predict(make_batch(records, c.l_max, true));
    CHECK(tight == padded);
  }
}

TEST_CASE("attention rows sum to one over valid keys; padded keys get zero") {
  std::mt19937_64 rng(22);
  ModelConfig c = testing::tiny_lens_config(ConditionSource::kItemSeq);
  c.n_layers = 2;
  c.switches.seq_pooling_tokens = true;
  LatentQueryModel model(c);
  model.initialize(1);
  testing::randomize(model.params(), rng, 0.5);
  auto records = testing::random_records(rng, 9, c);
  Batch batch = make_batch(records, c.l_max, true);
  Tape tape;
  ForwardTrace trace;
  model.logits(tape, batch, &trace);
  REQUIRE(trace.attention.size() == 2);
  for (const Tensor& w : trace.attention) {
    const std::size_t width = w.shape()[3], rows = w.shape()[1] * w.shape()[2];
    for (std::size_t b = 0; b < batch.size; ++b) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* row = w.ptr() + (b * rows + r) * width;
        double sum = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
          if (j < batch.seq.valid_len[b]) sum += row[j];
          else CHECK(row[j] == 0.0);
        }
        if (batch.seq.valid_len[b] > 0) CHECK(std::abs(sum - 1.0) <= 1e-9);
      }
    }
  }
}

TEST_CASE("gradient check on the tiny LENS config") {
  for (auto src : {ConditionSource::kItem, ConditionSource::kItemSeq}) {
    std::mt19937_64 rng(23);
    ModelConfig c = testing::tiny_lens_config(src);
    c.mlp_head = {6, 1};
    LatentQueryModel model(c);
    model.initialize(5);
    testing::randomize(model.params(), rng, 0.3);
    auto records = testing::random_records(rng, 4, c);
    records[0].seq_items.clear();
    records[0].seq_actions.clear();
    Batch batch = make_batch(records, c.l_max);
    auto report = grad_check(
        [&](Tape& tape) { return num::bce_with_logits(model.logits(tape, batch), batch.labels); }, model.params());
    INFO(report.worst_param << "[" << report.worst_index << "]");
    CHECK(report.max_rel_error <= 1e-5);
  }
}

TEST_CASE("gradient check with every capacity switch on") {
  std::mt19937_64 rng(24);
  ModelConfig c = testing::tiny_lens_config(ConditionSource::kItemSeq);
  c.mlp_head = {5, 1};
  c.switches.seq_pooling_tokens = true;
  c.switches.ns_tokens_in_boosting = true;
  c.switches.per_query_ffn = true;
  LatentQueryModel model(c);
  model.initialize(6);
  testing::randomize(model.params(), rng, 0.3);
  auto records = testing::random_records(rng, 3, c, 1);
  Batch batch = make_batch(records, c.l_max);
  auto report = grad_check(
      [&](Tape& tape) { return num::bce_with_logits(model.logits(tape, batch), batch.labels); }, model.params());
  INFO(report.worst_param << "[" << report.worst_index << "]");
  CHECK(report.max_rel_error <= 1e-5);
}

TEST_CASE("gradient check for global and absolute position mechanisms") {
  for (auto m : {PositionMechanism::kGlobal, PositionMechanism::kAbsEmb}) {
    std::mt19937_64 rng(25);
    ModelConfig c = testing::tiny_lens_config(ConditionSource::kItem);
    c.mlp_head = {5, 1};
    c.lens.enabled = false;
    c.position = m;
    LatentQueryModel model(c);
    model.initialize(7);
    testing::randomize(model.params(), rng, 0.3);
    auto records = testing::random_records(rng, 3, c, 1);
    Batch batch = make_batch(records, c.l_max);
    auto report = grad_check(
        [&](Tape& tape) { return num::bce_with_logits(model.logits(tape, batch), batch.labels); }, model.params());
    CHECK(report.max_rel_error <= 1e-5);
  }
}

TEST_CASE("forward is deterministic") {
  std::mt19937_64 rng(26);
  ModelConfig c = testing::tiny_lens_config(ConditionSource::kItemSeq);
  auto records = testing::random_records(rng, 6, c);
  Batch batch = make_batch(records, c.l_max);
  LatentQueryModel a(c), b(c);
  a.initialize(9);
  b.initialize(9);
  CHECK(a.predict(batch) == b.predict(batch));
}

TEST_CASE("invalid configs are rejected") {
  ModelConfig c = testing::tiny_lens_config(ConditionSource::kItem);
  c.heads = 3;
  CHECK_THROWS_AS(LatentQueryModel{c}, ValidationError);
  c = testing::tiny_lens_config(ConditionSource::kItem);
  c.position = PositionMechanism::kGlobal;
  CHECK_THROWS_AS(LatentQueryModel{c}, ValidationError);
  c = testing::tiny_lens_config(ConditionSource::kItem);
  c.lens.rank = 0;
  CHECK_THROWS_AS(LatentQueryModel{c}, ValidationError);
  c = testing::tiny_lens_config(ConditionSource::kAuto);
  CHECK_THROWS_AS(LatentQueryModel{c}, ValidationError);
  c.samples_per_item = 80;
  LatentQueryModel ok(c);
  CHECK(ok.params().at("lens.gate.w").shape()[1] == c.d_model);
}
