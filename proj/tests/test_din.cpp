#include <cmath>
#include <random>

#include "doctest.h"
#include "lensctr/din.hpp"
#include "lensctr/nn.hpp"
#include "test_support.hpp"

using namespace lensctr;
using num::Tape;
using num::Tensor;

namespace {

ModelConfig din_config() {
  ModelConfig c;
  c.family = ModelFamily::kDin;
  c.d_model = 3;
  c.l_max = 5;
  c.mlp_head = {6, 1};
  c.vocab.n_items = 10;
  c.vocab.cat_cardinalities = {4};
  c.vocab.n_dense = 1;
  return c;
}

Tensor random_tensor(std::mt19937_64& rng, num::Shape shape) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> d(0.0, 1.0);
  for (double& v : t.values()) v = d(rng);
  return t;
}

}  // namespace

TEST_CASE("din attention: single valid token is returned as is") {
  auto c = din_config();
  DinModel model(c);
  std::mt19937_64 rng(1);
  testing::randomize(model.params(), rng);
  Tensor tokens = random_tensor(rng, {1, 3, 3});
  for (std::size_t p = 1; p < 3; ++p)
    for (std::size_t j = 0; j < 3; ++j) tokens.at({0, p, j}) = 0.0;
  Tape tape;
  std::vector<std::size_t> len{1};
  auto out = din::din_attention(tape, model.params(), c, tape.constant(random_tensor(rng, {1, 3})),
                                tape.constant(tokens), len);
  for (std::size_t j = 0; j < 3; ++j) CHECK(out.value()[j] == tokens.at({0, 0, j}));
}

TEST_CASE("din attention: identical tokens give that token") {
  auto c = din_config();
  DinModel model(c);
  std::mt19937_64 rng(2);
  testing::randomize(model.params(), rng);
  Tensor tokens({1, 4, 3});
  for (std::size_t p = 0; p < 4; ++p) {
    tokens.at({0, p, 0}) = 0.5;
    tokens.at({0, p, 1}) = -1.0;
    tokens.at({0, p, 2}) = 2.0;
  }
  Tape tape;
  std::vector<std::size_t> len{4};
  auto out = din::din_attention(tape, model.params(), c, tape.constant(random_tensor(rng, {1, 3})),
                                tape.constant(tokens), len);
  CHECK(out.value()[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(out.value()[1] == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(out.value()[2] == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("din attention: empty sequence gives zero vector") {
  auto c = din_config();
  DinModel model(c);
  std::mt19937_64 rng(3);
  testing::randomize(model.params(), rng);
  Tape tape;
  std::vector<std::size_t> len{0};
  Tensor weights;
  auto out = din::din_attention(tape, model.params(), c, tape.constant(random_tensor(rng, {1, 3})),
                                tape.constant(Tensor({1, 2, 3})), len, &weights);
  for (double v : out.value().values()) CHECK(v == 0.0);
  for (double v : weights.values()) CHECK(v == 0.0);
}

TEST_CASE("din attention matches a loop oracle") {
  auto c = din_config();
  c.din.attn_mlp = {4, 1};
  DinModel model(c);
  std::mt19937_64 rng(4);
  testing::randomize(model.params(), rng);
  const std::size_t b = 2, w = 3, d = 3;
  Tensor target = random_tensor(rng, {b, d}), tokens = random_tensor(rng, {b, w, d});
  std::vector<std::size_t> len{3, 2};
  for (std::size_t j = 0; j < d; ++j) tokens.at({1, 2, j}) = 0.0;
  Tape tape;
  auto out = din::din_attention(tape, model.params(), c, tape.constant(target), tape.constant(tokens), len);

  const ParameterStore& s = model.params();
  const Tensor &w0 = s.at("din.score.0.w"), &b0 = s.at("din.score.0.b");
  const Tensor &w1 = s.at("din.score.1.w"), &b1 = s.at("din.score.1.b");
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<double> score(len[i]);
    for (std::size_t p = 0; p < len[i]; ++p) {
      double feat[12];
      for (std::size_t j = 0; j < d; ++j) {
        const double x = tokens.at({i, p, j}), t = target.at({i, j});
        feat[j] = x;
        feat[d + j] = t;
        feat[2 * d + j] = x * t;
        feat[3 * d + j] = x - t;
      }
      double z = b1[0];
      for (std::size_t h = 0; h < 4; ++h) {
        double a = b0[h];
        for (std::size_t k = 0; k < 12; ++k) a += feat[k] * w0.at({k, h});
        z += std::max(a, 0.0) * w1.at({h, 0});
      }
      score[p] = z;
    }
    double m = *std::max_element(score.begin(), score.end()), total = 0.0;
    for (double& v : score) total += (v = std::exp(v - m));
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < len[i]; ++p) acc += score[p] / total * tokens.at({i, p, j});
      CHECK(out.value().at({i, j}) == doctest::Approx(acc).epsilon(1e-13));
    }
  }
}

TEST_CASE("din full_side changes only the head input width") {
  auto c = din_config();
  DinModel full(c);
  c.din.full_side = false;
  DinModel narrow(c);
  CHECK(full.params().at("head.0.w").shape() == num::Shape{2 * 3 + 2 * 3, 6});
  CHECK(narrow.params().at("head.0.w").shape() == num::Shape{2 * 3, 6});
  CHECK(full.params().total_size() - narrow.params().total_size() == 2 * 3 * 6);
}

TEST_CASE("din: zero head gives probability 0.5; padding invariance; gradient check") {
  auto c = din_config();
  DinModel model(c);
  model.initialize(3);
  std::mt19937_64 rng(5);
  auto records = testing::random_records(rng, 6, c);
  for (Parameter& p : model.params().entries()) {
    if (p.name.rfind("head.", 0) == 0) std::fill(p.value.values().begin(), p.value.values().end(), 0.0);
  }
  for (double p : model.predict(make_batch(records, c.l_max))) CHECK(p == 0.5);

  testing::randomize(model.params(), rng, 0.4);
  CHECK(model.predict(make_batch(records, c.l_max)) == model.predict(make_batch(records, c.l_max, true)));

  records[0].seq_items.clear();
  records[0].seq_actions.clear();
  Batch batch = make_batch(records, c.l_max);
  auto report = grad_check(
      [&](Tape& tape) { return num::bce_with_logits(model.logits(tape, batch), batch.labels); }, model.params());
  CHECK(report.max_rel_error <= 1e-5);
}

TEST_CASE("make_model picks the family") {
  auto c = din_config();
  auto m = make_model(c);
  CHECK(dynamic_cast<DinModel*>(m.get()) != nullptr);
  c.lens.enabled = true;
  CHECK_THROWS_AS(make_model(c), ValidationError);
}
