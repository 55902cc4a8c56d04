#include "lensctr/diagnostics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include "lensctr/posbias.hpp"

namespace lensctr::diag {

using num::Tape;
using num::Tensor;
using num::Var;

ModelConfig tiny_config(ConditionSource source) {
  ModelConfig c;
  c.q = 2;
  c.d_model = 4;
  c.heads = 2;
  c.l_max = 6;
  c.n_layers = 1;
  c.mlp_head = {6, 1};
  c.lens.enabled = true;
  c.lens.rank = 2;
  c.lens.condition = source;
  c.vocab.n_items = 12;
  c.vocab.cat_cardinalities = {3};
  c.vocab.n_dense = 1;
  return c;
}

std::vector<SampleRecord> random_records(std::mt19937_64& rng, std::size_t n, const ModelConfig& c,
                                         std::size_t min_len) {
  std::vector<SampleRecord> out(n);
  std::uniform_int_distribution<std::int64_t> item(1, static_cast<std::int64_t>(c.vocab.n_items));
  std::uniform_int_distribution<std::int64_t> action(0, kActionCount - 1);
  std::uniform_int_distribution<std::size_t> len(std::min(min_len, c.l_max), c.l_max);
  std::normal_distribution<double> dense(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    SampleRecord& r = out[i];
    r.user_id = static_cast<std::int64_t>(i);
    r.item_id = item(rng);
    r.label = static_cast<int>(rng() % 2);
    const std::size_t l = len(rng);
    for (std::size_t p = 0; p < l; ++p) {
      r.seq_items.push_back(item(rng));
      r.seq_actions.push_back(action(rng));
    }
    for (std::size_t card : c.vocab.cat_cardinalities) r.cat_fields.push_back(static_cast<std::int64_t>(rng() % card));
    for (std::size_t k = 0; k < c.vocab.n_dense; ++k) r.dense_fields.push_back(dense(rng));
  }
  return out;
}

GradCheckReport grad_check_model(const ModelConfig& config, std::uint64_t seed, std::size_t batch_size) {
  config.validate();
  if (batch_size == 0) throw ValidationError("grad check needs a non-empty batch");
  auto model = make_model(config);
  model->initialize(seed);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> draw(0.0, 0.3);
  for (Parameter& p : model->params().entries()) {
    for (double& v : p.value.values()) v = draw(rng);
  }
  auto records = random_records(rng, batch_size, config, 1);
  records[0].seq_items.clear();
  records[0].seq_actions.clear();
  const Batch batch = make_batch(records, config.l_max);
  return grad_check([&](Tape& tape) { return num::bce_with_logits(model->logits(tape, batch), batch.labels); },
                    model->params());
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<AttnTiming> bench_attention(const AttnBenchOptions& o) {
  if (o.lengths.empty() || o.repeats == 0 || o.batch == 0) throw ValidationError("bench needs lengths, repeats and batch");
  ModelConfig c;
  c.q = o.q;
  c.d_model = o.d_model;
  c.heads = o.heads;
  c.n_layers = 1;
  c.l_max = *std::max_element(o.lengths.begin(), o.lengths.end());
  c.mlp_head = {1};
  c.vocab.cat_cardinalities = {};
  c.validate();

  ParameterStore store;
  posbias::declare_params(store, c);
  backbone::declare_params(store, c);
  store.initialize(o.seed);
  store.set_requires_grad(true);

  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> draw(0.0, 1.0);
  auto random_tensor = [&](num::Shape shape) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = draw(rng);
    return t;
  };
  const Tensor queries = random_tensor({o.batch, o.q, o.d_model});

  std::vector<AttnTiming> out;
  for (std::size_t len : o.lengths) {
    SequenceBatch seq;
    seq.batch = o.batch;
    seq.width = len;
    seq.item_ids.assign(o.batch * len, 1);
    seq.action_types.assign(o.batch * len, 0);
    seq.valid_len.assign(o.batch, len);
    const Tensor tokens = random_tensor({o.batch, len, o.d_model});

    auto run_once = [&] {
      Tape tape;
      tape.set_finite_checks(false);
      Var qv = tape.constant(queries);
      Var tv = tape.constant(tokens);
      std::vector<Var> biases{posbias::static_bias(tape, store, c, 0, seq)};
      Var y = backbone::cross_attention_layer(tape, store, c, 0, qv, tv, seq.valid_len, biases);
      tape.backward(num::sum_all(y));
    };
    run_once();  // untimed warm-up
    AttnTiming t;
    t.length = len;
    for (std::size_t r = 0; r < o.repeats; ++r) {
      const auto start = std::chrono::steady_clock::now();
      run_once();
      t.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    }
    t.median = median(t.seconds);
    out.push_back(std::move(t));
  }
  store.set_requires_grad(false);
  return out;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path, const std::string& header) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << header << '\n';
  return out;
}

// Condition vector of `item` as the model would build it, sequence half zero.
std::vector<double> item_condition(const ParameterStore& store, const ModelConfig& c, std::size_t item) {
  const Tensor& emb = store.at("emb.item");
  const std::size_t d = c.d_model;
  std::vector<double> cond(c.condition_dim(), 0.0);
  std::copy_n(emb.ptr() + item * d, d, cond.begin());
  return cond;
}

// rows x dc matrix times vector.
std::vector<double> project(const Tensor& w, const std::vector<double>& x) {
  const std::size_t rows = w.dim(0), cols = w.dim(1);
  std::vector<double> y(rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) y[i] += w[i * cols + j] * x[j];
  }
  return y;
}

}  // namespace

std::vector<std::filesystem::path> export_bias(const CtrModel& model, const std::filesystem::path& dir,
                                               std::size_t n_items) {
  const ModelConfig& c = model.config();
  if (c.family != ModelFamily::kLatentQuery) throw ValidationError("export-bias needs a latent-query model");
  std::filesystem::create_directories(dir);
  const ParameterStore& store = model.params();
  std::vector<std::filesystem::path> written;
  n_items = std::min(n_items, c.vocab.n_items);

  {
    const auto path = dir / "static_bias.csv";
    auto out = open_csv(path, "layer,query,column,bias");
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      const Tensor m = posbias::layer_bias_matrix(store, c, l);
      for (std::size_t i = 0; i < c.q; ++i) {
        for (std::size_t col = 0; col < c.l_max; ++col) out << l << ',' << i << ',' << col << ',' << m[i * c.l_max + col] << '\n';
      }
    }
    written.push_back(path);
  }
  if (!c.lens.enabled) return written;

  if (c.lens.tcpb) {
    const auto path = dir / "tcpb_bias.csv";
    auto out = open_csv(path, "layer,item,query,column,bias");
    const std::size_t r = c.lens.rank;
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      const std::string p = "lens.tcpb." + std::to_string(l);
      const Tensor& w = store.at(p + ".w");
      const Tensor& pos = store.at(p + ".pos");
      for (std::size_t item = 1; item <= n_items; ++item) {
        const auto mix = project(w, item_condition(store, c, item));  // [q*r]
        for (std::size_t i = 0; i < c.q; ++i) {
          for (std::size_t col = 0; col < c.l_max; ++col) {
            double s = 0.0;
            for (std::size_t k = 0; k < r; ++k) s += mix[i * r + k] * pos[col * r + k];
            out << l << ',' << item << ',' << i << ',' << col << ',' << s << '\n';
          }
        }
      }
    }
    written.push_back(path);
  }
  if (c.lens.tcqg) {
    const auto path = dir / "tcqg_gate.csv";
    auto out = open_csv(path, "item,query,dim,gate");
    const Tensor& w = store.at("lens.gate.w");
    for (std::size_t item = 1; item <= n_items; ++item) {
      const auto logits = project(w, item_condition(store, c, item));
      for (std::size_t i = 0; i < c.q; ++i) {
        for (std::size_t d = 0; d < c.d_model; ++d) {
          const double z = logits[i * c.d_model + d];
          out << item << ',' << i << ',' << d << ',' << 2.0 / (1.0 + std::exp(-z)) << '\n';
        }
      }
    }
    written.push_back(path);
  }
  return written;
}

}  // namespace lensctr::diag
