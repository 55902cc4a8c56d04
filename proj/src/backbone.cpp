#include "lensctr/backbone.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "lensctr/din.hpp"
#include "lensctr/embeddings.hpp"
#include "lensctr/lens.hpp"
#include "lensctr/nn.hpp"
#include "lensctr/posbias.hpp"

namespace lensctr {

using num::Tape;
using num::Tensor;
using num::Var;

CtrModel::CtrModel(ModelConfig config) : config_(std::move(config)) { config_.validate(); }

std::vector<double> CtrModel::predict(const Batch& batch) {
  Tape tape;
  tape.set_finite_checks(false);
  Var z = logits(tape, batch);
  if (!z.value().all_finite()) throw std::runtime_error("non-finite logit in prediction");
  std::vector<double> p(batch.size);
  for (std::size_t i = 0; i < batch.size; ++i) p[i] = 1.0 / (1.0 + std::exp(-z.value()[i]));
  return p;
}

std::unique_ptr<CtrModel> make_model(const ModelConfig& config) {
  if (config.family == ModelFamily::kDin) return std::make_unique<DinModel>(config);
  return std::make_unique<LatentQueryModel>(config);
}

namespace backbone {

namespace {

std::string layer_prefix(std::size_t layer) { return "layer" + std::to_string(layer); }

bool pooling_on(const ModelConfig& config) {
  return config.switches.seq_pooling_tokens && config.switches.k_pool > 0;
}

std::size_t ffn_hidden(const ModelConfig& config) { return config.ffn_mult * config.d_model; }

Var feed_forward(Tape& tape, ParameterStore& store, const ModelConfig& config, const std::string& prefix, Var x) {
  if (!config.switches.per_query_ffn) {
    return nn::linear(tape, store, prefix + ".2", num::relu(nn::linear(tape, store, prefix + ".1", x)));
  }
  // Per-query weights: [Qt x B x D] against [Qt x D x H].
  Var xt = num::permute(x, {1, 0, 2});
  Var h = num::add(num::matmul(xt, tape.param(store.at(prefix + ".1.w"))), tape.param(store.at(prefix + ".1.b")));
  h = num::relu(h);
  Var y = num::add(num::matmul(h, tape.param(store.at(prefix + ".2.w"))), tape.param(store.at(prefix + ".2.b")));
  return num::permute(y, {1, 0, 2});
}

}  // namespace

void declare_params(ParameterStore& store, const ModelConfig& config) {
  const std::size_t d = config.d_model, qt = config.query_tokens(), hidden = ffn_hidden(config);
  nn::declare_linear(store, "qgen", config.fullside_dim(), config.q * d);
  if (pooling_on(config)) nn::declare_linear(store, "pool", d, config.switches.k_pool * d);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const std::string p = layer_prefix(l);
    nn::declare_layer_norm(store, p + ".xattn.ln", d);
    nn::declare_attention(store, p + ".xattn", d);
    nn::declare_layer_norm(store, p + ".boost.ln", d);
    nn::declare_attention(store, p + ".boost", d);
    nn::declare_layer_norm(store, p + ".ffn.ln", d);
    if (config.switches.per_query_ffn) {
      store.add(p + ".ffn.1.w", {qt, d, hidden}, InitSpec::xavier());
      store.add(p + ".ffn.1.b", {qt, 1, hidden}, InitSpec::zeros());
      store.add(p + ".ffn.2.w", {qt, hidden, d}, InitSpec::xavier());
      store.add(p + ".ffn.2.b", {qt, 1, d}, InitSpec::zeros());
    } else {
      nn::declare_linear(store, p + ".ffn.1", d, hidden);
      nn::declare_linear(store, p + ".ffn.2", hidden, d);
    }
  }
  nn::declare_mlp(store, "head", config.q * d + config.fullside_dim(), config.mlp_head);
}

Var query_gen(Tape& tape, ParameterStore& store, const ModelConfig& config, Var f) {
  const std::size_t b = f.shape()[0];
  return num::reshape(nn::linear(tape, store, "qgen", f), {b, config.q, config.d_model});
}

Var cross_attention_layer(Tape& tape, ParameterStore& store, const ModelConfig& config, std::size_t layer,
                          Var queries, Var tokens, std::span<const std::size_t> valid_len, std::span<const Var> biases,
                          Tensor* weights_out) {
  const std::string p = layer_prefix(layer);
  const std::size_t b = queries.shape()[0], qt = queries.shape()[1], w = tokens.shape()[1];

  Var bias;
  for (const Var& provider : biases) {
    if (!provider.valid()) continue;
    bias = bias.valid() ? num::add(bias, provider) : provider;
  }
  if (bias.valid()) {
    if (bias.shape() != num::Shape{b, config.q, w}) {
      throw std::invalid_argument("cross attention bias " + num::shape_str(bias.shape()) + ", expected " +
                                  num::shape_str({b, config.q, w}));
    }
    if (qt > config.q) {
      std::vector<Var> rows{bias, tape.constant(Tensor({b, qt - config.q, w}))};
      bias = num::concat(rows, 1);
    }
    bias = num::reshape(bias, {b, 1, qt, w});
  }

  nn::AttentionInputs in;
  in.queries = nn::layer_norm(tape, store, p + ".xattn.ln", queries);
  in.keys = tokens;
  in.heads = config.heads;
  in.bias = bias;
  in.valid_keys.assign(valid_len.begin(), valid_len.end());
  return num::add(queries, nn::attention(tape, store, p + ".xattn", in, weights_out));
}

Var query_boosting(Tape& tape, ParameterStore& store, const ModelConfig& config, std::size_t layer, Var queries,
                   Var ns_tokens) {
  const std::string p = layer_prefix(layer);
  const std::size_t qt = queries.shape()[1];

  Var pool = queries;
  if (ns_tokens.valid()) {
    std::vector<Var> parts{queries, ns_tokens};
    pool = num::concat(parts, 1);
  }
  Var normed = nn::layer_norm(tape, store, p + ".boost.ln", pool);
  nn::AttentionInputs in;
  in.queries = ns_tokens.valid() ? num::slice(normed, 1, 0, qt) : normed;
  in.keys = normed;
  in.heads = config.heads;
  Var x = num::add(queries, nn::attention(tape, store, p + ".boost", in));

  Var h = nn::layer_norm(tape, store, p + ".ffn.ln", x);
  return num::add(x, feed_forward(tape, store, config, p + ".ffn", h));
}

Var seq_pooling_tokens(Tape& tape, ParameterStore& store, const ModelConfig& config, Var tokens,
                       std::span<const std::size_t> valid_len) {
  const std::size_t b = tokens.shape()[0];
  Var mean = emb::masked_mean(tokens, valid_len);
  return num::reshape(nn::linear(tape, store, "pool", mean), {b, config.switches.k_pool, config.d_model});
}

Var predict(Tape& tape, ParameterStore& store, const ModelConfig& config, Var queries, Var f) {
  const std::size_t b = queries.shape()[0];
  std::vector<Var> parts{num::reshape(queries, {b, queries.shape()[1] * queries.shape()[2]}), f};
  Var out = nn::mlp(tape, store, "head", num::concat(parts, 1), config.mlp_head.size());
  return num::reshape(out, {b});
}

}  // namespace backbone

LatentQueryModel::LatentQueryModel(ModelConfig config) : CtrModel(std::move(config)) {
  emb::declare_tables(params_, config_);
  posbias::declare_params(params_, config_);
  lens::declare_params(params_, config_);
  backbone::declare_params(params_, config_);
}

Var LatentQueryModel::logits(Tape& tape, const Batch& batch, ForwardTrace* trace) {
  const ModelConfig& c = config_;
  const SequenceBatch& seq = batch.seq;
  const std::size_t b = batch.size;

  Var items = tape.param(params_.at("emb.item"));
  Var actions = tape.param(params_.at("emb.action"));
  Var tokens = emb::fuse_typed_tokens(seq, items, actions);
  if (c.position == PositionMechanism::kAbsEmb) tokens = posbias::add_absolute_positions(tape, params_, c, tokens, seq);

  Var target = emb::lookup(items, batch.target, {b});
  Var seq_mean = emb::masked_mean(emb::sequence_items(items, seq), seq.valid_len);
  Var ns = emb::nonseq_tokens(tape, params_, batch, c);
  Var f = emb::build_fullside_vector(target, ns, seq_mean);

  Var queries = backbone::query_gen(tape, params_, c, f);
  if (trace) {
    *trace = ForwardTrace{};
    trace->fullside = f.value();
    trace->queries_raw = queries.value();
  }

  Var condition;
  if (c.lens.enabled) condition = lens::condition_vector(target, seq_mean, c.resolved_condition());
  if (c.lens.enabled && c.lens.tcqg) {
    Var gate = lens::tcqg_gate(tape, params_, c, condition);
    if (trace) trace->gate = gate.value();
    queries = num::mul(queries, gate);
  }
  if (c.switches.seq_pooling_tokens && c.switches.k_pool > 0) {
    std::vector<Var> parts{queries, backbone::seq_pooling_tokens(tape, params_, c, tokens, seq.valid_len)};
    queries = num::concat(parts, 1);
  }

  Var boost_ns = c.switches.ns_tokens_in_boosting ? ns : Var{};
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    std::vector<Var> biases;
    Var fixed = posbias::static_bias(tape, params_, c, l, seq);
    if (fixed.valid()) biases.push_back(fixed);
    if (c.lens.enabled && c.lens.tcpb) biases.push_back(lens::tcpb_bias(tape, params_, c, l, condition, seq));
    Tensor weights;
    queries = backbone::cross_attention_layer(tape, params_, c, l, queries, tokens, seq.valid_len, biases,
                                              trace ? &weights : nullptr);
    if (trace) {
      trace->attention.push_back(std::move(weights));
      trace->static_bias.push_back(fixed.valid() ? fixed.value() : Tensor());
      trace->tc_bias.push_back(c.lens.enabled && c.lens.tcpb ? biases.back().value() : Tensor());
    }
    queries = backbone::query_boosting(tape, params_, c, l, queries, boost_ns);
  }
  if (queries.shape()[1] > c.q) queries = num::slice(queries, 1, 0, c.q);
  return backbone::predict(tape, params_, c, queries, f);
}

}  // namespace lensctr
