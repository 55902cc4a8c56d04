#include "lensctr/embeddings.hpp"

#include <stdexcept>
#include <string>

namespace lensctr::emb {

using num::Shape;
using num::Tape;
using num::Tensor;
using num::Var;

void declare_tables(ParameterStore& store, const ModelConfig& config) {
  const std::size_t d = config.d_model;
  store.add("emb.item", {config.vocab.n_items + 1, d}, InitSpec::normal(kEmbeddingInitStd));
  store.add("emb.action", {static_cast<std::size_t>(kActionCount), d}, InitSpec::normal(kEmbeddingInitStd));
  for (std::size_t k = 0; k < config.vocab.cat_cardinalities.size(); ++k) {
    store.add("emb.field." + std::to_string(k), {config.vocab.cat_cardinalities[k], d},
              InitSpec::normal(kEmbeddingInitStd));
  }
  for (std::size_t k = 0; k < config.vocab.n_dense; ++k) {
    store.add("emb.dense." + std::to_string(k) + ".w", {1, d}, InitSpec::xavier());
    store.add("emb.dense." + std::to_string(k) + ".b", {d}, InitSpec::zeros());
  }
}

std::size_t embedding_parameter_count(const ModelConfig& config) {
  const std::size_t d = config.d_model;
  std::size_t n = (config.vocab.n_items + 1) * d + static_cast<std::size_t>(kActionCount) * d;
  for (std::size_t c : config.vocab.cat_cardinalities) n += c * d;
  n += config.vocab.n_dense * 2 * d;
  return n;
}

Var lookup(Var table, std::span<const std::int64_t> ids, Shape leading) {
  const std::size_t vocab = table.shape()[0];
  for (std::int64_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw std::out_of_range("embedding id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(vocab));
    }
  }
  return num::gather_rows(table, ids, std::move(leading));
}

namespace {

std::vector<std::int64_t> masked_ids(const SequenceBatch& seq, const std::vector<std::int64_t>& ids,
                                     std::size_t vocab, const char* what) {
  std::vector<std::int64_t> out(ids.size(), -1);
  for (std::size_t b = 0; b < seq.batch; ++b) {
    for (std::size_t p = 0; p < seq.valid_len[b]; ++p) {
      const std::int64_t id = ids[b * seq.width + p];
      if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
        throw std::out_of_range(std::string(what) + " id " + std::to_string(id) + " outside vocabulary of " +
                                std::to_string(vocab));
      }
      out[b * seq.width + p] = id;
    }
  }
  return out;
}

}  // namespace

Var sequence_items(Var item_table, const SequenceBatch& seq) {
  auto ids = masked_ids(seq, seq.item_ids, item_table.shape()[0], "item");
  return num::gather_rows(item_table, ids, {seq.batch, seq.width});
}

Var fuse_typed_tokens(const SequenceBatch& seq, Var item_table, Var action_table) {
  if (item_table.shape()[1] != action_table.shape()[1]) {
    throw std::invalid_argument("item and action tables differ in width: " + num::shape_str(item_table.shape()) +
                                " vs " + num::shape_str(action_table.shape()));
  }
  Var items = sequence_items(item_table, seq);
  auto actions = masked_ids(seq, seq.action_types, action_table.shape()[0], "action");
  return num::add(items, num::gather_rows(action_table, actions, {seq.batch, seq.width}));
}

Var masked_mean(Var tokens, std::span<const std::size_t> valid_len) {
  const Shape& s = tokens.shape();
  if (s.size() != 3 || s[0] != valid_len.size()) {
    throw std::invalid_argument("masked_mean: tokens " + num::shape_str(s) + " vs " +
                                std::to_string(valid_len.size()) + " lengths");
  }
  Tensor w({s[0], s[1], 1});
  for (std::size_t b = 0; b < s[0]; ++b) {
    const std::size_t n = std::min(valid_len[b], s[1]);
    for (std::size_t p = 0; p < n; ++p) w[b * s[1] + p] = 1.0 / static_cast<double>(n);
  }
  return num::sum(num::mul(tokens, tokens.tape().constant(std::move(w))), 1);
}

Var nonseq_tokens(Tape& tape, ParameterStore& store, const Batch& batch, const ModelConfig& config) {
  const std::size_t n_cat = config.vocab.cat_cardinalities.size();
  const std::size_t n_dense = config.vocab.n_dense;
  if (n_cat + n_dense == 0) return {};
  if (batch.n_cat != n_cat || batch.n_dense != n_dense) {
    throw std::invalid_argument("batch carries " + std::to_string(batch.n_cat) + " categorical / " +
                                std::to_string(batch.n_dense) + " dense fields, model expects " +
                                std::to_string(n_cat) + " / " + std::to_string(n_dense));
  }
  std::vector<Var> parts;
  for (std::size_t k = 0; k < n_cat; ++k) {
    std::vector<std::int64_t> ids(batch.size);
    for (std::size_t b = 0; b < batch.size; ++b) ids[b] = batch.cat_fields[b * n_cat + k];
    Var table = tape.param(store.at("emb.field." + std::to_string(k)));
    parts.push_back(lookup(table, ids, {batch.size, 1}));
  }
  for (std::size_t k = 0; k < n_dense; ++k) {
    Tensor x({batch.size, 1, 1});
    for (std::size_t b = 0; b < batch.size; ++b) x[b] = batch.dense_fields[b * n_dense + k];
    Var w = tape.param(store.at("emb.dense." + std::to_string(k) + ".w"));
    Var bias = tape.param(store.at("emb.dense." + std::to_string(k) + ".b"));
    parts.push_back(num::add(num::matmul(tape.constant(std::move(x)), w), bias));
  }
  return parts.size() == 1 ? parts.front() : num::concat(parts, 1);
}

Var build_fullside_vector(Var target, Var nonseq, Var seq_mean) {
  std::vector<Var> parts{target};
  if (nonseq.valid()) {
    const Shape& s = nonseq.shape();
    parts.push_back(s.size() == 3 ? num::reshape(nonseq, {s[0], s[1] * s[2]}) : nonseq);
  }
  parts.push_back(seq_mean);
  return num::concat(parts, 1);
}

}  // namespace lensctr::emb
