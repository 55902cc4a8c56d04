#include "lensctr/din.hpp"

#include "lensctr/embeddings.hpp"
#include "lensctr/nn.hpp"

namespace lensctr {

using num::Tape;
using num::Tensor;
using num::Var;

namespace din {

namespace {

std::size_t head_input_dim(const ModelConfig& config) {
  return 2 * config.d_model + (config.din.full_side ? config.vocab.nonseq_tokens() * config.d_model : 0);
}

}  // namespace

void declare_params(ParameterStore& store, const ModelConfig& config) {
  nn::declare_mlp(store, "din.score", 4 * config.d_model, config.din.attn_mlp);
  nn::declare_mlp(store, "head", head_input_dim(config), config.mlp_head);
}

Var din_attention(Tape& tape, ParameterStore& store, const ModelConfig& config, Var target, Var tokens,
                  std::span<const std::size_t> valid_len, Tensor* weights_out) {
  const std::size_t b = tokens.shape()[0], w = tokens.shape()[1], d = tokens.shape()[2];
  Var t = num::broadcast_to(num::reshape(target, {b, 1, d}), {b, w, d});
  std::vector<Var> feats{tokens, t, num::mul(tokens, t), num::sub(tokens, t)};
  Var scores = nn::mlp(tape, store, "din.score", num::concat(feats, 2), config.din.attn_mlp.size());
  scores = num::reshape(scores, {b, w});

  // Empty rows get one nominally valid slot; its token is the zero padding
  // vector, so the weighted sum is zero as required.
  num::Mask mask(b * w, 0);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t n = std::min(valid_len[i], w);
    for (std::size_t p = 0; p < std::max<std::size_t>(n, 1); ++p) mask[i * w + p] = 1;
  }
  Var weights = num::softmax_masked(scores, mask);
  if (weights_out) {
    *weights_out = weights.value();
    for (std::size_t i = 0; i < b; ++i) {
      if (valid_len[i] == 0) (*weights_out)[i * w] = 0.0;
    }
  }
  Var pooled = num::matmul(num::reshape(weights, {b, 1, w}), tokens);
  return num::reshape(pooled, {b, d});
}

}  // namespace din

DinModel::DinModel(ModelConfig config) : CtrModel(std::move(config)) {
  emb::declare_tables(params_, config_);
  din::declare_params(params_, config_);
}

Var DinModel::logits(Tape& tape, const Batch& batch, ForwardTrace* trace) {
  const ModelConfig& c = config_;
  const std::size_t b = batch.size;
  Var items = tape.param(params_.at("emb.item"));
  Var actions = tape.param(params_.at("emb.action"));
  Var tokens = emb::fuse_typed_tokens(batch.seq, items, actions);
  Var target = emb::lookup(items, batch.target, {b});

  Tensor weights;
  Var attended = din::din_attention(tape, params_, c, target, tokens, batch.seq.valid_len, trace ? &weights : nullptr);
  std::vector<Var> parts{attended, target};
  if (c.din.full_side) {
    Var ns = emb::nonseq_tokens(tape, params_, batch, c);
    if (ns.valid()) parts.push_back(num::reshape(ns, {b, ns.shape()[1] * ns.shape()[2]}));
  }
  Var x = num::concat(parts, 1);
  if (trace) {
    *trace = ForwardTrace{};
    trace->attention.push_back(std::move(weights));
    trace->fullside = x.value();
  }
  return num::reshape(nn::mlp(tape, params_, "head", x, c.mlp_head.size()), {b});
}

}  // namespace lensctr
