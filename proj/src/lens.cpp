#include "lensctr/lens.hpp"

#include <string>

#include "lensctr/posbias.hpp"

namespace lensctr::lens {

using num::Tape;
using num::Var;

ConditionSource select_condition(double samples_per_item, ConditionSource mode) {
  if (mode != ConditionSource::kAuto) return mode;
  if (!(samples_per_item > 0.0)) throw ValidationError("condition source 'auto' needs samples_per_item > 0");
  return samples_per_item > kDensityThreshold ? ConditionSource::kItem : ConditionSource::kItemSeq;
}

void declare_params(ParameterStore& store, const ModelConfig& config) {
  if (!config.lens.enabled) return;
  const std::size_t dc = config.condition_dim();
  if (config.lens.tcqg) store.add("lens.gate.w", {config.q * config.d_model, dc}, InitSpec::zeros());
  if (config.lens.tcpb) {
    for (std::size_t l = 0; l < config.n_layers; ++l) {
      const std::string p = "lens.tcpb." + std::to_string(l);
      store.add(p + ".w", {config.q * config.lens.rank, dc}, InitSpec::zeros());
      store.add(p + ".pos", {config.l_max, config.lens.rank}, InitSpec::normal(0.02));
    }
  }
}

Var condition_vector(Var target, Var seq_raw_mean, ConditionSource source) {
  if (source == ConditionSource::kItem) return target;
  if (source == ConditionSource::kItemSeq) {
    std::vector<Var> parts{target, seq_raw_mean};
    return num::concat(parts, 1);
  }
  throw std::invalid_argument("condition source must be resolved before building the condition vector");
}

Var tcqg_gate(Tape& tape, ParameterStore& store, const ModelConfig& config, Var condition) {
  Var w = tape.param(store.at("lens.gate.w"));
  const std::size_t b = condition.shape()[0];
  Var logits = num::reshape(num::matmul(condition, w, /*transpose_b=*/true), {b, config.q, config.d_model});
  return num::scale(num::sigmoid(logits), 2.0);
}

Var tcpb_bias(Tape& tape, ParameterStore& store, const ModelConfig& config, std::size_t layer, Var condition,
              const SequenceBatch& seq) {
  const std::string p = "lens.tcpb." + std::to_string(layer);
  Var w = tape.param(store.at(p + ".w"));
  Var pos = tape.param(store.at(p + ".pos"));
  const std::size_t b = condition.shape()[0];
  Var mix = num::reshape(num::matmul(condition, w, /*transpose_b=*/true), {b, config.q, config.lens.rank});
  Var slots = posbias::gather_positions(pos, seq, config.l_max);  // [B, W, r]
  return num::matmul(mix, slots, /*transpose_b=*/true);
}

ParamCount param_count(const ModelConfig& config) { return param_count(config, config.condition_dim()); }

ParamCount param_count(const ModelConfig& config, std::size_t condition_dim) {
  ParamCount c;
  const std::size_t nl = config.n_layers, q = config.q, d = config.d_model, lm = config.l_max, r = config.lens.rank;
  c.condition_dim = condition_dim;
  c.query_pos = nl * q * lm;
  c.tcqg = q * d * condition_dim;
  c.tcpb = nl * (q * r * condition_dim + lm * r);
  c.tcpb_tabulated = nl * (q * d * r + lm * r);
  return c;
}

}  // namespace lensctr::lens
