#include "lensctr/model_config.hpp"

#include "lensctr/lens.hpp"
#include "lensctr/tensor.hpp"

namespace lensctr {

std::string to_string(ModelFamily v) { return v == ModelFamily::kDin ? "din" : "latent_query"; }

std::string to_string(PositionMechanism v) {
  switch (v) {
    case PositionMechanism::kNone: return "none";
    case PositionMechanism::kGlobal: return "global";
    case PositionMechanism::kAbsEmb: return "abs_emb";
    case PositionMechanism::kQuerySpecific: return "query_specific";
  }
  return "none";
}

std::string to_string(ConditionSource v) {
  switch (v) {
    case ConditionSource::kItem: return "item";
    case ConditionSource::kItemSeq: return "item_seq";
    case ConditionSource::kAuto: return "auto";
  }
  return "auto";
}

ModelFamily parse_model_family(const std::string& s) {
  if (s == "latent_query") return ModelFamily::kLatentQuery;
  if (s == "din") return ModelFamily::kDin;
  throw ValidationError("unknown model family '" + s + "'");
}

PositionMechanism parse_position_mechanism(const std::string& s) {
  if (s == "none") return PositionMechanism::kNone;
  if (s == "global") return PositionMechanism::kGlobal;
  if (s == "abs_emb") return PositionMechanism::kAbsEmb;
  if (s == "query_specific") return PositionMechanism::kQuerySpecific;
  throw ValidationError("unknown position mechanism '" + s + "'");
}

ConditionSource parse_condition_source(const std::string& s) {
  if (s == "item") return ConditionSource::kItem;
  if (s == "item_seq") return ConditionSource::kItemSeq;
  if (s == "auto") return ConditionSource::kAuto;
  throw ValidationError("unknown condition source '" + s + "'");
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ValidationError("model config: " + msg);
  };
  require(d_model >= 1 && q >= 1 && n_layers >= 1 && heads >= 1 && l_max >= 1, "sizes must be positive");
  require(vocab.n_items >= 1, "item vocabulary must be non-empty");
  for (std::size_t c : vocab.cat_cardinalities) require(c >= 1, "categorical cardinality must be positive");
  require(!mlp_head.empty() && mlp_head.back() == 1, "mlp_head must end in a single output unit");
  require(ffn_mult >= 1, "ffn_mult must be positive");
  if (family == ModelFamily::kDin) {
    require(!din.attn_mlp.empty() && din.attn_mlp.back() == 1, "din attn_mlp must end in a single output unit");
    require(!lens.enabled, "LENS modules are defined for latent-query models only");
    return;
  }
  require(d_model % heads == 0, "d_model (" + std::to_string(d_model) + ") must be divisible by heads (" +
                                    std::to_string(heads) + ")");
  if (lens.enabled) {
    require(position == PositionMechanism::kQuerySpecific,
            "LENS requires position_mechanism = query_specific (it extends the QueryPos reference)");
    require(!lens.tcpb || lens.rank >= 1, "TCPB rank must be >= 1");
    require(lens.condition != ConditionSource::kAuto || samples_per_item > 0.0,
            "condition source 'auto' needs samples_per_item > 0");
  }
}

ConditionSource ModelConfig::resolved_condition() const {
  return lens::select_condition(samples_per_item, lens.condition);
}

std::size_t ModelConfig::condition_dim() const {
  return resolved_condition() == ConditionSource::kItem ? d_model : 2 * d_model;
}

}  // namespace lensctr
