#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace lensctr {

enum class ModelFamily { kLatentQuery, kDin };
enum class PositionMechanism { kNone, kGlobal, kAbsEmb, kQuerySpecific };
enum class ConditionSource { kItem, kItemSeq, kAuto };

std::string to_string(ModelFamily v);
std::string to_string(PositionMechanism v);
std::string to_string(ConditionSource v);
ModelFamily parse_model_family(const std::string& s);
PositionMechanism parse_position_mechanism(const std::string& s);
ConditionSource parse_condition_source(const std::string& s);

/// Vocabulary sizes of the input tables. Item ids run 1..n_items; 0 is padding.
struct VocabConfig {
  std::size_t n_items = 1000;
  std::vector<std::size_t> cat_cardinalities;
  std::size_t n_dense = 0;

  std::size_t nonseq_tokens() const { return cat_cardinalities.size() + n_dense; }
};

struct CapacitySwitches {
  bool seq_pooling_tokens = false;
  bool ns_tokens_in_boosting = false;
  bool per_query_ffn = false;
  std::size_t k_pool = 2;
};

struct LensConfig {
  bool enabled = false;
  bool tcqg = true;
  bool tcpb = true;
  std::size_t rank = 8;
  ConditionSource condition = ConditionSource::kAuto;
};

struct DinConfig {
  std::vector<std::size_t> attn_mlp{32, 1};
  bool full_side = true;
};

struct ModelConfig {
  ModelFamily family = ModelFamily::kLatentQuery;
  std::size_t q = 4;
  std::size_t d_model = 16;
  std::size_t n_layers = 2;
  std::size_t heads = 2;
  std::size_t l_max = 50;
  std::vector<std::size_t> mlp_head{256, 128, 1};
  std::size_t ffn_mult = 2;
  CapacitySwitches switches;
  PositionMechanism position = PositionMechanism::kQuerySpecific;
  LensConfig lens;
  DinConfig din;
  VocabConfig vocab;
  /// Training samples per item of the dataset the model is built for; drives
  /// ConditionSource::kAuto.
  double samples_per_item = 0.0;

  /// Throws ValidationError on any violated invariant.
  void validate() const;
  std::size_t head_dim() const { return d_model / heads; }
  /// kAuto resolved through the density rule.
  ConditionSource resolved_condition() const;
  std::size_t condition_dim() const;
  std::size_t query_tokens() const { return q + (switches.seq_pooling_tokens ? switches.k_pool : 0); }
  std::size_t fullside_dim() const { return 2 * d_model + vocab.nonseq_tokens() * d_model; }
};

}  // namespace lensctr
