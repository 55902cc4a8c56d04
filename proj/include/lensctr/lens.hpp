#pragma once

#include "lensctr/model_config.hpp"
#include "lensctr/ops.hpp"
#include "lensctr/params.hpp"
#include "lensctr/record.hpp"

namespace lensctr::lens {

/// Samples-per-item above which the target embedding alone conditions LENS.
inline constexpr double kDensityThreshold = 50.0;

/// auto -> item when samples_per_item > 50, item_seq otherwise (50 itself is
/// item_seq). Explicit sources pass through.
ConditionSource select_condition(double samples_per_item, ConditionSource mode);

void declare_params(ParameterStore& store, const ModelConfig& config);

/// c = t for item, c = [t ; s_bar] for item_seq. [B x d_c]
num::Var condition_vector(num::Var target, num::Var seq_raw_mean, ConditionSource source);

/// g(c) = 2 sigmoid(reshape(W_t c, q x D)), entries in (0, 2). [B x q x D]
num::Var tcqg_gate(num::Tape& tape, ParameterStore& store, const ModelConfig& config, num::Var condition);

/// B_tc[i, j] = <M(c)_i, P_j> with M = reshape(W_tau c, q x r) and P the
/// layer's position embedding at each slot's right-aligned column. [B x q x W]
num::Var tcpb_bias(num::Tape& tape, ParameterStore& store, const ModelConfig& config, std::size_t layer,
                   num::Var condition, const SequenceBatch& seq);

struct ParamCount {
  std::size_t query_pos = 0;
  std::size_t tcqg = 0;
  std::size_t tcpb = 0;
  /// N_L (q D r + L_max r): the common shorthand, equal to tcpb only when d_c = D.
  std::size_t tcpb_tabulated = 0;
  std::size_t condition_dim = 0;

  std::size_t lens_total() const { return tcqg + tcpb; }
  std::size_t total() const { return query_pos + tcqg + tcpb; }
};

/// Parameter cost of QueryPos and both LENS modules for `config` at its
/// resolved condition dimension. Counts modules regardless of enable flags.
ParamCount param_count(const ModelConfig& config);
ParamCount param_count(const ModelConfig& config, std::size_t condition_dim);

}  // namespace lensctr::lens
