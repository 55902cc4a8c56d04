#pragma once

#include <vector>

#include "lensctr/model_config.hpp"
#include "lensctr/ops.hpp"
#include "lensctr/params.hpp"
#include "lensctr/record.hpp"

namespace lensctr::posbias {

struct ColumnRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

/// Bias columns used by a sequence of `valid_len` tokens: [l_max - valid_len, l_max).
/// The most recent behaviour maps to column l_max - 1.
ColumnRange right_align_columns(std::size_t valid_len, std::size_t l_max);

/// Right-aligned bias column for every [b, p] slot of the batch; -1 at padding.
std::vector<std::int64_t> aligned_columns(const SequenceBatch& seq, std::size_t l_max);

/// Looks up per-position rows of `table` [l_max x k] for each sequence slot. [B x W x k]
num::Var gather_positions(num::Var table, const SequenceBatch& seq, std::size_t l_max);

void declare_params(ParameterStore& store, const ModelConfig& config);

/// Additive logit bias of the static mechanism for one layer, [B x q x W].
/// Returns an invalid Var for `none` and `abs_emb`, which contribute nothing here.
num::Var static_bias(num::Tape& tape, ParameterStore& store, const ModelConfig& config, std::size_t layer,
                     const SequenceBatch& seq);

/// tokens + learned absolute embedding of each token's right-aligned position.
num::Var add_absolute_positions(num::Tape& tape, ParameterStore& store, const ModelConfig& config,
                                num::Var tokens, const SequenceBatch& seq);

/// The [q x l_max] static bias of one layer (global curves repeated per query).
num::Tensor layer_bias_matrix(const ParameterStore& store, const ModelConfig& config, std::size_t layer);

}  // namespace lensctr::posbias
