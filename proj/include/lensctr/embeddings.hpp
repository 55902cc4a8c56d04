#pragma once

#include <span>
#include <string>

#include "lensctr/model_config.hpp"
#include "lensctr/ops.hpp"
#include "lensctr/params.hpp"
#include "lensctr/record.hpp"

namespace lensctr::emb {

inline constexpr double kEmbeddingInitStd = 0.02;

/// Registers item, action, categorical-field and dense-field parameters.
void declare_tables(ParameterStore& store, const ModelConfig& config);

/// Number of parameters held in embedding tables.
std::size_t embedding_parameter_count(const ModelConfig& config);

/// Item lookup for `ids` (shape `leading`). Ids must lie in [0, vocab).
num::Var lookup(num::Var table, std::span<const std::int64_t> ids, num::Shape leading);

/// Raw item embeddings of the sequence, zero at padding. [B x W x D]
num::Var sequence_items(num::Var item_table, const SequenceBatch& seq);

/// e_token = e_item + e_action at valid positions, zero vector at padding.
num::Var fuse_typed_tokens(const SequenceBatch& seq, num::Var item_table, num::Var action_table);

/// Mean over the first valid_len[b] positions; zero vector when valid_len is 0.
num::Var masked_mean(num::Var tokens, std::span<const std::size_t> valid_len);

/// Non-sequential field tokens [B x T_ns x D]: one table per categorical field,
/// then one affine map per dense field. Returns an invalid Var when T_ns = 0.
num::Var nonseq_tokens(num::Tape& tape, ParameterStore& store, const Batch& batch, const ModelConfig& config);

/// f = [target ; flattened non-seq tokens ; sequence mean]. `nonseq` may be invalid.
num::Var build_fullside_vector(num::Var target, num::Var nonseq, num::Var seq_mean);

}  // namespace lensctr::emb
