#include "lensctr/posbias.hpp"

#include <stdexcept>
#include <string>

namespace lensctr::posbias {

using num::Tape;
using num::Tensor;
using num::Var;

ColumnRange right_align_columns(std::size_t valid_len, std::size_t l_max) {
  if (valid_len > l_max) {
    throw std::invalid_argument("valid_len " + std::to_string(valid_len) + " exceeds l_max " +
                                std::to_string(l_max));
  }
  return {l_max - valid_len, l_max};
}

std::vector<std::int64_t> aligned_columns(const SequenceBatch& seq, std::size_t l_max) {
  std::vector<std::int64_t> cols(seq.batch * seq.width, -1);
  for (std::size_t b = 0; b < seq.batch; ++b) {
    const ColumnRange range = right_align_columns(seq.valid_len[b], l_max);
    for (std::size_t p = 0; p < seq.valid_len[b]; ++p) {
      cols[b * seq.width + p] = static_cast<std::int64_t>(range.begin + p);
    }
  }
  return cols;
}

Var gather_positions(Var table, const SequenceBatch& seq, std::size_t l_max) {
  if (table.shape()[0] != l_max) {
    throw std::invalid_argument("position table " + num::shape_str(table.shape()) + " does not have " +
                                std::to_string(l_max) + " rows");
  }
  const auto cols = aligned_columns(seq, l_max);
  return num::gather_rows(table, cols, {seq.batch, seq.width});
}

void declare_params(ParameterStore& store, const ModelConfig& config) {
  switch (config.position) {
    case PositionMechanism::kNone: break;
    case PositionMechanism::kGlobal:
      store.add("pos.global", {config.n_layers, config.l_max}, InitSpec::zeros());
      break;
    case PositionMechanism::kAbsEmb:
      store.add("pos.abs", {config.l_max, config.d_model}, InitSpec::normal(0.02));
      break;
    case PositionMechanism::kQuerySpecific:
      store.add("pos.query", {config.n_layers, config.q, config.l_max}, InitSpec::zeros());
      break;
  }
}

Var static_bias(Tape& tape, ParameterStore& store, const ModelConfig& config, std::size_t layer,
                const SequenceBatch& seq) {
  const std::size_t q = config.q, l_max = config.l_max;
  switch (config.position) {
    case PositionMechanism::kNone:
    case PositionMechanism::kAbsEmb:
      return {};
    case PositionMechanism::kGlobal: {
      Var curves = tape.param(store.at("pos.global"));
      Var curve = num::reshape(num::slice(curves, 0, layer, layer + 1), {l_max, 1});
      Var per_slot = num::reshape(gather_positions(curve, seq, l_max), {seq.batch, 1, seq.width});
      return num::broadcast_to(per_slot, {seq.batch, q, seq.width});
    }
    case PositionMechanism::kQuerySpecific: {
      Var all = tape.param(store.at("pos.query"));
      Var by_position = num::permute(num::reshape(num::slice(all, 0, layer, layer + 1), {q, l_max}), {1, 0});
      return num::permute(gather_positions(by_position, seq, l_max), {0, 2, 1});
    }
  }
  return {};
}

Var add_absolute_positions(Tape& tape, ParameterStore& store, const ModelConfig& config, Var tokens,
                           const SequenceBatch& seq) {
  Var table = tape.param(store.at("pos.abs"));
  return num::add(tokens, gather_positions(table, seq, config.l_max));
}

Tensor layer_bias_matrix(const ParameterStore& store, const ModelConfig& config, std::size_t layer) {
  const std::size_t q = config.q, l_max = config.l_max;
  Tensor out({q, l_max});
  if (layer >= config.n_layers) throw std::out_of_range("layer " + std::to_string(layer) + " out of range");
  if (config.position == PositionMechanism::kQuerySpecific) {
    const Tensor& all = store.at("pos.query");
    std::copy_n(all.ptr() + layer * q * l_max, q * l_max, out.ptr());
  } else if (config.position == PositionMechanism::kGlobal) {
    const Tensor& all = store.at("pos.global");
    for (std::size_t i = 0; i < q; ++i) std::copy_n(all.ptr() + layer * l_max, l_max, out.ptr() + i * l_max);
  }
  return out;
}

}  // namespace lensctr::posbias
