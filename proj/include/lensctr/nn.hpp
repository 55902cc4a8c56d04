#pragma once

#include <string>
#include <vector>

#include "lensctr/ops.hpp"
#include "lensctr/params.hpp"

namespace lensctr::nn {

/// `prefix.w` [in x out] (xavier) and `prefix.b` [out] (zeros).
void declare_linear(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out);
num::Var linear(num::Tape& tape, ParameterStore& store, const std::string& prefix, num::Var x);

/// `prefix.g` ones, `prefix.b` zeros.
void declare_layer_norm(ParameterStore& store, const std::string& prefix, std::size_t dim);
num::Var layer_norm(num::Tape& tape, ParameterStore& store, const std::string& prefix, num::Var x);

/// Linear layers `prefix.0 .. prefix.{n-1}` with ReLU between them.
void declare_mlp(ParameterStore& store, const std::string& prefix, std::size_t in,
                 const std::vector<std::size_t>& sizes);
num::Var mlp(num::Tape& tape, ParameterStore& store, const std::string& prefix, num::Var x, std::size_t n_layers);

/// Projections `prefix.{q,k,v,o}` of width d.
void declare_attention(ParameterStore& store, const std::string& prefix, std::size_t d);

/// [B x T x h*dh] -> [B x h x T x dh] and back.
num::Var split_heads(num::Var x, std::size_t heads);
num::Var merge_heads(num::Var x);

struct AttentionInputs {
  num::Var queries;  // [B x Tq x D]
  num::Var keys;     // [B x Tk x D], used for both keys and values
  std::size_t heads = 1;
  /// Added to the scaled content logits; must broadcast to [B x h x Tq x Tk].
  num::Var bias;
  /// Valid key count per sample, or empty when every key is valid. Rows of
  /// samples with zero valid keys attend to a null slot with a zero value.
  std::vector<std::size_t> valid_keys;
};

/// Multi-head scaled dot-product attention followed by the output projection.
/// When `weights_out` is set it receives the attention weights [B x h x Tq x Tk].
num::Var attention(num::Tape& tape, ParameterStore& store, const std::string& prefix, const AttentionInputs& in,
                   num::Tensor* weights_out = nullptr);

}  // namespace lensctr::nn
