#pragma once

#include "lensctr/backbone.hpp"

namespace lensctr {

namespace din {

void declare_params(ParameterStore& store, const ModelConfig& config);

/// Target attention: a score MLP over (token, target, token*target, token-target),
/// softmax over valid tokens, weighted sum. Zero vector for empty sequences. [B x D]
num::Var din_attention(num::Tape& tape, ParameterStore& store, const ModelConfig& config, num::Var target,
                       num::Var tokens, std::span<const std::size_t> valid_len, num::Tensor* weights_out = nullptr);

}  // namespace din

class DinModel final : public CtrModel {
 public:
  explicit DinModel(ModelConfig config);
  num::Var logits(num::Tape& tape, const Batch& batch, ForwardTrace* trace = nullptr) override;
};

}  // namespace lensctr
