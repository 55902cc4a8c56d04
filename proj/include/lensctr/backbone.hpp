#pragma once

#include <memory>
#include <span>
#include <vector>

#include "lensctr/model_config.hpp"
#include "lensctr/ops.hpp"
#include "lensctr/params.hpp"
#include "lensctr/record.hpp"

namespace lensctr {

/// Intermediate values captured by a forward pass, for diagnostics and tests.
struct ForwardTrace {
  std::vector<num::Tensor> attention;    // per layer, [B x h x Qt x W]
  std::vector<num::Tensor> static_bias;  // per layer, [B x q x W]; empty when no static bias
  std::vector<num::Tensor> tc_bias;      // per layer, [B x q x W]; empty without TCPB
  num::Tensor gate;                      // [B x q x D]; empty without TCQG
  num::Tensor queries_raw;               // [B x q x D]
  num::Tensor fullside;                  // [B x F]
};

/// Common interface of the CTR models. A model owns its ParameterStore.
class CtrModel {
 public:
  explicit CtrModel(ModelConfig config);
  virtual ~CtrModel() = default;
  CtrModel(const CtrModel&) = delete;
  CtrModel& operator=(const CtrModel&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  void initialize(std::uint64_t seed) { params_.initialize(seed); }

  /// Pre-sigmoid logits [B].
  virtual num::Var logits(num::Tape& tape, const Batch& batch, ForwardTrace* trace = nullptr) = 0;

  /// Click probabilities. Reads parameters only, so several threads may call
  /// this concurrently while nothing writes to the store.
  std::vector<double> predict(const Batch& batch);

 protected:
  ModelConfig config_;
  ParameterStore params_;
};

std::unique_ptr<CtrModel> make_model(const ModelConfig& config);

namespace backbone {

void declare_params(ParameterStore& store, const ModelConfig& config);

/// Affine map f -> q*D reshaped to [B x q x D].
num::Var query_gen(num::Tape& tape, ParameterStore& store, const ModelConfig& config, num::Var f);

/// Q + W_o MHA(LN(Q), S, S). `biases` are [B x q x W] matrices added to the
/// logits of the first q query tokens in every head; further query tokens
/// (pooling tokens) get no bias.
num::Var cross_attention_layer(num::Tape& tape, ParameterStore& store, const ModelConfig& config, std::size_t layer,
                               num::Var queries, num::Var tokens, std::span<const std::size_t> valid_len,
                               std::span<const num::Var> biases, num::Tensor* weights_out = nullptr);

/// Self-attention of the query tokens over {queries} plus `ns_tokens` when
/// given, then a feed-forward block. Both are pre-LN residual updates.
num::Var query_boosting(num::Tape& tape, ParameterStore& store, const ModelConfig& config, std::size_t layer,
                        num::Var queries, num::Var ns_tokens);

/// k_pool projections of the masked mean of `tokens`. [B x k_pool x D]
num::Var seq_pooling_tokens(num::Tape& tape, ParameterStore& store, const ModelConfig& config, num::Var tokens,
                            std::span<const std::size_t> valid_len);

/// MLP head over [flatten(Q) ; f]. Returns logits [B].
num::Var predict(num::Tape& tape, ParameterStore& store, const ModelConfig& config, num::Var queries, num::Var f);

}  // namespace backbone

/// Latent-query decoder with optional QueryPos/global/absolute positions and LENS.
class LatentQueryModel final : public CtrModel {
 public:
  explicit LatentQueryModel(ModelConfig config);
  num::Var logits(num::Tape& tape, const Batch& batch, ForwardTrace* trace = nullptr) override;
};

}  // namespace lensctr
