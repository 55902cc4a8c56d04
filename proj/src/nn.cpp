#include "lensctr/nn.hpp"

#include <algorithm>
#include <cmath>

namespace lensctr::nn {

using num::Shape;
using num::Tape;
using num::Tensor;
using num::Var;

void declare_linear(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out) {
  store.add(prefix + ".w", {in, out}, InitSpec::xavier());
  store.add(prefix + ".b", {out}, InitSpec::zeros());
}

Var linear(Tape& tape, ParameterStore& store, const std::string& prefix, Var x) {
  return num::add(num::matmul(x, tape.param(store.at(prefix + ".w"))), tape.param(store.at(prefix + ".b")));
}

void declare_layer_norm(ParameterStore& store, const std::string& prefix, std::size_t dim) {
  store.add(prefix + ".g", {dim}, InitSpec::ones());
  store.add(prefix + ".b", {dim}, InitSpec::zeros());
}

Var layer_norm(Tape& tape, ParameterStore& store, const std::string& prefix, Var x) {
  return num::layer_norm(x, tape.param(store.at(prefix + ".g")), tape.param(store.at(prefix + ".b")));
}

void declare_mlp(ParameterStore& store, const std::string& prefix, std::size_t in,
                 const std::vector<std::size_t>& sizes) {
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    declare_linear(store, prefix + "." + std::to_string(i), in, sizes[i]);
    in = sizes[i];
  }
}

Var mlp(Tape& tape, ParameterStore& store, const std::string& prefix, Var x, std::size_t n_layers) {
  for (std::size_t i = 0; i < n_layers; ++i) {
    x = linear(tape, store, prefix + "." + std::to_string(i), x);
    if (i + 1 < n_layers) x = num::relu(x);
  }
  return x;
}

void declare_attention(ParameterStore& store, const std::string& prefix, std::size_t d) {
  for (const char* p : {"q", "k", "v", "o"}) declare_linear(store, prefix + "." + p, d, d);
}

Var split_heads(Var x, std::size_t heads) {
  const Shape& s = x.shape();
  return num::permute(num::reshape(x, {s[0], s[1], heads, s[2] / heads}), {0, 2, 1, 3});
}

Var merge_heads(Var x) {
  const Shape& s = x.shape();
  return num::reshape(num::permute(x, {0, 2, 1, 3}), {s[0], s[2], s[1] * s[3]});
}

Var attention(Tape& tape, ParameterStore& store, const std::string& prefix, const AttentionInputs& in,
              Tensor* weights_out) {
  const std::size_t b = in.queries.shape()[0];
  const std::size_t tq = in.queries.shape()[1];
  const std::size_t tk = in.keys.shape()[1];
  const std::size_t d = in.queries.shape()[2];
  const std::size_t h = in.heads;
  const std::size_t dh = d / h;

  Var qh = split_heads(linear(tape, store, prefix + ".q", in.queries), h);
  Var kh = split_heads(linear(tape, store, prefix + ".k", in.keys), h);
  Var vh = split_heads(linear(tape, store, prefix + ".v", in.keys), h);

  Var logits = num::scale(num::matmul(qh, kh, /*transpose_b=*/true), 1.0 / std::sqrt(static_cast<double>(dh)));
  if (in.bias.valid()) logits = num::add(logits, in.bias);

  const bool masked = !in.valid_keys.empty();
  const bool any_empty =
      masked && std::any_of(in.valid_keys.begin(), in.valid_keys.end(), [](std::size_t n) { return n == 0; });
  const std::size_t cols = tk + (any_empty ? 1 : 0);
  num::Mask mask(b * h * tq * cols, 1);
  if (masked) {
    for (std::size_t bi = 0; bi < b; ++bi) {
      const std::size_t n = std::min(in.valid_keys[bi], tk);
      for (std::size_t r = 0; r < h * tq; ++r) {
        std::uint8_t* row = mask.data() + (bi * h * tq + r) * cols;
        for (std::size_t c = n; c < tk; ++c) row[c] = 0;
        if (any_empty) row[tk] = n == 0 ? 1 : 0;
      }
    }
  }
  if (any_empty) {
    std::vector<Var> parts{logits, tape.constant(Tensor({b, h, tq, 1}))};
    logits = num::concat(parts, 3);
  }
  Var weights = num::softmax_masked(logits, mask);
  if (any_empty) weights = num::slice(weights, 3, 0, tk);
  if (weights_out) *weights_out = weights.value();

  Var ctx = merge_heads(num::matmul(weights, vh));
  return linear(tape, store, prefix + ".o", ctx);
}

}  // namespace lensctr::nn
