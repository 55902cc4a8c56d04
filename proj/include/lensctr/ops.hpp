#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lensctr/tape.hpp"

namespace lensctr::num {

/// Per-element validity flags, laid out like the tensor they mask.
using Mask = std::vector<std::uint8_t>;

// Shape errors throw std::invalid_argument naming both operand shapes.

/// a: [..., m, k]. b: [k, n] shared across the leading dims of a, or
/// [..., k, n] with the same leading dims. With transpose_b, b holds [.., n, k].
Var matmul(Var a, Var b, bool transpose_b = false);

/// Elementwise ops; b must broadcast to a's shape (numpy rules, a's shape wins).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);

Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var sigmoid(Var a);
Var relu(Var a);

/// Normalises the last axis, then applies gamma/beta of shape [last].
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

Var sum(Var x, std::size_t axis);
Var mean(Var x, std::size_t axis);
Var sum_all(Var x);

Var concat(std::span<const Var> parts, std::size_t axis);
Var reshape(Var x, Shape shape);
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);
Var permute(Var x, const std::vector<std::size_t>& order);
Var broadcast_to(Var x, Shape shape);

/// Softmax over the last axis restricted to valid entries. Masked entries are
/// exactly zero. A row without valid entries throws "empty attention row".
Var softmax_masked(Var logits, const Mask& valid);
Tensor softmax_masked(const Tensor& logits, const Mask& valid);

/// Row lookup into table [V, d]. Negative indices yield a zero row and
/// receive no gradient. Output shape is leading + [d].
Var gather_rows(Var table, std::span<const std::int64_t> rows, Shape leading);

/// Mean binary cross-entropy evaluated from logits: softplus(z) - y z.
Var bce_with_logits(Var logits, std::span<const double> labels);

}  // namespace lensctr::num
