#pragma once

#include <span>
#include <vector>

#include "imac/graph.hpp"

// Differentiable operations. Every op validates shapes eagerly and throws
// DimensionError naming both operands.
//
// Matrices are rank-2 row-major; a rank-1 tensor of length n is accepted
// wherever a 1×n row is expected.
namespace imac::ops {

Var matmul(Var a, Var b);
Var transpose(Var a);

// Elementwise with broadcasting: b's shape must equal a's shape or be a
// suffix of it (b is repeated over a's leading axes).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);

Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var relu(Var a);
Var log_clamped(Var a, double floor);

// Row-wise softmax with max subtraction.
Var softmax_rows(Var x);

// Per-row normalisation to zero mean / unit variance, then gain and bias
// (both length n).
Var layer_norm(Var x, Var gain, Var bias, double eps);

// Reductions to a single-element tensor.
Var sum(Var a);
Var mean(Var a);
Var pick(Var a, std::size_t flat_index);

Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var reshape(Var a, Shape shape);

// Row i of the result is b[i] where take_b[i], else a[i].
Var select_rows(const std::vector<bool>& take_b, Var a, Var b);

// 1-D convolution along rows (time) with zero "same" padding:
//   y[t, m] = sum_k w[k, m] * x[t + k - K/2, m]
// w is K×M (one kernel per column, depthwise) or K×1 (shared kernel).
Var conv_rows(Var x, Var w);

// Non-overlapping average over `window` consecutive rows.
Var avg_pool_rows(Var x, std::size_t window);

// Cosine of the angle between a and b viewed as flat vectors.
Var cosine_similarity(Var a, Var b);

}  // namespace imac::ops
