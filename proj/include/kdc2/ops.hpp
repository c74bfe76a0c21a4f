#pragma once

#include <span>
#include <vector>

#include "kdc2/autodiff.hpp"

// Differentiable primitives. Every op checks its operand shapes, rejects
// non-finite results and records itself on the tape of its first operand.
//
// Binary elementwise ops accept identical shapes or a rank-0 (scalar)
// operand on either side. Nothing else broadcasts; reshape explicitly.

namespace kdc2 {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var scale(Var x, double factor);
Var add_scalar(Var x, double offset);

Var relu(Var x);
Var exp(Var x);
Var log(Var x);

/// Sum / mean of every element, returned as a scalar.
Var sum(Var x);
Var mean(Var x);
/// [..., d] -> [...]
Var sum_last_axis(Var x);
/// Numerically stable log(sum(exp(x))) over every element.
Var logsumexp(Var x);

Var reshape(Var x, Shape shape);
/// [n, m] -> [m, n]
Var transpose(Var x);
/// Concatenates along the last axis. Leading dimensions must agree.
Var concat(const std::vector<Var>& parts);

/// [n, k] x [k, m] -> [n, m]
Var matmul(Var a, Var b);
/// x [n, in] * w [in, out] + b [out]
Var linear(Var x, Var w, Var b);

/// Valid-padding, stride-1 convolution.
/// x [B, H, W, C], w [KH, KW, C, O], b [O] -> [B, H-KH+1, W-KW+1, O]
Var conv2d(Var x, Var w, Var b);

/// 2x2 max-pool, stride 2, floor on odd sizes. [B, H, W, C] -> [B, H/2, W/2, C].
/// Ties go to the lowest flat index in the window; the gradient routes to that element.
Var max_pool2x2(Var x);

/// Mixes node features with a c x c operator: y[b,i,:] = sum_j a[i,j] * x[b,j,:].
/// a [c, c], x [B, c, F] -> [B, c, F]
Var graph_propagate(Var a, Var x);

/// Row L2 norms floored at `floor`. [n, d] -> [n]
Var row_norms(Var x, double floor = 1e-12);
/// Rows divided by max(||row||, floor). [n, d] -> [n, d]
Var l2_normalize_rows(Var x, double floor = 1e-12);
/// Row-wise cosine similarity of two [n, d] tensors -> [n].
Var cosine_similarity_rows(Var a, Var b, double floor = 1e-12);

/// Mean over the batch of -log softmax(logits)[label]. logits [B, K].
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

}  // namespace kdc2
