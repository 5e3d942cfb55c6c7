#pragma once

#include <vector>

#include "specdiff/nn/autograd.hpp"

namespace specdiff::nn {

// Elementwise arithmetic. Binary ops require identical shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var add_scalar(const Var& x, double value);

// Broadcasts over the last axis: x [..., C], v [C].
Var add_lastdim(const Var& x, const Var& v);
Var mul_lastdim(const Var& x, const Var& v);
// Broadcasts a per-example vector over all middle axes: x [B, ..., C], v [B, C].
Var add_per_batch(const Var& x, const Var& v);
// Multiplies x [B, T, ...] by a constant mask [B, T], zeroing padded positions.
Var mul_mask(const Var& x, const Tensor& mask);

Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope = 0.2);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var square(const Var& x);
Var abs(const Var& x);
Var exp(const Var& x);

/// x [..., K] times w [K, M].
Var matmul(const Var& x, const Var& w);
/// x [..., K] times w [K, M] plus b [M].
Var linear(const Var& x, const Var& w, const Var& b);
/// Batched product over the leading axis: a [G, m, k] times b [G, k, n],
/// or b [G, n, k] transposed when `transpose_b` is set.
Var bmm(const Var& a, const Var& b, bool transpose_b);

/// Same-length 1-D convolution over time. x [B, T, Cin], w [K * Cin, Cout], b [Cout].
Var conv1d(const Var& x, const Var& w, const Var& b, int kernel, int pad);

struct Conv2dGeometry {
  int kernel_h = 3;
  int kernel_w = 3;
  int stride_h = 1;
  int stride_w = 1;
  int pad_h = 1;
  int pad_w = 1;
};
/// x [B, H, W, Cin], w [kh * kw * Cin, Cout], b [Cout].
Var conv2d(const Var& x, const Var& w, const Var& b, const Conv2dGeometry& g);

/// Normalises over the last axis, then applies gamma [C] and beta [C].
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

/// Softmax over the last axis of scores [B * heads, Tq, Tk]; keys at or past
/// key_lengths[b] receive probability exactly zero.
Var masked_softmax(const Var& scores, const std::vector<int>& key_lengths, int heads);

Var reshape(const Var& x, Shape shape);
Var permute(const Var& x, const std::vector<int>& order);
Var concat_lastdim(const std::vector<Var>& xs);
Var slice_lastdim(const Var& x, int start, int length);
/// Concatenates along axis 0.
Var concat_batch(const std::vector<Var>& xs);
/// Rows [start, start + count) along axis 0.
Var slice_batch(const Var& x, int start, int count);

/// out[b, f] = x[b, index[b][f]] for x [B, P, C]; indices of -1 and rows past
/// the end of index[b] give zero rows. Output has `out_len` rows per example.
Var gather_rows(const Var& x, const std::vector<std::vector<int>>& index, int out_len);
/// Looks up table [V, D] rows for ids, padding every sequence to `out_len`.
Var embedding(const Var& table, const std::vector<std::vector<int>>& ids, int out_len);

/// 2x average pooling of x [B, H, W, C] on each axis longer than one; odd
/// trailing rows/columns are dropped.
Var avg_pool2d(const Var& x);
/// Mean over every axis between the first and the last: [B, ..., C] -> [B, C].
Var mean_spatial(const Var& x);
Var sum_all(const Var& x);
Var mean_all(const Var& x);

/// Appends one channel to x [B, H, W, C] holding the mean over (h, w, c) of
/// the population standard deviation across the batch.
Var minibatch_stddev(const Var& x);

/// Same value, cut from the graph.
Var detach(const Var& x);

}  // namespace specdiff::nn
