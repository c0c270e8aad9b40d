#pragma once

#include "gttdi/rng.hpp"
#include "gttdi/tensor.hpp"

#include <vector>

namespace gttdi {

// Catalog of the differentiable primitives provided by this engine.
std::vector<std::string> primitive_names();

// ---- arithmetic ------------------------------------------------------

// Elementwise add. b must have the same shape as a, or a shape that is a
// suffix of a's shape (bias broadcast over the leading axes).
Var add(Var a, Var b);
Var sub(Var a, Var b);
// Elementwise multiply, same broadcast rule as add.
Var mul(Var a, Var b);
// Elementwise divide, same shapes only.
Var div(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);

// 2-D matrix product (m,k)x(k,n) -> (m,n).
Var matmul(Var a, Var b);
Var transpose(Var a);

// ---- pointwise nonlinearities ---------------------------------------

Var exp_op(Var a);
Var log_op(Var a);
Var sigmoid(Var a);
Var leaky_relu(Var a, double negative_slope);
Var clamp_min(Var a, double lo);

// ---- reductions and shape ops ---------------------------------------

Var sum_all(Var a);
Var mean_all(Var a);
// Sum / mean over the last axis; the axis is dropped.
Var sum_last(Var a);
Var mean_last(Var a);
// Concatenate along `axis` (negative counts from the back).
Var concat(const std::vector<Var>& parts, int axis);
Var reshape(Var a, std::vector<int> new_shape);
// Rows [start, start+len) along the first axis.
Var slice_rows(Var a, int start, int len);

// ---- indexed row ops (message passing plumbing) ----------------------

// out[w,:] = a[idx[w],:]
Var gather_rows(Var a, const std::vector<int>& idx);
// out (n_rows, C); out[idx[w],:] += a[w,:]
Var scatter_add_rows(Var a, const std::vector<int>& idx, int n_rows);
// out[r,c] = a[r,c] * v[r]; v has shape (R) or (R,1).
Var scale_rows(Var a, Var v);

// ---- normalized exponential scores ------------------------------------

// Softmax over the last axis.
Var softmax(Var a);

// ---- structured layers ------------------------------------------------

// 1-D convolution along the last axis with zero-filled same padding.
// x: (N, C_in, L), w: (C_out, C_in, ks) with ks odd, b: (C_out).
Var conv1d_same(Var x, Var w, Var b);

// Batch normalization over the feature axis of x: (R, F). Training mode
// normalizes with batch statistics and updates the running buffers in
// place; eval mode applies the frozen running statistics.
Var batch_norm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
               bool train, double momentum, double eps);

// Layer normalization over the last axis of x: (R, F).
Var layer_norm(Var x, Var gamma, Var beta, double eps);

// Inverted dropout; identity in eval mode. Mask is drawn from `rng`.
Var dropout(Var x, double p, bool train, Rng& rng);

} // namespace gttdi
