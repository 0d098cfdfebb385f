#pragma once

#include <cstddef>

#include "lgr/autograd.hpp"

// Differentiable operations on tape values.
//
// Broadcasting aligns shapes from the trailing axis; each aligned pair of
// extents must be equal or one of them 1. Nothing is reshaped implicitly.
namespace lgr::ops {

enum class Activation { relu, sigmoid, softmax };

/// Matrix product with batch handling on rank-3 operands:
///   [m,k]x[k,n], [B,m,k]x[k,n], [m,k]x[B,k,n], [B,m,k]x[B,k,n].
Var matmul(const Var& a, const Var& b);

Var relu(const Var& x);
Var sigmoid(const Var& x);
Var softmax(const Var& x, std::size_t axis);
Var activation(const Var& x, Activation kind, std::size_t axis = 0);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var add_scalar(const Var& x, double c);
/// Elementwise x^p for x > 0.
Var power(const Var& x, double p);

Var broadcast_to(const Var& x, const Shape& shape);
Var concat_last_axis(const Var& a, const Var& b);
/// Swaps the last two axes (rank 2 or 3).
Var transpose(const Var& x);
Var reshape(const Var& x, const Shape& shape);

/// Sum of all elements as a [1] tensor.
Var sum(const Var& x);
/// Sum over the last axis, keeping it with extent 1.
Var sum_last_axis(const Var& x);
Var mean(const Var& x);
Var mse(const Var& pred, const Var& target);
/// Squared Frobenius norm.
Var sum_squares(const Var& x);

/// NHWC convolution. weight is [k*k*Cin, Cout] laid out (ky, kx, cin); bias is [Cout].
Var conv2d(const Var& x, const Var& weight, const Var& bias, std::size_t kernel,
           std::size_t stride, std::size_t pad);
/// 2x2 average pooling over H and W of an NHWC tensor (H, W even).
Var avg_pool2(const Var& x);
/// Nearest-neighbour 2x upsampling of an NHWC tensor.
Var upsample2(const Var& x);

}  // namespace lgr::ops
