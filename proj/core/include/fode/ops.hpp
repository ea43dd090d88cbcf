#pragma once

#include <optional>
#include <span>
#include <vector>

#include "fode/tensor.hpp"

namespace fode {

// All operators are single-threaded, loop-order-deterministic, and record
// themselves on the autodiff tape. Every op validates shapes up front and
// checks its output for NaN/Inf (finite inputs must produce finite outputs;
// anything else raises NumericsError naming the op).

// Cross-correlation of input [B,Cin,H,W] with weight [Cout,Cin,Kh,Kw].
// Output extents must divide exactly: (H + 2*padding - Kh) % stride == 0.
Tensor conv2d(const Tensor& input, const Tensor& weight,
              const std::optional<Tensor>& bias = std::nullopt,
              int stride = 1, int padding = 0);

// Per-channel spatial convolution: weight [C,1,Kh,Kw]; output channel c
// depends only on input channel c.
Tensor depthwise_conv2d(const Tensor& input, const Tensor& weight,
                        int stride = 1, int padding = 0);

// 1x1 channel-mixing convolution: weight [M,C,1,1]. Independent code path
// from conv2d so the two can be checked against each other.
Tensor pointwise_conv2d(const Tensor& input, const Tensor& weight);

// Group normalization over [B,C,H,W]: per (sample, group) zero mean / unit
// variance, then per-channel affine. No running statistics.
Tensor group_norm(const Tensor& input, int groups, const Tensor& gamma,
                  const Tensor& beta, float eps = 1e-5f);

Tensor relu(const Tensor& x);

// [B,C,H,W] -> [B,C] spatial mean.
Tensor avg_pool_global(const Tensor& x);

// x [B,F] * weight [O,F]^T + bias [O] -> [B,O].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Elementwise; shapes must match exactly (no broadcasting).
Tensor add(const Tensor& x, const Tensor& y);
Tensor mul(const Tensor& x, const Tensor& y);
Tensor scale(const Tensor& x, float s);

// Sum of all elements -> scalar.
Tensor sum(const Tensor& x);

// Mean cross-entropy over the batch, log-sum-exp stabilized.
// logits [B,classes], labels in [0, classes).
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

// Soft-target variant: targets [B,classes] are fixed probability rows
// (not differentiated through). Minimizing this is equivalent to minimizing
// KL(targets || softmax(logits)) up to the constant target entropy.
Tensor softmax_cross_entropy_soft(const Tensor& logits, const Tensor& targets);

// Row-wise softmax of logits [B,C] computed outside the tape (inference /
// teacher use only; not differentiable).
std::vector<float> softmax_rows(const Tensor& logits);

} // namespace fode
