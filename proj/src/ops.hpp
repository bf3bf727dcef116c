#pragma once

#include <vector>

#include "tensor.hpp"

namespace catface {

// All operations are pure: inputs are never mutated and outputs own fresh
// storage. When a GradTape is active and an input requires gradients, the op
// records a backward closure. Summation loops run in fixed row-major order,
// so forward passes are bit-deterministic.

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor add_bias(const Tensor& x, const Tensor& b);  // broadcast over the last axis
Tensor gelu(const Tensor& x);                       // exact erf form
Tensor sigmoid(const Tensor& x);
Tensor detach(const Tensor& x);  // same values, no gradient history

// ---- reductions ----
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// ---- shape ----
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);  // rank-2
Tensor concat(const std::vector<Tensor>& xs, int axis);
std::vector<Tensor> split(const Tensor& x, int axis, int parts);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);  // [MxK]·[KxN]
Tensor softmax_rows(const Tensor& x);             // rank-2, max-subtracted
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);

// ---- convolution & pooling ----
// Feature maps are HxWxC, or BxHxWxC when batched; the output keeps the
// input's rank. Convolutions use zero "same" padding and stride 1.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b);  // w: kh x kw x Cin x Cout
Tensor pointwise_conv(const Tensor& x, const Tensor& w, const Tensor& b);  // w: Cin x Cout
// Per-channel kernels, restricted to the 3x3 / 1x7 / 7x1 shapes the fusion
// block uses. k: kh x kw x C, optional bias of C.
Tensor depthwise_conv(const Tensor& x, const Tensor& k, const Tensor& b = Tensor());
Tensor avg_pool2(const Tensor& x);       // 2x2, stride 2; H and W must be even
Tensor global_avg_pool(const Tensor& x); // -> BxC (or 1xC-like [C] for rank-3)
Tensor channel_mean(const Tensor& x);    // -> ...x1
Tensor channel_max(const Tensor& x);     // -> ...x1

// ---- normalization ----
struct BatchNormState {
  Tensor gamma, beta;               // learnable
  Tensor running_mean, running_var; // buffers, updated in training mode
  static BatchNormState init(int channels);
};

// Statistics are taken per channel over every other axis (batch and spatial).
// Training mode normalizes with batch statistics and, when update_running is
// set, folds them into the running buffers; eval mode uses the buffers.
Tensor batchnorm(const Tensor& x, BatchNormState& bn, bool training, bool update_running = true,
                 double eps = 1e-5, double momentum = 0.1);

void append_params(BatchNormState& bn, const std::string& prefix, std::vector<NamedTensor>& out);
void append_buffers(BatchNormState& bn, const std::string& prefix, std::vector<NamedTensor>& out);

}  // namespace catface
