#pragma once

#include <cstddef>

#include "amd/tape.hpp"
#include "amd/tensor.hpp"

/// Differentiable tensor operations. Each op records itself on the tape when
/// any input requires grad; otherwise it is a plain forward computation.
namespace amd::ops {

/// Stride-1 cross-correlation. input [N,Cin,H,W], weight [Cout,Cin,kh,kw] with
/// odd kernel extents, optional bias [Cout]. Output [N,Cout,H+2p-kh+1,W+2p-kw+1].
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t padding);

/// Per-channel stride-1 cross-correlation. weight [C,1,k,k], optional bias [C].
Tensor depthwise_conv2d(Tape& tape, const Tensor& input, const Tensor& weight, const Tensor& bias,
                        std::size_t padding);

/// input [N,Cin], weight [Cout,Cin], optional bias [Cout].
Tensor linear(Tape& tape, const Tensor& input, const Tensor& weight, const Tensor& bias);

Tensor relu(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);

/// Row-wise softmax of values / temperature over [N,L].
Tensor softmax_temp(Tape& tape, const Tensor& values, double temperature);

/// [N,C,H,W] -> [N,C], mean over the spatial extent.
Tensor global_avg_pool(Tape& tape, const Tensor& x);

/// Non-overlapping 2x2 mean pooling; H and W must be even.
Tensor avg_pool2(Tape& tape, const Tensor& x);

/// a [N,C,H,W] times b broadcast from [N,C], [N,C,1,1] or [N,1,H,W].
Tensor hadamard(Tape& tape, const Tensor& a, const Tensor& b);

/// Elementwise a + b for identical shapes.
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);

Tensor scale(Tape& tape, const Tensor& x, double factor);

/// Sum of all elements as a [1] tensor.
Tensor sum(Tape& tape, const Tensor& x);

/// Sum of (a - b)^2 over all elements, no normalization.
Tensor sum_squared_error(Tape& tape, const Tensor& a, const Tensor& b);

/// Mean binary cross-entropy with logits over all elements; labels in {0,1}.
Tensor bce_with_logits(Tape& tape, const Tensor& logits, const Tensor& labels);

/// Same values with a new shape; gradients pass through unchanged.
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);

}  // namespace amd::ops
