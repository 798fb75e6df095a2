#pragma once

#include "adafm/tensor.hpp"

namespace adafm {

struct Conv2dParams {
    int stride = 1;
    int pad = 0;
    int groups = 1;
};

/// Grouped 2-D convolution with zero padding.
///
/// x: (n, ci, h, w), weight: (co, ci / groups, k, k), bias: (co, 1, 1, 1).
/// Output spatial size is floor((h + 2 * pad - k) / stride) + 1. Reduction
/// order per output element is fixed (input channel, then kernel row, then
/// kernel column), so results are bit-stable from run to run.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dParams p = {});

Tensor relu(const Tensor& x);

/// Depth-to-space: (n, c * r * r, h, w) -> (n, c, h * r, w * r).
Tensor pixel_shuffle(const Tensor& x, int r);
/// Space-to-depth; exact inverse of pixel_shuffle.
Tensor pixel_unshuffle(const Tensor& x, int r);

Tensor add(const Tensor& x, const Tensor& y);

/// Sum of all elements as a 1x1x1x1 tensor.
Tensor sum(const Tensor& x);

/// Mean absolute error; subgradient 0 where pred == target.
Tensor l1_loss(const Tensor& pred, const Tensor& target);

/// Mean squared error.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

}  // namespace adafm
