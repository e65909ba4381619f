#pragma once
#include "dpu/tensor.hpp"

namespace dpu {

// 10*log10(1/MSE) against peak 1.0; returns +inf when the images match
// exactly. Throws DimensionError on shape mismatch.
double psnr(const TensorD& x_hat, const TensorD& x);

double mse(const TensorD& a, const TensorD& b);

}  // namespace dpu
