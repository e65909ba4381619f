#pragma once
#include "dpu/tensor.hpp"

namespace dpu::kern {

// Numeric kernels shared by the inference path and the tape primitives, so
// the two can never drift apart. Layouts: activations [B,C,H,W], conv
// weights [Cout,Cin,kh,kw] (odd kernels, stride 1, same-size zero padding),
// per-channel affine vectors [C]. Backward kernels accumulate (+=) into the
// gradient buffers they are given.

template <typename Real>
void conv2d_same(const Tensor<Real>& x, const Tensor<Real>& w, Tensor<Real>& out);

template <typename Real>
void conv2d_same_grad_input(const Tensor<Real>& g_out, const Tensor<Real>& w,
                            Tensor<Real>& g_x);

template <typename Real>
void conv2d_same_grad_weight(const Tensor<Real>& x, const Tensor<Real>& g_out,
                             Tensor<Real>& g_w);

// out = gamma*(xhat + beta) when beta_inside (formula as printed in the IN
// definition we follow), or the conventional gamma*xhat + beta otherwise;
// xhat = (x - mean)/sqrt(var + eps) with per-(sample, channel) statistics
// over the spatial dimensions.
template <typename Real>
void instance_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                   Real eps, bool beta_inside, Tensor<Real>& out);

template <typename Real>
void instance_norm_backward(const Tensor<Real>& x, const Tensor<Real>& gamma,
                            const Tensor<Real>& beta, Real eps, bool beta_inside,
                            const Tensor<Real>& g_out, Tensor<Real>& g_x, Tensor<Real>& g_gamma,
                            Tensor<Real>& g_beta);

template <typename Real>
void relu(const Tensor<Real>& x, Tensor<Real>& out);

// subgradient at 0 is fixed to 0
template <typename Real>
void relu_backward(const Tensor<Real>& x, const Tensor<Real>& g_out, Tensor<Real>& g_x);

}  // namespace dpu::kern
