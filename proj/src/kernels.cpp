#include "dpu/kernels.hpp"

#include <Eigen/Core>
#include <cstring>

#include "dpu/errors.hpp"

namespace dpu::kern {

namespace {

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MapMat = Eigen::Map<RowMat<Real>>;
template <typename Real>
using CMapMat = Eigen::Map<const RowMat<Real>>;

struct ConvDims {
  std::size_t b, cin, h, w, cout, kh, kw, k, hw;
  long ph, pw;
};

template <typename Real>
ConvDims conv_dims(const Tensor<Real>& x, const Tensor<Real>& w) {
  if (x.rank() != 4) throw DimensionError("conv2d: input must be [B,C,H,W]");
  if (w.rank() != 4) throw DimensionError("conv2d: weight must be [Cout,Cin,kh,kw]");
  ConvDims d;
  d.b = x.dim(0);
  d.cin = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.cout = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  if (w.dim(1) != d.cin) throw DimensionError("conv2d: channel mismatch");
  if (d.kh % 2 == 0 || d.kw % 2 == 0) throw DimensionError("conv2d: kernels must be odd");
  if (d.h < d.kh || d.w < d.kw)
    throw DimensionError("conv2d: spatial dims smaller than the kernel");
  d.k = d.cin * d.kh * d.kw;
  d.hw = d.h * d.w;
  d.ph = static_cast<long>(d.kh / 2);
  d.pw = static_cast<long>(d.kw / 2);
  return d;
}

// col[(ci*kh + u)*kw + v][i*W + j] = x[ci][i + u - ph][j + v - pw], zero outside
template <typename Real>
void im2col(const Real* x, const ConvDims& d, Real* col) {
  const long h = static_cast<long>(d.h), w = static_cast<long>(d.w);
  for (std::size_t ci = 0; ci < d.cin; ++ci) {
    const Real* plane = x + ci * d.hw;
    for (std::size_t u = 0; u < d.kh; ++u) {
      for (std::size_t v = 0; v < d.kw; ++v) {
        Real* row = col + ((ci * d.kh + u) * d.kw + v) * d.hw;
        const long du = static_cast<long>(u) - d.ph;
        const long dv = static_cast<long>(v) - d.pw;
        for (long i = 0; i < h; ++i) {
          Real* dst = row + i * w;
          const long si = i + du;
          if (si < 0 || si >= h) {
            std::memset(dst, 0, sizeof(Real) * d.w);
            continue;
          }
          const Real* src = plane + si * w;
          const long lo = std::max<long>(0, -dv);
          const long hi_excl = std::min<long>(w, w - dv);
          if (lo > 0) std::memset(dst, 0, sizeof(Real) * static_cast<std::size_t>(lo));
          if (hi_excl > lo)
            std::memcpy(dst + lo, src + lo + dv, sizeof(Real) * static_cast<std::size_t>(hi_excl - lo));
          if (hi_excl < w)
            std::memset(dst + std::max<long>(hi_excl, lo), 0,
                        sizeof(Real) * static_cast<std::size_t>(w - std::max<long>(hi_excl, lo)));
        }
      }
    }
  }
}

// adjoint of im2col: scatter-add columns back onto the image grid
template <typename Real>
void col2im_add(const Real* col, const ConvDims& d, Real* x) {
  const long h = static_cast<long>(d.h), w = static_cast<long>(d.w);
  for (std::size_t ci = 0; ci < d.cin; ++ci) {
    Real* plane = x + ci * d.hw;
    for (std::size_t u = 0; u < d.kh; ++u) {
      for (std::size_t v = 0; v < d.kw; ++v) {
        const Real* row = col + ((ci * d.kh + u) * d.kw + v) * d.hw;
        const long du = static_cast<long>(u) - d.ph;
        const long dv = static_cast<long>(v) - d.pw;
        for (long i = 0; i < h; ++i) {
          const long si = i + du;
          if (si < 0 || si >= h) continue;
          const Real* src = row + i * w;
          Real* dst = plane + si * w;
          const long lo = std::max<long>(0, -dv);
          const long hi_excl = std::min<long>(w, w - dv);
          for (long j = lo; j < hi_excl; ++j) dst[j + dv] += src[j];
        }
      }
    }
  }
}

}  // namespace

template <typename Real>
void conv2d_same(const Tensor<Real>& x, const Tensor<Real>& w, Tensor<Real>& out) {
  const ConvDims d = conv_dims(x, w);
  out = Tensor<Real>({d.b, d.cout, d.h, d.w});
  std::vector<Real> col(d.k * d.hw);
  CMapMat<Real> wm(w.data(), static_cast<Eigen::Index>(d.cout), static_cast<Eigen::Index>(d.k));
  for (std::size_t b = 0; b < d.b; ++b) {
    im2col(x.data() + b * d.cin * d.hw, d, col.data());
    CMapMat<Real> cm(col.data(), static_cast<Eigen::Index>(d.k), static_cast<Eigen::Index>(d.hw));
    MapMat<Real> om(out.data() + b * d.cout * d.hw, static_cast<Eigen::Index>(d.cout),
                    static_cast<Eigen::Index>(d.hw));
    om.noalias() = wm * cm;
  }
}

template <typename Real>
void conv2d_same_grad_input(const Tensor<Real>& g_out, const Tensor<Real>& w, Tensor<Real>& g_x) {
  if (g_x.rank() != 4) throw DimensionError("conv2d_same_grad_input: g_x must be [B,C,H,W]");
  const ConvDims d = conv_dims(g_x, w);
  if (g_out.shape() != std::vector<std::size_t>{d.b, d.cout, d.h, d.w})
    throw DimensionError("conv2d_same_grad_input: g_out shape mismatch");
  std::vector<Real> col(d.k * d.hw);
  CMapMat<Real> wm(w.data(), static_cast<Eigen::Index>(d.cout), static_cast<Eigen::Index>(d.k));
  for (std::size_t b = 0; b < d.b; ++b) {
    CMapMat<Real> gm(g_out.data() + b * d.cout * d.hw, static_cast<Eigen::Index>(d.cout),
                     static_cast<Eigen::Index>(d.hw));
    MapMat<Real> cm(col.data(), static_cast<Eigen::Index>(d.k), static_cast<Eigen::Index>(d.hw));
    cm.noalias() = wm.transpose() * gm;
    col2im_add(col.data(), d, g_x.data() + b * d.cin * d.hw);
  }
}

template <typename Real>
void conv2d_same_grad_weight(const Tensor<Real>& x, const Tensor<Real>& g_out, Tensor<Real>& g_w) {
  if (g_w.rank() != 4) throw DimensionError("conv2d_same_grad_weight: g_w must be 4-d");
  const ConvDims d = conv_dims(x, g_w);
  if (g_out.shape() != std::vector<std::size_t>{d.b, d.cout, d.h, d.w})
    throw DimensionError("conv2d_same_grad_weight: g_out shape mismatch");
  std::vector<Real> col(d.k * d.hw);
  MapMat<Real> gw(g_w.data(), static_cast<Eigen::Index>(d.cout), static_cast<Eigen::Index>(d.k));
  for (std::size_t b = 0; b < d.b; ++b) {
    im2col(x.data() + b * d.cin * d.hw, d, col.data());
    CMapMat<Real> cm(col.data(), static_cast<Eigen::Index>(d.k), static_cast<Eigen::Index>(d.hw));
    CMapMat<Real> gm(g_out.data() + b * d.cout * d.hw, static_cast<Eigen::Index>(d.cout),
                     static_cast<Eigen::Index>(d.hw));
    gw.noalias() += gm * cm.transpose();
  }
}

namespace {

template <typename Real>
void check_in_shapes(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta) {
  if (x.rank() != 4) throw DimensionError("instance_norm: input must be [B,C,H,W]");
  const std::size_t c = x.dim(1);
  if (gamma.rank() != 1 || gamma.dim(0) != c || beta.rank() != 1 || beta.dim(0) != c)
    throw DimensionError("instance_norm: affine vectors must be length C");
  if (x.dim(2) * x.dim(3) < 2)
    throw DegenerateStatisticsError("instance_norm: needs at least 2 spatial elements");
}

}  // namespace

template <typename Real>
void instance_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                   Real eps, bool beta_inside, Tensor<Real>& out) {
  check_in_shapes(x, gamma, beta);
  out = Tensor<Real>(x.shape());
  const std::size_t bc = x.dim(0) * x.dim(1), c = x.dim(1), n = x.dim(2) * x.dim(3);
  for (std::size_t g = 0; g < bc; ++g) {
    const Real* src = x.data() + g * n;
    Real* dst = out.data() + g * n;
    Real mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += src[i];
    mean /= static_cast<Real>(n);
    Real var = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const Real d = src[i] - mean;
      var += d * d;
    }
    var /= static_cast<Real>(n);
    const Real istd = Real(1) / std::sqrt(var + eps);
    const Real ga = gamma[g % c], be = beta[g % c];
    if (beta_inside) {
      for (std::size_t i = 0; i < n; ++i) dst[i] = ga * ((src[i] - mean) * istd + be);
    } else {
      for (std::size_t i = 0; i < n; ++i) dst[i] = ga * (src[i] - mean) * istd + be;
    }
  }
}

template <typename Real>
void instance_norm_backward(const Tensor<Real>& x, const Tensor<Real>& gamma,
                            const Tensor<Real>& beta, Real eps, bool beta_inside,
                            const Tensor<Real>& g_out, Tensor<Real>& g_x, Tensor<Real>& g_gamma,
                            Tensor<Real>& g_beta) {
  check_in_shapes(x, gamma, beta);
  if (!g_out.same_shape(x)) throw DimensionError("instance_norm_backward: g_out shape mismatch");
  if (!g_x.same_shape(x) || g_gamma.shape() != gamma.shape() || g_beta.shape() != beta.shape())
    throw DimensionError("instance_norm_backward: gradient buffer shape mismatch");
  const std::size_t bc = x.dim(0) * x.dim(1), c = x.dim(1), n = x.dim(2) * x.dim(3);
  std::vector<Real> xhat(n);
  for (std::size_t g = 0; g < bc; ++g) {
    const Real* src = x.data() + g * n;
    const Real* go = g_out.data() + g * n;
    Real* gx = g_x.data() + g * n;
    Real mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += src[i];
    mean /= static_cast<Real>(n);
    Real var = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const Real d = src[i] - mean;
      var += d * d;
    }
    var /= static_cast<Real>(n);
    const Real istd = Real(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) xhat[i] = (src[i] - mean) * istd;

    const Real ga = gamma[g % c], be = beta[g % c];
    Real sum_go = 0, sum_go_xhat = 0;
    for (std::size_t i = 0; i < n; ++i) {
      sum_go += go[i];
      sum_go_xhat += go[i] * xhat[i];
    }
    if (beta_inside) {
      g_gamma[g % c] += sum_go_xhat + be * sum_go;
      g_beta[g % c] += ga * sum_go;
    } else {
      g_gamma[g % c] += sum_go_xhat;
      g_beta[g % c] += sum_go;
    }
    // both affine forms reach xhat through the same gamma factor
    const Real mean_g = ga * sum_go / static_cast<Real>(n);
    const Real mean_gx = ga * sum_go_xhat / static_cast<Real>(n);
    for (std::size_t i = 0; i < n; ++i)
      gx[i] += istd * (ga * go[i] - mean_g - xhat[i] * mean_gx);
  }
}

template <typename Real>
void relu(const Tensor<Real>& x, Tensor<Real>& out) {
  out = Tensor<Real>(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > Real(0) ? x[i] : Real(0);
}

template <typename Real>
void relu_backward(const Tensor<Real>& x, const Tensor<Real>& g_out, Tensor<Real>& g_x) {
  if (!g_out.same_shape(x) || !g_x.same_shape(x))
    throw DimensionError("relu_backward: shape mismatch");
  for (std::size_t i = 0; i < x.numel(); ++i)
    if (x[i] > Real(0)) g_x[i] += g_out[i];
}

#define DPU_INSTANTIATE_KERNELS(Real)                                                            \
  template void conv2d_same<Real>(const Tensor<Real>&, const Tensor<Real>&, Tensor<Real>&);      \
  template void conv2d_same_grad_input<Real>(const Tensor<Real>&, const Tensor<Real>&,           \
                                             Tensor<Real>&);                                     \
  template void conv2d_same_grad_weight<Real>(const Tensor<Real>&, const Tensor<Real>&,          \
                                              Tensor<Real>&);                                    \
  template void instance_norm<Real>(const Tensor<Real>&, const Tensor<Real>&,                    \
                                    const Tensor<Real>&, Real, bool, Tensor<Real>&);             \
  template void instance_norm_backward<Real>(const Tensor<Real>&, const Tensor<Real>&,           \
                                             const Tensor<Real>&, Real, bool,                    \
                                             const Tensor<Real>&, Tensor<Real>&, Tensor<Real>&,  \
                                             Tensor<Real>&);                                     \
  template void relu<Real>(const Tensor<Real>&, Tensor<Real>&);                                  \
  template void relu_backward<Real>(const Tensor<Real>&, const Tensor<Real>&, Tensor<Real>&);

DPU_INSTANTIATE_KERNELS(float)
DPU_INSTANTIATE_KERNELS(double)

}  // namespace dpu::kern
