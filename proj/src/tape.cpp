#include "dpu/tape.hpp"

#include <cmath>
#include <complex>
#include <sstream>

#include "dpu/errors.hpp"
#include "dpu/fft.hpp"
#include "dpu/kernels.hpp"
#include "dpu/rng.hpp"

namespace dpu::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::Conv2dSame: return "conv2d-same";
    case Op::InstanceNorm: return "instance-norm";
    case Op::Relu: return "relu";
    case Op::Add: return "add";
    case Op::Scale: return "scale";
    case Op::ScaleConst: return "scale-const";
    case Op::Matvec: return "matvec";
    case Op::DenseAffine: return "dense-affine";
    case Op::Fft2: return "fft2";
    case Op::Ifft2: return "ifft2";
    case Op::ComplexModulus: return "complex-modulus";
    case Op::ElementwiseMul: return "elementwise-mul";
    case Op::Reshape: return "reshape";
    case Op::L2Loss: return "l2-loss";
    case Op::MaskedSelect: return "masked-select";
    case Op::MaskedScatter: return "masked-scatter";
    case Op::Softplus: return "softplus";
    case Op::AmpGradStep: return "amp-grad-step";
  }
  return "unknown";
}

namespace {

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Real>
std::pair<std::size_t, std::size_t> batch_cols(const Tensor<Real>& x) {
  if (x.rank() == 1) return {1, x.dim(0)};
  if (x.rank() == 2) return {x.dim(0), x.dim(1)};
  throw DimensionError("matvec: input must be rank 1 or 2");
}

}  // namespace

template <typename Real>
typename Tape<Real>::Id Tape<Real>::check(Id id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
    throw Error("tape: node id out of range");
  return id;
}

template <typename Real>
typename Tape<Real>::Id Tape<Real>::push(Op op, std::initializer_list<Id> inputs, NodeAux aux,
                                         std::string name) {
  Node n;
  n.op = op;
  n.arity = static_cast<int>(inputs.size());
  int k = 0;
  for (Id in : inputs) {
    n.in[static_cast<std::size_t>(k++)] = check(in);
    n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(in)].needs_grad;
  }
  n.aux = std::move(aux);
  n.name = std::move(name);
  if (op == Op::Leaf) n.needs_grad = true;
  nodes_.push_back(std::move(n));
  const Id id = static_cast<Id>(nodes_.size() - 1);
  if (op != Op::Leaf && op != Op::Constant) compute(nodes_.back());
  return id;
}

template <typename Real>
typename Tape<Real>::Id Tape<Real>::leaf(Tensor<Real> value, std::string name) {
  NodeAux aux;
  const Id id = push(Op::Leaf, {}, aux, std::move(name));
  nodes_.back().value = std::move(value);
  leaves_.push_back(id);
  return id;
}

template <typename Real>
typename Tape<Real>::Id Tape<Real>::constant(Tensor<Real> value) {
  NodeAux aux;
  const Id id = push(Op::Constant, {}, aux);
  nodes_.back().value = std::move(value);
  return id;
}

template <typename Real>
typename Tape<Real>::Id Tape<Real>::conv2d_same(Id x, Id w) {
  return push(Op::Conv2dSame, {x, w}, {});
}

template <typename Real>
typename Tape<Real>::Id Tape<Real>::instance_norm(Id x, Id gamma, Id beta, Real eps,
                                                  bool beta_inside) {
  NodeAux aux;
  aux.eps = eps;
  aux.flag = beta_inside;
  return push(Op::InstanceNorm, {x, gamma, beta}, aux);
}

template <typename Real>
typename Tape<Real>::Id Tape<Real>::relu(Id x) {
  return push(Op::Relu, {x}, {});
}

template <typename Real>
typename Tape<Real>::Id Tape<Real>::add(Id a, Id b) {
  if (!value(a).same_shape(value(b))) throw DimensionError("add: shape mismatch");
  return push(Op::Add, {a, b}, {});
}

template <typename Real>
typename Tape<Real>::Id Tape<Real>::scale(Id x, Id s, Real factor) {
  if (value(s).numel() != 1) throw DimensionError("scale: scale input must be a scalar node");
  NodeAux aux;
  aux.scalar = factor;
  return push(Op::Scale, {x, s}, aux);
}

template <typename Real>
typename Tape<Real>::Id Tape<Real>::scale_const(Id x, Real c) {
  NodeAux aux;
  aux.scalar = c;
  return push(Op::ScaleConst, {x}, aux);
}

template <typename Real>
typename Tape<Real>::Id Tape<Real>::matvec(MatPtr a, Id x, bool transpose) {
  if (!a) throw ParameterError("matvec: null matrix");
  const auto [b, cols] = batch_cols(value(x));
  (void)b;
  const auto need = static_cast<std::size_t>(transpose ? a->rows() : a->cols());
  if (cols != need) throw DimensionError("matvec: vector length does not match matrix");
  NodeAux aux;
  aux.matrix = std::move(a);
  aux.flag = transpose;
  return push(Op::Matvec, {x}, aux);
}

template <typename Real>
typename Tape<Real>::Id Tape<Real>::dense_affine(Id a, Id x, Id b) {
  const auto& av = value(a);
  const auto& xv = value(x);
  const auto& bv = value(b);
  if (av.rank() != 2 || xv.rank() != 1 || bv.rank() != 1 || av.dim(1) != xv.dim(0) ||
      av.dim(0) != bv.dim(0))
    throw DimensionError("dense_affine: need A [m,n], x [n], b [m]");
  return push(Op::DenseAffine, {a, x, b}, {});
}

template <typename Real>
typename Tape<Real>::Id Tape<Real>::fft2(Id x) {
  if (value(x).rank() != 3 || value(x).dim(0) != 2)
    throw DimensionError("fft2: expected complex pair [2,H,W]");
  return push(Op::Fft2, {x}, {});
}

template <typename Real>
typename Tape<Real>::Id Tape<Real>::ifft2(Id x) {
  if (value(x).rank() != 3 || value(x).dim(0) != 2)
    throw DimensionError("ifft2: expected complex pair [2,H,W]");
  return push(Op::Ifft2, {x}, {});
}

template <typename Real>
typename Tape<Real>::Id Tape<Real>::complex_modulus(Id x) {
  if (value(x).rank() < 2 || value(x).dim(0) != 2)
    throw DimensionError("complex_modulus: expected leading pair dimension");
  return push(Op::ComplexModulus, {x}, {});
}

template <typename Real>
typename Tape<Real>::Id Tape<Real>::elementwise_mul(Id a, Id b) {
  if (!value(a).same_shape(value(b))) throw DimensionError("elementwise_mul: shape mismatch");
  return push(Op::ElementwiseMul, {a, b}, {});
}

template <typename Real>
typename Tape<Real>::Id Tape<Real>::reshape(Id x, std::vector<std::size_t> shape) {
  if (Tensor<Real>::numel_of(shape) != value(x).numel())
    throw DimensionError("reshape: element count mismatch");
  NodeAux aux;
  const Id id = push(Op::Reshape, {x}, aux);
  nodes_.back().value = value(x).reshaped(std::move(shape));
  return id;
}

template <typename Real>
typename Tape<Real>::Id Tape<Real>::l2_loss(Id a, Id b) {
  if (!value(a).same_shape(value(b))) throw DimensionError("l2_loss: shape mismatch");
  return push(Op::L2Loss, {a, b}, {});
}

template <typename Real>
typename Tape<Real>::Id Tape<Real>::masked_select(Id x, const Mask& mask) {
  const auto& xv = value(x);
  if (xv.rank() < 2 || xv.dim(xv.rank() - 2) != mask.h || xv.dim(xv.rank() - 1) != mask.w)
    throw DimensionError("masked_select: trailing dims must match the mask");
  NodeAux aux;
  aux.mask = std::make_shared<Mask>(mask);
  return push(Op::MaskedSelect, {x}, aux);
}

template <typename Real>
typename Tape<Real>::Id Tape<Real>::masked_scatter(Id x, const Mask& mask) {
  const auto& xv = value(x);
  if (xv.rank() < 1 || xv.dim(xv.rank() - 1) != mask.count())
    throw DimensionError("masked_scatter: trailing dim must equal the mask count");
  NodeAux aux;
  aux.mask = std::make_shared<Mask>(mask);
  return push(Op::MaskedScatter, {x}, aux);
}

template <typename Real>
typename Tape<Real>::Id Tape<Real>::softplus(Id x) {
  return push(Op::Softplus, {x}, {});
}

template <typename Real>
typename Tape<Real>::Id Tape<Real>::amp_grad_step(Id x, const FidelityTerm& term,
                                                  double eps_mag) {
  const auto& xv = value(x);
  if (term.kind != FidelityKind::Amplitude || term.cdp == nullptr)
    throw FidelityKindError("amp_grad_step: term is not an amplitude term");
  if (xv.rank() != 2 || xv.dim(0) != term.cdp->h() || xv.dim(1) != term.cdp->w())
    throw DimensionError("amp_grad_step: image shape does not match the model");
  NodeAux aux;
  aux.term = std::make_shared<FidelityTerm>(term);
  aux.eps_mag = eps_mag;
  return push(Op::AmpGradStep, {x}, aux);
}

// --- forward ---------------------------------------------------------------------

template <typename Real>
void Tape<Real>::compute(Node& n) {
  auto in = [&](int i) -> const Tensor<Real>& {
    return nodes_[static_cast<std::size_t>(n.in[static_cast<std::size_t>(i)])].value;
  };
  switch (n.op) {
    case Op::Leaf:
    case Op::Constant:
      break;
    case Op::Conv2dSame:
      kern::conv2d_same(in(0), in(1), n.value);
      break;
    case Op::InstanceNorm:
      kern::instance_norm(in(0), in(1), in(2), n.aux.eps, n.aux.flag, n.value);
      break;
    case Op::Relu:
      kern::relu(in(0), n.value);
      break;
    case Op::Add: {
      const auto& a = in(0);
      const auto& b = in(1);
      n.value = Tensor<Real>(a.shape());
      for (std::size_t i = 0; i < a.numel(); ++i) n.value[i] = a[i] + b[i];
      break;
    }
    case Op::Scale: {
      const Real s = n.aux.scalar * in(1)[0];
      const auto& x = in(0);
      n.value = Tensor<Real>(x.shape());
      for (std::size_t i = 0; i < x.numel(); ++i) n.value[i] = s * x[i];
      break;
    }
    case Op::ScaleConst: {
      const auto& x = in(0);
      n.value = Tensor<Real>(x.shape());
      for (std::size_t i = 0; i < x.numel(); ++i) n.value[i] = n.aux.scalar * x[i];
      break;
    }
    case Op::Matvec: {
      const auto& x = in(0);
      const auto [b, cols] = batch_cols(x);
      const Mat& a = *n.aux.matrix;
      const auto rows_out = static_cast<std::size_t>(n.aux.flag ? a.cols() : a.rows());
      n.value = Tensor<Real>(x.rank() == 1 ? std::vector<std::size_t>{rows_out}
                                           : std::vector<std::size_t>{b, rows_out});
      Eigen::Map<const RowMat<Real>> xm(x.data(), static_cast<Eigen::Index>(b),
                                        static_cast<Eigen::Index>(cols));
      Eigen::Map<RowMat<Real>> om(n.value.data(), static_cast<Eigen::Index>(b),
                                  static_cast<Eigen::Index>(rows_out));
      if (n.aux.flag)
        om.noalias() = xm * a;  // per row: A^T x
      else
        om.noalias() = xm * a.transpose();  // per row: A x
      break;
    }
    case Op::DenseAffine: {
      const auto& a = in(0);
      const auto& x = in(1);
      const auto& b = in(2);
      const std::size_t m = a.dim(0), k = a.dim(1);
      n.value = Tensor<Real>({m});
      Eigen::Map<const RowMat<Real>> am(a.data(), static_cast<Eigen::Index>(m),
                                        static_cast<Eigen::Index>(k));
      Eigen::Map<const Eigen::Vector<Real, Eigen::Dynamic>> xv(x.data(),
                                                               static_cast<Eigen::Index>(k));
      Eigen::Map<const Eigen::Vector<Real, Eigen::Dynamic>> bv(b.data(),
                                                               static_cast<Eigen::Index>(m));
      Eigen::Map<Eigen::Vector<Real, Eigen::Dynamic>> ov(n.value.data(),
                                                         static_cast<Eigen::Index>(m));
      ov.noalias() = am * xv + bv;
      break;
    }
    case Op::Fft2:
    case Op::Ifft2: {
      const auto& x = in(0);
      const std::size_t h = x.dim(1), w = x.dim(2), hw = h * w;
      std::vector<std::complex<Real>> buf(hw);
      for (std::size_t i = 0; i < hw; ++i) buf[i] = {x[i], x[hw + i]};
      fft::fft2(buf.data(), h, w, n.op == Op::Ifft2);
      n.value = Tensor<Real>(x.shape());
      for (std::size_t i = 0; i < hw; ++i) {
        n.value[i] = buf[i].real();
        n.value[hw + i] = buf[i].imag();
      }
      break;
    }
    case Op::ComplexModulus: {
      const auto& x = in(0);
      const std::size_t k = x.numel() / 2;
      std::vector<std::size_t> shape(x.shape().begin() + 1, x.shape().end());
      n.value = Tensor<Real>(shape);
      for (std::size_t i = 0; i < k; ++i)
        n.value[i] = std::hypot(x[i], x[k + i]);
      break;
    }
    case Op::ElementwiseMul: {
      const auto& a = in(0);
      const auto& b = in(1);
      n.value = Tensor<Real>(a.shape());
      for (std::size_t i = 0; i < a.numel(); ++i) n.value[i] = a[i] * b[i];
      break;
    }
    case Op::Reshape: {
      auto shape = n.value.shape();  // fixed at build time
      n.value = in(0).reshaped(std::move(shape));
      break;
    }
    case Op::L2Loss: {
      const auto& a = in(0);
      const auto& b = in(1);
      Real acc = 0;
      for (std::size_t i = 0; i < a.numel(); ++i) {
        const Real d = a[i] - b[i];
        acc += d * d;
      }
      n.value = Tensor<Real>::scalar(acc / static_cast<Real>(a.numel()));
      break;
    }
    case Op::MaskedSelect: {
      const auto& x = in(0);
      const Mask& m = *n.aux.mask;
      const std::size_t hw = m.h * m.w, k = m.count(), lead = x.numel() / hw;
      std::vector<std::size_t> shape(x.shape().begin(), x.shape().end() - 2);
      shape.push_back(k);
      n.value = Tensor<Real>(shape);
      for (std::size_t l = 0; l < lead; ++l) {
        const Real* src = x.data() + l * hw;
        Real* dst = n.value.data() + l * k;
        std::size_t j = 0;
        for (std::size_t i = 0; i < hw; ++i)
          if (m.on[i]) dst[j++] = src[i];
      }
      break;
    }
    case Op::MaskedScatter: {
      const auto& x = in(0);
      const Mask& m = *n.aux.mask;
      const std::size_t hw = m.h * m.w, k = m.count(), lead = x.numel() / k;
      std::vector<std::size_t> shape(x.shape().begin(), x.shape().end() - 1);
      shape.push_back(m.h);
      shape.push_back(m.w);
      n.value = Tensor<Real>(shape);
      for (std::size_t l = 0; l < lead; ++l) {
        const Real* src = x.data() + l * k;
        Real* dst = n.value.data() + l * hw;
        std::size_t j = 0;
        for (std::size_t i = 0; i < hw; ++i)
          if (m.on[i]) dst[i] = src[j++];
      }
      break;
    }
    case Op::Softplus: {
      const auto& x = in(0);
      n.value = Tensor<Real>(x.shape());
      for (std::size_t i = 0; i < x.numel(); ++i) {
        const Real v = x[i];
        n.value[i] = v > Real(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
      }
      break;
    }
    case Op::AmpGradStep: {
      const TensorD xd = in(0).template cast<double>();
      n.value = grad_amplitude(xd, *n.aux.term, n.aux.eps_mag).template cast<Real>();
      break;
    }
  }
}

// --- backward --------------------------------------------------------------------

template <typename Real>
void Tape<Real>::accumulate(Id id, const Tensor<Real>& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.needs_grad) return;
  Tensor<Real>& slot = grads_[static_cast<std::size_t>(id)];
  if (slot.numel() == 0) slot = Tensor<Real>(n.value.shape());
  for (std::size_t i = 0; i < g.numel(); ++i) slot[i] += g[i];
}

template <typename Real>
void Tape<Real>::vjp(const Node& n, const Tensor<Real>& g) {
  auto in_val = [&](int i) -> const Tensor<Real>& {
    return nodes_[static_cast<std::size_t>(n.in[static_cast<std::size_t>(i)])].value;
  };
  auto in_needs = [&](int i) {
    return nodes_[static_cast<std::size_t>(n.in[static_cast<std::size_t>(i)])].needs_grad;
  };
  auto in_id = [&](int i) { return n.in[static_cast<std::size_t>(i)]; };
  auto grad_slot = [&](int i) -> Tensor<Real>& {
    Tensor<Real>& slot = grads_[static_cast<std::size_t>(in_id(i))];
    if (slot.numel() == 0) slot = Tensor<Real>(in_val(i).shape());
    return slot;
  };

  switch (n.op) {
    case Op::Leaf:
    case Op::Constant:
      break;
    case Op::Conv2dSame: {
      if (in_needs(0)) kern::conv2d_same_grad_input(g, in_val(1), grad_slot(0));
      if (in_needs(1)) kern::conv2d_same_grad_weight(in_val(0), g, grad_slot(1));
      break;
    }
    case Op::InstanceNorm: {
      // the kernel computes all three; route only the requested ones
      Tensor<Real> gx(in_val(0).shape()), gg(in_val(1).shape()), gb(in_val(2).shape());
      kern::instance_norm_backward(in_val(0), in_val(1), in_val(2), n.aux.eps, n.aux.flag, g, gx,
                                   gg, gb);
      if (in_needs(0)) accumulate(in_id(0), gx);
      if (in_needs(1)) accumulate(in_id(1), gg);
      if (in_needs(2)) accumulate(in_id(2), gb);
      break;
    }
    case Op::Relu: {
      if (in_needs(0)) kern::relu_backward(in_val(0), g, grad_slot(0));
      break;
    }
    case Op::Add: {
      if (in_needs(0)) accumulate(in_id(0), g);
      if (in_needs(1)) accumulate(in_id(1), g);
      break;
    }
    case Op::Scale: {
      const auto& x = in_val(0);
      const Real s = n.aux.scalar * in_val(1)[0];
      if (in_needs(0)) {
        Tensor<Real>& gx = grad_slot(0);
        for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += s * g[i];
      }
      if (in_needs(1)) {
        Real dot = 0;
        for (std::size_t i = 0; i < x.numel(); ++i) dot += x[i] * g[i];
        Tensor<Real>& gs = grad_slot(1);
        gs[0] += n.aux.scalar * dot;
      }
      break;
    }
    case Op::ScaleConst: {
      if (in_needs(0)) {
        Tensor<Real>& gx = grad_slot(0);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += n.aux.scalar * g[i];
      }
      break;
    }
    case Op::Matvec: {
      if (!in_needs(0)) break;
      const auto& x = in_val(0);
      const auto [b, cols] = batch_cols(x);
      (void)cols;
      const Mat& a = *n.aux.matrix;
      const auto out_cols = static_cast<std::size_t>(n.aux.flag ? a.cols() : a.rows());
      Tensor<Real>& gx = grad_slot(0);
      Eigen::Map<const RowMat<Real>> gm(g.data(), static_cast<Eigen::Index>(b),
                                        static_cast<Eigen::Index>(out_cols));
      Eigen::Map<RowMat<Real>> gxm(gx.data(), static_cast<Eigen::Index>(b),
                                   static_cast<Eigen::Index>(x.numel() / b));
      if (n.aux.flag)
        gxm.noalias() += gm * a.transpose();
      else
        gxm.noalias() += gm * a;
      break;
    }
    case Op::DenseAffine: {
      const auto& a = in_val(0);
      const auto& x = in_val(1);
      const std::size_t m = a.dim(0), k = a.dim(1);
      if (in_needs(0)) {
        Tensor<Real>& ga = grad_slot(0);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < k; ++j) ga[i * k + j] += g[i] * x[j];
      }
      if (in_needs(1)) {
        Tensor<Real>& gx = grad_slot(1);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < k; ++j) gx[j] += a[i * k + j] * g[i];
      }
      if (in_needs(2)) accumulate(in_id(2), g);
      break;
    }
    case Op::Fft2:
    case Op::Ifft2: {
      if (!in_needs(0)) break;
      // adjoint of a unitary transform is the opposite direction
      const std::size_t h = g.dim(1), w = g.dim(2), hw = h * w;
      std::vector<std::complex<Real>> buf(hw);
      for (std::size_t i = 0; i < hw; ++i) buf[i] = {g[i], g[hw + i]};
      fft::fft2(buf.data(), h, w, n.op == Op::Fft2);
      Tensor<Real>& gx = grad_slot(0);
      for (std::size_t i = 0; i < hw; ++i) {
        gx[i] += buf[i].real();
        gx[hw + i] += buf[i].imag();
      }
      break;
    }
    case Op::ComplexModulus: {
      if (!in_needs(0)) break;
      const auto& x = in_val(0);
      const std::size_t k = x.numel() / 2;
      Tensor<Real>& gx = grad_slot(0);
      for (std::size_t i = 0; i < k; ++i) {
        const Real r = n.value[i];
        if (r > Real(0)) {
          gx[i] += g[i] * x[i] / r;
          gx[k + i] += g[i] * x[k + i] / r;
        }
        // r == 0: subgradient fixed to 0, same policy as relu
      }
      break;
    }
    case Op::ElementwiseMul: {
      const auto& a = in_val(0);
      const auto& b = in_val(1);
      if (in_needs(0)) {
        Tensor<Real>& ga = grad_slot(0);
        for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += g[i] * b[i];
      }
      if (in_needs(1)) {
        Tensor<Real>& gb = grad_slot(1);
        for (std::size_t i = 0; i < a.numel(); ++i) gb[i] += g[i] * a[i];
      }
      break;
    }
    case Op::Reshape: {
      if (in_needs(0)) accumulate(in_id(0), g.reshaped(in_val(0).shape()));
      break;
    }
    case Op::L2Loss: {
      const auto& a = in_val(0);
      const auto& b = in_val(1);
      const Real c = Real(2) * g[0] / static_cast<Real>(a.numel());
      if (in_needs(0)) {
        Tensor<Real>& ga = grad_slot(0);
        for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += c * (a[i] - b[i]);
      }
      if (in_needs(1)) {
        Tensor<Real>& gb = grad_slot(1);
        for (std::size_t i = 0; i < a.numel(); ++i) gb[i] -= c * (a[i] - b[i]);
      }
      break;
    }
    case Op::MaskedSelect: {
      if (!in_needs(0)) break;
      const Mask& m = *n.aux.mask;
      const std::size_t hw = m.h * m.w, k = m.count(), lead = in_val(0).numel() / hw;
      Tensor<Real>& gx = grad_slot(0);
      for (std::size_t l = 0; l < lead; ++l) {
        const Real* src = g.data() + l * k;
        Real* dst = gx.data() + l * hw;
        std::size_t j = 0;
        for (std::size_t i = 0; i < hw; ++i)
          if (m.on[i]) dst[i] += src[j++];
      }
      break;
    }
    case Op::MaskedScatter: {
      if (!in_needs(0)) break;
      const Mask& m = *n.aux.mask;
      const std::size_t hw = m.h * m.w, k = m.count(), lead = in_val(0).numel() / k;
      Tensor<Real>& gx = grad_slot(0);
      for (std::size_t l = 0; l < lead; ++l) {
        const Real* src = g.data() + l * hw;
        Real* dst = gx.data() + l * k;
        std::size_t j = 0;
        for (std::size_t i = 0; i < hw; ++i)
          if (m.on[i]) dst[j++] += src[i];
      }
      break;
    }
    case Op::Softplus: {
      if (!in_needs(0)) break;
      const auto& x = in_val(0);
      Tensor<Real>& gx = grad_slot(0);
      for (std::size_t i = 0; i < x.numel(); ++i) {
        const Real v = x[i];
        const Real sig = v > Real(0) ? Real(1) / (Real(1) + std::exp(-v))
                                     : std::exp(v) / (Real(1) + std::exp(v));
        gx[i] += g[i] * sig;
      }
      break;
    }
    case Op::AmpGradStep: {
      if (!in_needs(0)) break;
      const TensorD xd = in_val(0).template cast<double>();
      const TensorD gd = g.template cast<double>();
      const TensorD h = grad_amplitude_hvp(xd, gd, *n.aux.term, n.aux.eps_mag);
      accumulate(in_id(0), h.template cast<Real>());
      break;
    }
  }
}

template <typename Real>
void Tape<Real>::set_value(Id id, const Tensor<Real>& v) {
  Node& n = nodes_[static_cast<std::size_t>(check(id))];
  if (n.op != Op::Leaf && n.op != Op::Constant)
    throw InvalidInputError("set_value: only leaves and constants can be overwritten");
  if (!n.value.same_shape(v)) throw DimensionError("set_value: shape mismatch");
  n.value = v;
}

template <typename Real>
void Tape<Real>::replay() {
  for (auto& n : nodes_)
    if (n.op != Op::Leaf && n.op != Op::Constant) compute(n);
}

template <typename Real>
void Tape<Real>::backward(Id output, const Tensor<Real>& seed) {
  check(output);
  const Node& out = nodes_[static_cast<std::size_t>(output)];
  if (!seed.same_shape(out.value))
    throw DimensionError("backward: seed shape does not match the output");
  grads_.assign(nodes_.size(), Tensor<Real>());
  if (!out.needs_grad) return;
  grads_[static_cast<std::size_t>(output)] = seed;
  for (Id id = output; id >= 0; --id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    const Tensor<Real>& g = grads_[static_cast<std::size_t>(id)];
    if (!n.needs_grad || g.numel() == 0) continue;
    vjp(n, g);
  }
}

template <typename Real>
void Tape<Real>::backward(Id output) {
  if (value(output).numel() != 1)
    throw DimensionError("backward: output is not scalar; provide a seed");
  backward(output, Tensor<Real>::scalar(Real(1)));
}

template <typename Real>
Tensor<Real> Tape<Real>::grad(Id id) const {
  check(id);
  if (grads_.size() != nodes_.size()) throw Error("grad: run backward first");
  const Tensor<Real>& g = grads_[static_cast<std::size_t>(id)];
  if (g.numel() == 0) return Tensor<Real>(nodes_[static_cast<std::size_t>(id)].value.shape());
  return g;
}

template class Tape<float>;
template class Tape<double>;

// --- gradient checking ----------------------------------------------------------

GradCheckReport check_gradients(const Program& program, double tolerance,
                                std::size_t coords_per_leaf, double fd_step,
                                std::uint64_t seed) {
  Tape<double> tape;
  const auto out = program(tape);
  if (tape.value(out).numel() != 1)
    throw InvalidInputError("check_gradients: program output must be scalar");
  tape.backward(out);

  Rng rng(seed);
  GradCheckReport report;
  for (auto leaf : tape.leaves()) {
    const TensorD ad = tape.grad(leaf);
    GradCheckItem item;
    item.leaf = tape.leaf_name(leaf);

    TensorD values = tape.value(leaf);
    const std::size_t n = values.numel();
    std::vector<std::size_t> coords;
    if (n <= coords_per_leaf) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      coords = rng.sample_without_replacement(n, coords_per_leaf);
    }

    auto loss_at = [&](std::size_t coord, double v) {
      const double saved = values[coord];
      values[coord] = v;
      tape.set_value(leaf, values);
      tape.replay();
      values[coord] = saved;
      return tape.value(out)[0];
    };

    for (std::size_t coord : coords) {
      const double x0 = values[coord];
      auto central = [&](double h) {
        return (loss_at(coord, x0 + h) - loss_at(coord, x0 - h)) / (2.0 * h);
      };
      const double fd = central(fd_step);
      const double fd_small = central(fd_step * 0.1);
      const double fd_scale = std::max({std::abs(fd), std::abs(fd_small), 1e-8});
      if (std::abs(fd - fd_small) / fd_scale > 0.3) {
        // the two step sizes disagree: a kink (e.g. relu at 0) sits inside
        // the stencil, exclude the coordinate
        ++item.coords_flagged;
        continue;
      }
      const double err =
          std::abs(ad[coord] - fd) / std::max({std::abs(ad[coord]), std::abs(fd), 1e-10});
      item.max_rel_err = std::max(item.max_rel_err, err);
      ++item.coords_checked;
    }
    // restore the recorded forward values
    tape.set_value(leaf, values);
    tape.replay();

    item.pass = item.max_rel_err <= tolerance;
    report.pass = report.pass && item.pass;
    report.items.push_back(std::move(item));
  }
  return report;
}

std::string format_report(const GradCheckReport& report) {
  std::ostringstream os;
  for (const auto& item : report.items) {
    os << (item.pass ? "[pass] " : "[FAIL] ") << item.leaf << ": max rel err " << item.max_rel_err
       << " over " << item.coords_checked << " coords";
    if (item.coords_flagged) os << " (" << item.coords_flagged << " flagged at kinks)";
    os << "\n";
  }
  os << (report.pass ? "gradient check passed" : "GRADIENT CHECK FAILED") << "\n";
  return os.str();
}

}  // namespace dpu::ad
