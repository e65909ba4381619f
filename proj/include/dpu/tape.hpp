#pragma once
#include <Eigen/Core>
#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dpu/data_fidelity.hpp"
#include "dpu/forward_models.hpp"
#include "dpu/tensor.hpp"

namespace dpu::ad {

// Reverse-mode differentiation over the closed primitive set used by the
// unrolled reconstruction networks. Complex data flows through as real pairs
// (leading dimension 2); every primitive that touches it is real-linear, so
// the adjoints are exact.
//
// A tape records one forward pass; `backward` accumulates vector-Jacobian
// products into every reachable leaf. Replaying the tape recomputes all
// recorded values bit-for-bit, which is what the finite-difference checker
// relies on. Tapes are single-threaded; distinct tapes are independent.

enum class Op : std::uint8_t {
  Leaf,
  Constant,
  Conv2dSame,
  InstanceNorm,
  Relu,
  Add,
  Scale,       // factor * s * x with s a scalar node
  ScaleConst,  // c * x
  Matvec,      // fixed matrix applied to each row of a [B,N] batch
  DenseAffine, // A*x + b with A, x, b all nodes
  Fft2,
  Ifft2,
  ComplexModulus,
  ElementwiseMul,
  Reshape,
  L2Loss,  // mean squared difference, scalar output
  MaskedSelect,
  MaskedScatter,
  Softplus,
  AmpGradStep,  // hand-derived amplitude-loss gradient; VJP is its exact HVP
};

const char* op_name(Op op);

template <typename Real>
class Tape {
 public:
  using Id = std::int32_t;
  using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatPtr = std::shared_ptr<const Mat>;

  Id leaf(Tensor<Real> value, std::string name);
  Id constant(Tensor<Real> value);

  Id conv2d_same(Id x, Id w);
  Id instance_norm(Id x, Id gamma, Id beta, Real eps, bool beta_inside);
  Id relu(Id x);
  Id add(Id a, Id b);
  Id sub(Id a, Id b) { return add(a, scale_const(b, Real(-1))); }
  Id scale(Id x, Id s, Real factor = Real(1));
  Id scale_const(Id x, Real c);
  Id matvec(MatPtr a, Id x, bool transpose = false);
  Id matvec(const Mat& a, Id x, bool transpose = false) {
    return matvec(std::make_shared<Mat>(a), x, transpose);
  }
  Id dense_affine(Id a, Id x, Id b);
  Id fft2(Id x);
  Id ifft2(Id x);
  Id complex_modulus(Id x);
  Id elementwise_mul(Id a, Id b);
  Id reshape(Id x, std::vector<std::size_t> shape);
  Id l2_loss(Id a, Id b);
  Id masked_select(Id x, const Mask& mask);
  Id masked_scatter(Id x, const Mask& mask);
  Id softplus(Id x);
  Id amp_grad_step(Id x, const FidelityTerm& term, double eps_mag = 1e-12);

  std::size_t size() const { return nodes_.size(); }
  const Tensor<Real>& value(Id id) const { return nodes_.at(check(id)).value; }
  bool needs_grad(Id id) const { return nodes_.at(check(id)).needs_grad; }
  const std::string& leaf_name(Id id) const { return nodes_.at(check(id)).name; }
  const std::vector<Id>& leaves() const { return leaves_; }

  // overwrite a leaf/constant value (shape must match) and re-run the tape
  void set_value(Id id, const Tensor<Real>& v);
  void replay();

  // reverse pass from `output`; seed must match the output shape. Gradients
  // from any previous backward pass are discarded.
  void backward(Id output, const Tensor<Real>& seed);
  void backward(Id output);  // scalar output, seed = 1

  // accumulated gradient of a node (zeros if it is off the path)
  Tensor<Real> grad(Id id) const;

 private:
  struct NodeAux {
    Real scalar = Real(0);          // Scale factor / ScaleConst constant
    Real eps = Real(0);             // InstanceNorm epsilon
    bool flag = false;              // InstanceNorm beta_inside / Matvec transpose
    MatPtr matrix;                  // Matvec
    std::shared_ptr<const Mask> mask;
    std::shared_ptr<const FidelityTerm> term;  // AmpGradStep (borrowed model)
    double eps_mag = 0;
  };
  struct Node {
    Op op = Op::Constant;
    std::array<Id, 3> in{-1, -1, -1};
    int arity = 0;
    bool needs_grad = false;
    Tensor<Real> value;
    std::string name;
    NodeAux aux;
  };

  Id check(Id id) const;
  Id push(Op op, std::initializer_list<Id> inputs, NodeAux aux, std::string name = {});
  void compute(Node& n);
  void accumulate(Id id, const Tensor<Real>& g);
  void vjp(const Node& n, const Tensor<Real>& g);

  std::vector<Node> nodes_;
  std::vector<Id> leaves_;
  std::vector<Tensor<Real>> grads_;
};

using TapeD = Tape<double>;
using TapeF = Tape<float>;

// --- finite-difference checking ------------------------------------------------

struct GradCheckItem {
  std::string leaf;
  double max_rel_err = 0;
  std::size_t coords_checked = 0;
  std::size_t coords_flagged = 0;  // excluded as non-differentiable (kinks)
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckItem> items;
  bool pass = true;
};

// Builds a graph on the given tape and returns a scalar output node.
using Program = std::function<Tape<double>::Id(Tape<double>&)>;

// Central finite differences against the tape gradients, per leaf, on up to
// `coords_per_leaf` deterministically chosen coordinates. Coordinates where
// two FD step sizes disagree (a kink, e.g. ReLU at zero) are flagged and
// excluded rather than failed.
GradCheckReport check_gradients(const Program& program, double tolerance,
                                std::size_t coords_per_leaf = 20, double fd_step = 1e-6,
                                std::uint64_t seed = 0);

std::string format_report(const GradCheckReport& report);

}  // namespace dpu::ad
