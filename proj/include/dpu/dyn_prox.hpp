#pragma once
#include <array>
#include <string>
#include <vector>

#include "dpu/tape.hpp"
#include "dpu/tensor.hpp"

namespace dpu {

// Dynamic proximal mapping: a 5-layer convolutional network (instance norm +
// ReLU between layers, identity skip from input to output) whose convolution
// weights and IN affine vectors are produced by per-iteration fully connected
// generators evaluated on the imaging-parameter vector theta.

struct ImagingParams {
  std::vector<double> theta;  // normalized, each component <= 1 over training
};

// Depth of a generator path: 0 keeps the target vector as a directly learned
// parameter (the static network), d >= 1 is a d-layer FC chain with ReLU
// between layers and hidden width = channels.
struct ProxConfig {
  std::size_t channels = 64;
  std::size_t kernel = 3;
  std::size_t iterations = 10;
  std::size_t theta_dim = 1;
  int conv_depth = 1;
  int in_depth = 2;
  bool tied = false;        // share one generator stack across iterations
  bool beta_inside = true;  // gamma*(xhat + beta) as printed; false: gamma*xhat + beta
  double eps_in = 1e-5;

  static constexpr std::size_t n_conv = 5;
  static constexpr std::size_t n_in = 4;

  std::vector<std::size_t> conv_shape(std::size_t j) const;  // [Cout,Cin,k,k]
  std::size_t conv_numel(std::size_t j) const;
  std::size_t stacks() const { return tied ? 1 : iterations; }
};

// One generated vector (a conv weight block or an IN affine vector). For
// depth 0 `b` holds the single direct parameter vector; otherwise a[i], b[i]
// are the i-th FC layer.
template <typename Real>
struct Generator {
  std::vector<Tensor<Real>> a;
  std::vector<Tensor<Real>> b;

  int depth() const { return static_cast<int>(b.size()) - (a.empty() ? 1 : 0); }
  Tensor<Real> eval(const std::vector<Real>& theta) const;
  std::size_t param_count() const;
};

template <typename Real>
struct IterationGenerators {
  std::array<Generator<Real>, ProxConfig::n_conv> conv;
  std::array<Generator<Real>, ProxConfig::n_in> gamma;
  std::array<Generator<Real>, ProxConfig::n_in> beta;
};

template <typename Real>
struct HyperNetParams {
  ProxConfig config;
  std::vector<IterationGenerators<Real>> stacks;  // one per iteration, or one if tied

  const IterationGenerators<Real>& at(std::size_t k) const {
    return stacks[config.tied ? 0 : k];
  }
  std::size_t param_count() const;

  template <typename Other>
  HyperNetParams<Other> cast() const;
};

// concrete parameters of the proximal CNN for one iteration
template <typename Real>
struct ProxNetParams {
  std::array<Tensor<Real>, ProxConfig::n_conv> conv_w;
  std::array<Tensor<Real>, ProxConfig::n_in> in_gamma;
  std::array<Tensor<Real>, ProxConfig::n_in> in_beta;
};

// Initialization: direct/last-layer conv biases get fan-in scaled normals so
// the theta=0 network is an ordinary CNN; generator matrices start small
// (std 1e-3); gamma paths end at 1, beta paths at 0.
template <typename Real>
HyperNetParams<Real> init_hyper_params(const ProxConfig& config, Rng& rng);

// W_j = A_j theta + b_j (conv path) and the FC chains for gamma/beta.
// theta = 0 reproduces the direct parameters exactly on the conv path.
template <typename Real>
ProxNetParams<Real> generate_params(const ImagingParams& theta, const HyperNetParams<Real>& hyper,
                                    std::size_t iteration);

// Standalone IN with the per-channel spatial statistics; x is [C,H,W].
TensorD instance_norm(const TensorD& x, const std::vector<double>& gamma,
                      const std::vector<double>& beta, double eps = 1e-5,
                      bool beta_inside = true);

// z: [H,W] single image, or [B,1,H,W] batched
template <typename Real>
Tensor<Real> prox_forward(const Tensor<Real>& z, const ProxNetParams<Real>& params,
                          const ProxConfig& config);
template <typename Real>
Tensor<Real> prox_forward_batch(const Tensor<Real>& z, const ProxNetParams<Real>& params,
                                const ProxConfig& config);

// exact trainable-scalar count of the generator stacks for a configuration
std::size_t count_params(const ProxConfig& config);

// canonical ablation variants
ProxConfig prox_variant_static(std::size_t theta_dim = 1);   // direct W, gamma, beta
ProxConfig prox_variant_dconv1(std::size_t theta_dim = 1);   // dynamic conv only
ProxConfig prox_variant_din2(std::size_t theta_dim = 1);     // dynamic IN only
ProxConfig prox_variant_dynamic(std::size_t theta_dim = 1);  // dconv1 + din2 (default)

// --- tape builders (shared by training and the gradient checker) -------------

// canonical parameter names, also used by checkpoints and the optimizer
std::string param_name(const ProxConfig& config, std::size_t stack, const char* kind,
                       std::size_t layer, const char* piece, int fc_index);

struct GenLeafIds {
  std::vector<std::int32_t> a, b;
};
struct IterLeafIds {
  std::array<GenLeafIds, ProxConfig::n_conv> conv;
  std::array<GenLeafIds, ProxConfig::n_in> gamma;
  std::array<GenLeafIds, ProxConfig::n_in> beta;
};
struct HyperLeafIds {
  std::vector<IterLeafIds> stacks;
};

template <typename Real>
HyperLeafIds register_hyper_leaves(ad::Tape<Real>& tape, const HyperNetParams<Real>& hyper);

struct ProxNodeIds {
  std::array<std::int32_t, ProxConfig::n_conv> conv_w;
  std::array<std::int32_t, ProxConfig::n_in> gamma;
  std::array<std::int32_t, ProxConfig::n_in> beta;
};

template <typename Real>
ProxNodeIds build_generated_params(ad::Tape<Real>& tape, const IterLeafIds& leaves,
                                   std::int32_t theta_node, const ProxConfig& config);

// z4d: [B,1,H,W] node; returns same-shape output node
template <typename Real>
std::int32_t build_prox_graph(ad::Tape<Real>& tape, std::int32_t z4d, const ProxNodeIds& params,
                              const ProxConfig& config);

}  // namespace dpu
