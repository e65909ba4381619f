#pragma once
#include "dpu/forward_models.hpp"

namespace dpu {

// Data-fidelity terms D(x) and their gradients. Linear least squares
// D(x) = 0.5*||y - Phi(x)||^2 for BCS/MRI, amplitude loss
// D(x) = 0.5*||sqrt(y) - |Ax|||^2 for phase retrieval.

enum class FidelityKind { LinearLeastSquares, Amplitude };

struct FidelityTerm {
  FidelityKind kind = FidelityKind::LinearLeastSquares;
  const BcsModel* bcs = nullptr;
  const MriModel* mri = nullptr;
  const CdpModel* cdp = nullptr;
  Eigen::VectorXd y_real;  // BCS measurements, or CPR intensities (>= 0)
  ComplexVec y_complex;    // MRI measurements

  static FidelityTerm linear(const BcsModel& model, Eigen::VectorXd y);
  static FidelityTerm linear(const MriModel& model, ComplexVec y);
  static FidelityTerm amplitude(const CdpModel& model, const std::vector<double>& intensities);
};

double fidelity_value(const Eigen::VectorXd& x, const FidelityTerm& term);
double fidelity_value(const ComplexImage& x, const FidelityTerm& term);
double fidelity_value(const TensorD& x, const FidelityTerm& term);

// Phi^H (Phi x - y); the complex overload keeps the full complex gradient,
// the real overloads are already real by construction
Eigen::VectorXd grad_linear(const Eigen::VectorXd& x, const FidelityTerm& term);
Eigen::MatrixXd grad_linear(const Eigen::MatrixXd& x, const FidelityTerm& term);
ComplexImage grad_linear(const ComplexImage& x, const FidelityTerm& term);

// Wirtinger gradient of the amplitude loss for a real image,
// Re(A^H((|Ax| - sqrt(y)) .* Ax/|Ax|)), with |Ax| floored at eps_mag
TensorD grad_amplitude(const TensorD& x, const FidelityTerm& term, double eps_mag = 1e-12);

// Exact directional derivative of grad_amplitude along w (a Hessian-vector
// product); this is the vector-Jacobian product used when the amplitude
// gradient step is recorded on a tape.
TensorD grad_amplitude_hvp(const TensorD& x, const TensorD& w, const FidelityTerm& term,
                           double eps_mag = 1e-12);

}  // namespace dpu
