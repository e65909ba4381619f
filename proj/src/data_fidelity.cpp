#include "dpu/data_fidelity.hpp"

#include <cmath>

#include "dpu/errors.hpp"

namespace dpu {

FidelityTerm FidelityTerm::linear(const BcsModel& model, Eigen::VectorXd y) {
  if (static_cast<std::size_t>(y.size()) != model.m())
    throw DimensionError("FidelityTerm: measurement length != M");
  FidelityTerm t;
  t.kind = FidelityKind::LinearLeastSquares;
  t.bcs = &model;
  t.y_real = std::move(y);
  return t;
}

FidelityTerm FidelityTerm::linear(const MriModel& model, ComplexVec y) {
  if (y.size() != model.mask.count())
    throw DimensionError("FidelityTerm: sample count mismatch");
  FidelityTerm t;
  t.kind = FidelityKind::LinearLeastSquares;
  t.mri = &model;
  t.y_complex = std::move(y);
  return t;
}

FidelityTerm FidelityTerm::amplitude(const CdpModel& model,
                                     const std::vector<double>& intensities) {
  if (intensities.size() != model.m())
    throw DimensionError("FidelityTerm: intensity count mismatch");
  for (double v : intensities)
    if (v < 0) throw InvalidInputError("FidelityTerm: amplitude loss requires y >= 0");
  FidelityTerm t;
  t.kind = FidelityKind::Amplitude;
  t.cdp = &model;
  t.y_real =
      Eigen::Map<const Eigen::VectorXd>(intensities.data(), static_cast<Eigen::Index>(intensities.size()));
  return t;
}

double fidelity_value(const Eigen::VectorXd& x, const FidelityTerm& term) {
  if (term.kind != FidelityKind::LinearLeastSquares || term.bcs == nullptr)
    throw FidelityKindError("fidelity_value: term is not a BCS linear term");
  const Eigen::VectorXd r = bcs_forward(x, *term.bcs) - term.y_real;
  return 0.5 * r.squaredNorm();
}

double fidelity_value(const ComplexImage& x, const FidelityTerm& term) {
  if (term.kind != FidelityKind::LinearLeastSquares || term.mri == nullptr)
    throw FidelityKindError("fidelity_value: term is not an MRI linear term");
  const ComplexVec fx = mri_forward(x, *term.mri);
  double acc = 0;
  for (std::size_t i = 0; i < fx.size(); ++i) acc += std::norm(fx[i] - term.y_complex[i]);
  return 0.5 * acc;
}

double fidelity_value(const TensorD& x, const FidelityTerm& term) {
  if (term.kind != FidelityKind::Amplitude || term.cdp == nullptr)
    throw FidelityKindError("fidelity_value: term is not an amplitude term");
  const ComplexVec ax = cdp_apply(x, *term.cdp);
  double acc = 0;
  for (std::size_t i = 0; i < ax.size(); ++i) {
    const double d = std::sqrt(term.y_real[static_cast<Eigen::Index>(i)]) - std::abs(ax[i]);
    acc += d * d;
  }
  return 0.5 * acc;
}

Eigen::VectorXd grad_linear(const Eigen::VectorXd& x, const FidelityTerm& term) {
  if (term.kind != FidelityKind::LinearLeastSquares || term.bcs == nullptr)
    throw FidelityKindError("grad_linear: term is not a BCS linear term");
  return bcs_adjoint(Eigen::VectorXd(bcs_forward(x, *term.bcs) - term.y_real), *term.bcs);
}

Eigen::MatrixXd grad_linear(const Eigen::MatrixXd& x, const FidelityTerm& term) {
  if (term.kind != FidelityKind::LinearLeastSquares || term.bcs == nullptr)
    throw FidelityKindError("grad_linear: term is not a BCS linear term");
  Eigen::MatrixXd r = bcs_forward(x, *term.bcs);
  r.colwise() -= term.y_real;
  return bcs_adjoint(r, *term.bcs);
}

ComplexImage grad_linear(const ComplexImage& x, const FidelityTerm& term) {
  if (term.kind != FidelityKind::LinearLeastSquares || term.mri == nullptr)
    throw FidelityKindError("grad_linear: term is not an MRI linear term");
  ComplexVec r = mri_forward(x, *term.mri);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] -= term.y_complex[i];
  return mri_adjoint(r, *term.mri);
}

namespace {

// residual factor (|c| - sqrt(y)) * c/|c| with the magnitude floored
std::complex<double> amp_residual(std::complex<double> c, double sqrt_y, double eps_mag) {
  const double r = std::max(std::abs(c), eps_mag);
  return (r - sqrt_y) / r * c;
}

}  // namespace

TensorD grad_amplitude(const TensorD& x, const FidelityTerm& term, double eps_mag) {
  if (term.kind != FidelityKind::Amplitude || term.cdp == nullptr)
    throw FidelityKindError("grad_amplitude: term is not an amplitude term");
  const ComplexVec ax = cdp_apply(x, *term.cdp);
  ComplexVec res(ax.size());
  for (std::size_t i = 0; i < ax.size(); ++i)
    res[i] = amp_residual(ax[i], std::sqrt(term.y_real[static_cast<Eigen::Index>(i)]), eps_mag);
  return cdp_apply_adjoint(res, *term.cdp).real_part();
}

TensorD grad_amplitude_hvp(const TensorD& x, const TensorD& w, const FidelityTerm& term,
                           double eps_mag) {
  if (term.kind != FidelityKind::Amplitude || term.cdp == nullptr)
    throw FidelityKindError("grad_amplitude_hvp: term is not an amplitude term");
  if (!x.same_shape(w)) throw DimensionError("grad_amplitude_hvp: direction shape mismatch");
  const ComplexVec c = cdp_apply(x, *term.cdp);
  const ComplexVec e = cdp_apply(w, *term.cdp);
  ComplexVec d(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double s = std::sqrt(term.y_real[static_cast<Eigen::Index>(i)]);
    const double r = std::abs(c[i]);
    if (r <= eps_mag) {
      // inside the floor the factor (1 - s/eps) is constant
      d[i] = (1.0 - s / eps_mag) * e[i];
    } else {
      const double dr = (c[i].real() * e[i].real() + c[i].imag() * e[i].imag()) / r;
      d[i] = (1.0 - s / r) * e[i] + s * dr / (r * r * r) * c[i];
    }
  }
  return cdp_apply_adjoint(d, *term.cdp).real_part();
}

}  // namespace dpu
