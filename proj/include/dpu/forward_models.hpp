#pragma once
#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "dpu/tensor.hpp"

namespace dpu {

// Physical measurement operators for the three supported modalities, their
// adjoints, noise models and per-modality initializations. Everything here
// is a pure function of (inputs, seed); models are immutable once built and
// can be shared freely across threads.

using ComplexVec = std::vector<std::complex<double>>;

struct ComplexImage {
  std::size_t h = 0, w = 0;
  std::vector<std::complex<double>> v;

  ComplexImage() = default;
  ComplexImage(std::size_t h_, std::size_t w_) : h(h_), w(w_), v(h_ * w_) {}
  static ComplexImage from_real(const TensorD& x);
  TensorD real_part() const;
  TensorD magnitude() const;
};

// k-space selection mask in natural (unshifted) FFT order, DC at (0,0)
struct Mask {
  std::size_t h = 0, w = 0;
  std::vector<std::uint8_t> on;

  std::size_t count() const;
  double ratio() const { return static_cast<double>(count()) / static_cast<double>(h * w); }
  bool at(std::size_t i, std::size_t j) const { return on[i * w + j] != 0; }
};

// --- block compressive sensing -------------------------------------------

struct BcsModel {
  Eigen::MatrixXd phi;       // M x N Gaussian measurement matrix
  std::size_t block_size;    // N = block_size^2
  double sampling_ratio;     // eta = M/N
  Eigen::MatrixXd init_map;  // N x M linear initializer, empty until fitted
  std::uint64_t seed = 0;

  std::size_t m() const { return static_cast<std::size_t>(phi.rows()); }
  std::size_t n() const { return static_cast<std::size_t>(phi.cols()); }
  bool fitted() const { return init_map.size() > 0; }
};

// i.i.d. N(0, 1/m) entries so rows are orthonormal in expectation and the
// measurement scale stays comparable across sampling ratios
Eigen::MatrixXd make_gaussian_matrix(std::size_t m, std::size_t n, std::uint64_t seed);

BcsModel make_bcs_model(std::size_t block_size, double eta, std::uint64_t seed);

// y = phi * x for a single block; X may also be N x B for a batch of blocks
Eigen::VectorXd bcs_forward(const Eigen::VectorXd& x, const BcsModel& model);
Eigen::MatrixXd bcs_forward(const Eigen::MatrixXd& x, const BcsModel& model);
// phi^T * y
Eigen::VectorXd bcs_adjoint(const Eigen::VectorXd& y, const BcsModel& model);
Eigen::MatrixXd bcs_adjoint(const Eigen::MatrixXd& y, const BcsModel& model);

// Least-squares linear initializer Q = argmin ||Q*(phi*X) - X||_F solved in
// closed form with a relative ridge delta = ridge_scale * tr(Y*Y^T) / M.
// blocks is N x K (one training block per column). ridge_scale = 0 requires
// Y*Y^T to be nonsingular and otherwise raises SingularSystemError.
void fit_bcs_init(const Eigen::MatrixXd& blocks, BcsModel& model, double ridge_scale = 1e-6);

Eigen::VectorXd bcs_init(const Eigen::VectorXd& y, const BcsModel& model);
Eigen::MatrixXd bcs_init(const Eigen::MatrixXd& y, const BcsModel& model);

// --- compressive sensing MRI ----------------------------------------------

struct MriModel {
  Mask mask;
  double sampling_ratio = 0;  // requested eta
  std::uint64_t seed = 0;

  std::size_t h() const { return mask.h; }
  std::size_t w() const { return mask.w; }
};

// Pseudo radial mask: equiangular spokes through DC, spoke count picked by
// bisection and the last spoke truncated so the achieved ratio lands within
// one symmetric pixel pair of round(eta*h*w). Seed rotates the spoke fan.
Mask make_radial_mask(std::size_t h, std::size_t w, double eta, std::uint64_t seed);

MriModel make_mri_model(std::size_t h, std::size_t w, double eta, std::uint64_t seed);

// y = P * F x with the unitary 2-D FFT; samples are emitted in row-major
// scan order of the masked bins
ComplexVec mri_forward(const ComplexImage& x, const MriModel& model);
ComplexVec mri_forward(const TensorD& x, const MriModel& model);
// zero-filled adjoint F^H P^T y; doubles as the MRI initialization x0
ComplexImage mri_adjoint(const ComplexVec& y, const MriModel& model);

// --- coded diffraction phase retrieval -------------------------------------

struct CdpModel {
  ComplexImage phase_mask;           // unit-modulus diagonal
  std::vector<std::size_t> row_selector;  // sorted distinct flat indices
  double sampling_ratio = 0;
  std::uint64_t seed = 0;

  std::size_t h() const { return phase_mask.h; }
  std::size_t w() const { return phase_mask.w; }
  std::size_t m() const { return row_selector.size(); }
};

CdpModel make_cdp_model(std::size_t h, std::size_t w, double eta, std::uint64_t seed);

// the linear part A x = J F (mask .* x) and its conjugate-transpose
ComplexVec cdp_apply(const ComplexImage& x, const CdpModel& model);
ComplexVec cdp_apply(const TensorD& x, const CdpModel& model);
ComplexImage cdp_apply_adjoint(const ComplexVec& v, const CdpModel& model);
// intensity measurement y = |A x|^2
std::vector<double> cdp_forward(const TensorD& x, const CdpModel& model);

// all-ones initialization
TensorD cpr_init(const CdpModel& model);

// --- noise ------------------------------------------------------------------

struct NoiseSpec {
  enum class Kind { GaussianAdditive, Shot };
  Kind kind = Kind::GaussianAdditive;
  double level = 0;  // alpha, quoted against 8-bit intensity for the additive kind
  // additive noise std is level/gauss_scale on the [0,1] image scale
  double gauss_scale = 255.0;
};

// gaussian-additive: y + (level/gauss_scale) * g
// shot:              max(0, y + level * sqrt(y) .* g), requires y >= 0
std::vector<double> add_noise(const std::vector<double>& y, const NoiseSpec& spec,
                              std::uint64_t seed);
Eigen::VectorXd add_noise(const Eigen::VectorXd& y, const NoiseSpec& spec, std::uint64_t seed);
// additive only: independent Gaussian perturbation on both components
ComplexVec add_noise(const ComplexVec& y, const NoiseSpec& spec, std::uint64_t seed);

// --- serialization -----------------------------------------------------------

// Self-describing little-endian binary container (magic, version, kind,
// shape, seed, float64 payload). One file per model.
void save_bcs_model(const std::string& path, const BcsModel& model);
void save_mri_model(const std::string& path, const MriModel& model);
void save_cdp_model(const std::string& path, const CdpModel& model);
BcsModel load_bcs_model(const std::string& path);
MriModel load_mri_model(const std::string& path);
CdpModel load_cdp_model(const std::string& path);

}  // namespace dpu
