#include "dpu/forward_models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "dpu/errors.hpp"
#include "dpu/fft.hpp"
#include "dpu/rng.hpp"

namespace dpu {

// --- complex image helpers ---------------------------------------------------

ComplexImage ComplexImage::from_real(const TensorD& x) {
  if (x.rank() != 2) throw DimensionError("ComplexImage::from_real: expected H x W");
  ComplexImage out(x.dim(0), x.dim(1));
  for (std::size_t i = 0; i < x.numel(); ++i) out.v[i] = x[i];
  return out;
}

TensorD ComplexImage::real_part() const {
  TensorD out({h, w});
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i].real();
  return out;
}

TensorD ComplexImage::magnitude() const {
  TensorD out({h, w});
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::abs(v[i]);
  return out;
}

std::size_t Mask::count() const {
  std::size_t c = 0;
  for (auto b : on) c += (b != 0);
  return c;
}

// --- BCS ----------------------------------------------------------------------

Eigen::MatrixXd make_gaussian_matrix(std::size_t m, std::size_t n, std::uint64_t seed) {
  if (m == 0 || m > n) throw DimensionError("make_gaussian_matrix: need 1 <= m <= n");
  Rng rng(seed);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(m));
  Eigen::MatrixXd phi(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) phi(i, j) = stddev * rng.normal();
  return phi;
}

BcsModel make_bcs_model(std::size_t block_size, double eta, std::uint64_t seed) {
  if (block_size == 0) throw ParameterError("make_bcs_model: block_size must be positive");
  if (!(eta > 0.0 && eta <= 1.0)) throw ParameterError("make_bcs_model: eta must be in (0,1]");
  const std::size_t n = block_size * block_size;
  const auto m = static_cast<std::size_t>(std::llround(eta * static_cast<double>(n)));
  if (m < 1 || m > n) throw ParameterError("make_bcs_model: round(eta*N) out of range");
  BcsModel model;
  model.phi = make_gaussian_matrix(m, n, seed);
  model.block_size = block_size;
  model.sampling_ratio = eta;
  model.seed = seed;
  return model;
}

Eigen::MatrixXd bcs_forward(const Eigen::MatrixXd& x, const BcsModel& model) {
  if (static_cast<std::size_t>(x.rows()) != model.n())
    throw DimensionError("bcs_forward: block length != N");
  return model.phi * x;
}

Eigen::VectorXd bcs_forward(const Eigen::VectorXd& x, const BcsModel& model) {
  if (static_cast<std::size_t>(x.size()) != model.n())
    throw DimensionError("bcs_forward: block length != N");
  return model.phi * x;
}

Eigen::MatrixXd bcs_adjoint(const Eigen::MatrixXd& y, const BcsModel& model) {
  if (static_cast<std::size_t>(y.rows()) != model.m())
    throw DimensionError("bcs_adjoint: measurement length != M");
  return model.phi.transpose() * y;
}

Eigen::VectorXd bcs_adjoint(const Eigen::VectorXd& y, const BcsModel& model) {
  if (static_cast<std::size_t>(y.size()) != model.m())
    throw DimensionError("bcs_adjoint: measurement length != M");
  return model.phi.transpose() * y;
}

void fit_bcs_init(const Eigen::MatrixXd& blocks, BcsModel& model, double ridge_scale) {
  if (static_cast<std::size_t>(blocks.rows()) != model.n())
    throw DimensionError("fit_bcs_init: blocks must be N x K");
  if (blocks.cols() < 1) throw InvalidInputError("fit_bcs_init: empty fitting set");
  const Eigen::MatrixXd y = model.phi * blocks;  // M x K
  Eigen::MatrixXd gram = y * y.transpose();      // M x M
  const double delta = ridge_scale * gram.trace() / static_cast<double>(model.m());
  if (delta > 0.0) gram.diagonal().array() += delta;
  if (ridge_scale == 0.0) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
    if (lu.rank() < gram.rows())
      throw SingularSystemError("fit_bcs_init: Y*Y^T is rank deficient and ridge is off");
    model.init_map = lu.solve(y * blocks.transpose()).transpose();
    return;
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  model.init_map = ldlt.solve(y * blocks.transpose()).transpose();  // N x M
}

Eigen::VectorXd bcs_init(const Eigen::VectorXd& y, const BcsModel& model) {
  if (!model.fitted()) throw NotFittedError("bcs_init: init_map has not been fitted");
  if (static_cast<std::size_t>(y.size()) != model.m())
    throw DimensionError("bcs_init: measurement length != M");
  return model.init_map * y;
}

Eigen::MatrixXd bcs_init(const Eigen::MatrixXd& y, const BcsModel& model) {
  if (!model.fitted()) throw NotFittedError("bcs_init: init_map has not been fitted");
  if (static_cast<std::size_t>(y.rows()) != model.m())
    throw DimensionError("bcs_init: measurement length != M");
  return model.init_map * y;
}

// --- radial mask ----------------------------------------------------------------

namespace {

// Marks the symmetric pixel pair at centered offset (di, dj) in natural FFT
// coordinates; returns how many previously unset pixels were added. Stops
// respecting `budget`: a pair that would overshoot is skipped so the mask
// stays point-symmetric about DC.
std::size_t mark_pair(std::vector<std::uint8_t>& on, std::size_t h, std::size_t w, long di,
                      long dj, std::size_t budget) {
  const auto hl = static_cast<long>(h), wl = static_cast<long>(w);
  const std::size_t a = static_cast<std::size_t>(((di % hl) + hl) % hl) * w +
                        static_cast<std::size_t>(((dj % wl) + wl) % wl);
  const std::size_t b = static_cast<std::size_t>(((-di % hl) + hl) % hl) * w +
                        static_cast<std::size_t>(((-dj % wl) + wl) % wl);
  std::size_t fresh = (on[a] == 0) + (a != b && on[b] == 0);
  if (fresh == 0 || fresh > budget) return 0;
  on[a] = 1;
  on[b] = 1;
  return fresh;
}

// Rasterizes `spokes` equiangular spokes (phase `rot` in [0,1) of the angular
// pitch) until `target` pixels are set or the fan is exhausted.
std::size_t draw_fan(std::vector<std::uint8_t>& on, std::size_t h, std::size_t w,
                     std::size_t spokes, double rot, std::size_t target) {
  std::fill(on.begin(), on.end(), 0);
  on[0] = 1;  // DC
  std::size_t count = 1;
  if (count >= target) return count;
  const double rmax = 0.5 * std::hypot(static_cast<double>(h), static_cast<double>(w));
  const double pitch = M_PI / static_cast<double>(spokes);
  for (std::size_t s = 0; s < spokes && count < target; ++s) {
    const double angle = (static_cast<double>(s) + rot) * pitch;
    const double ci = std::cos(angle), cj = std::sin(angle);
    for (double t = 0.5; t <= rmax && count < target; t += 0.5) {
      const long di = std::lround(t * ci), dj = std::lround(t * cj);
      if (std::abs(di) > static_cast<long>(h) / 2 || std::abs(dj) > static_cast<long>(w) / 2)
        break;
      count += mark_pair(on, h, w, di, dj, target - count);
    }
  }
  return count;
}

}  // namespace

Mask make_radial_mask(std::size_t h, std::size_t w, double eta, std::uint64_t seed) {
  if (h == 0 || w == 0) throw DimensionError("make_radial_mask: empty grid");
  if (!(eta > 0.0 && eta <= 1.0)) throw ParameterError("make_radial_mask: eta must be in (0,1]");
  Mask mask;
  mask.h = h;
  mask.w = w;
  mask.on.assign(h * w, 0);

  const auto total = h * w;
  auto target = static_cast<std::size_t>(std::llround(eta * static_cast<double>(total)));
  target = std::max<std::size_t>(target, 1);
  if (target >= total) {
    std::fill(mask.on.begin(), mask.on.end(), 1);
    return mask;
  }

  Rng rng(seed);
  const double rot = rng.uniform();

  // smallest spoke count whose full fan reaches the target (pixel coverage is
  // near-monotone in the count; the linear fix-up below absorbs the jitter)
  std::size_t lo = 1;
  std::size_t hi = static_cast<std::size_t>(std::ceil(M_PI * static_cast<double>(std::max(h, w))));
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (draw_fan(mask.on, h, w, mid, rot, total) >= target)
      hi = mid;
    else
      lo = mid + 1;
  }
  std::size_t spokes = lo;
  std::size_t achieved = draw_fan(mask.on, h, w, spokes, rot, target);
  const std::size_t spoke_cap =
      static_cast<std::size_t>(std::ceil(M_PI * static_cast<double>(std::max(h, w)))) + 1;
  while (achieved + 1 < target && spokes < spoke_cap) {
    ++spokes;
    achieved = draw_fan(mask.on, h, w, spokes, rot, target);
  }

  // densest fan still short (can happen for eta near 1): fill remaining bins
  // outward by radius, in symmetric pairs
  if (achieved + 1 < target) {
    std::vector<std::pair<double, std::pair<long, long>>> order;
    const long hh = static_cast<long>(h) / 2, wh = static_cast<long>(w) / 2;
    for (long di = -hh; di <= hh; ++di)
      for (long dj = -wh; dj <= wh; ++dj)
        order.push_back({std::hypot(static_cast<double>(di), static_cast<double>(dj)), {di, dj}});
    std::sort(order.begin(), order.end());
    for (const auto& [r, off] : order) {
      if (achieved + 1 >= target) break;
      achieved += mark_pair(mask.on, h, w, off.first, off.second, target - achieved);
    }
  }
  return mask;
}

MriModel make_mri_model(std::size_t h, std::size_t w, double eta, std::uint64_t seed) {
  MriModel model;
  model.mask = make_radial_mask(h, w, eta, seed);
  model.sampling_ratio = eta;
  model.seed = seed;
  return model;
}

ComplexVec mri_forward(const ComplexImage& x, const MriModel& model) {
  if (x.h != model.h() || x.w != model.w()) throw DimensionError("mri_forward: shape mismatch");
  std::vector<std::complex<double>> buf = x.v;
  fft::fft2(buf, x.h, x.w, /*inverse=*/false);
  ComplexVec y;
  y.reserve(model.mask.count());
  for (std::size_t i = 0; i < buf.size(); ++i)
    if (model.mask.on[i]) y.push_back(buf[i]);
  return y;
}

ComplexVec mri_forward(const TensorD& x, const MriModel& model) {
  return mri_forward(ComplexImage::from_real(x), model);
}

ComplexImage mri_adjoint(const ComplexVec& y, const MriModel& model) {
  if (y.size() != model.mask.count()) throw DimensionError("mri_adjoint: sample count mismatch");
  ComplexImage out(model.h(), model.w());
  std::size_t k = 0;
  for (std::size_t i = 0; i < out.v.size(); ++i)
    if (model.mask.on[i]) out.v[i] = y[k++];
  fft::fft2(out.v, out.h, out.w, /*inverse=*/true);
  return out;
}

// --- CDP -------------------------------------------------------------------------

CdpModel make_cdp_model(std::size_t h, std::size_t w, double eta, std::uint64_t seed) {
  if (h == 0 || w == 0) throw DimensionError("make_cdp_model: empty grid");
  if (!(eta > 0.0 && eta <= 1.0)) throw ParameterError("make_cdp_model: eta must be in (0,1]");
  const std::size_t total = h * w;
  const auto m = static_cast<std::size_t>(std::llround(eta * static_cast<double>(total)));
  if (m < 1) throw ParameterError("make_cdp_model: round(eta*H*W) must be >= 1");
  Rng rng(seed);
  CdpModel model;
  model.phase_mask = ComplexImage(h, w);
  for (auto& c : model.phase_mask.v) {
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    c = std::polar(1.0, phase);
  }
  model.row_selector = rng.sample_without_replacement(total, m);
  std::sort(model.row_selector.begin(), model.row_selector.end());
  model.sampling_ratio = eta;
  model.seed = seed;
  return model;
}

ComplexVec cdp_apply(const ComplexImage& x, const CdpModel& model) {
  if (x.h != model.h() || x.w != model.w()) throw DimensionError("cdp_apply: shape mismatch");
  std::vector<std::complex<double>> buf(x.v.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = model.phase_mask.v[i] * x.v[i];
  fft::fft2(buf, x.h, x.w, /*inverse=*/false);
  ComplexVec out(model.m());
  for (std::size_t k = 0; k < model.m(); ++k) out[k] = buf[model.row_selector[k]];
  return out;
}

ComplexVec cdp_apply(const TensorD& x, const CdpModel& model) {
  return cdp_apply(ComplexImage::from_real(x), model);
}

ComplexImage cdp_apply_adjoint(const ComplexVec& v, const CdpModel& model) {
  if (v.size() != model.m()) throw DimensionError("cdp_apply_adjoint: length mismatch");
  ComplexImage out(model.h(), model.w());
  for (std::size_t k = 0; k < model.m(); ++k) out.v[model.row_selector[k]] = v[k];
  fft::fft2(out.v, out.h, out.w, /*inverse=*/true);
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= std::conj(model.phase_mask.v[i]);
  return out;
}

std::vector<double> cdp_forward(const TensorD& x, const CdpModel& model) {
  const ComplexVec ax = cdp_apply(x, model);
  std::vector<double> y(ax.size());
  for (std::size_t i = 0; i < ax.size(); ++i) y[i] = std::norm(ax[i]);
  return y;
}

TensorD cpr_init(const CdpModel& model) {
  return TensorD::full({model.h(), model.w()}, 1.0);
}

// --- noise --------------------------------------------------------------------------

std::vector<double> add_noise(const std::vector<double>& y, const NoiseSpec& spec,
                              std::uint64_t seed) {
  if (spec.level < 0) throw ParameterError("add_noise: negative noise level");
  if (spec.kind == NoiseSpec::Kind::Shot)
    for (double v : y)
      if (v < 0) throw InvalidInputError("add_noise: shot noise requires y >= 0");
  if (spec.level == 0) return y;
  Rng rng(seed);
  std::vector<double> out(y.size());
  if (spec.kind == NoiseSpec::Kind::GaussianAdditive) {
    const double sigma = spec.level / spec.gauss_scale;
    for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i] + sigma * rng.normal();
  } else {
    for (std::size_t i = 0; i < y.size(); ++i)
      out[i] = std::max(0.0, y[i] + spec.level * std::sqrt(y[i]) * rng.normal());
  }
  return out;
}

Eigen::VectorXd add_noise(const Eigen::VectorXd& y, const NoiseSpec& spec, std::uint64_t seed) {
  std::vector<double> v(y.data(), y.data() + y.size());
  v = add_noise(v, spec, seed);
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

ComplexVec add_noise(const ComplexVec& y, const NoiseSpec& spec, std::uint64_t seed) {
  if (spec.kind != NoiseSpec::Kind::GaussianAdditive)
    throw InvalidInputError("add_noise: only additive noise is defined for complex data");
  if (spec.level < 0) throw ParameterError("add_noise: negative noise level");
  if (spec.level == 0) return y;
  Rng rng(seed);
  const double sigma = spec.level / spec.gauss_scale;
  ComplexVec out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double gr = rng.normal(), gi = rng.normal();
    out[i] = y[i] + std::complex<double>(sigma * gr, sigma * gi);
  }
  return out;
}

// --- serialization ----------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'D', 'P', 'U', 'M', 'O', 'D', 'L', '1'};
constexpr std::uint32_t kVersion = 1;
enum class ModelKind : std::uint32_t { Bcs = 1, Mri = 2, Cdp = 3 };

void require_little_endian() {
  const std::uint32_t probe = 1;
  if (*reinterpret_cast<const std::uint8_t*>(&probe) != 1)
    throw IoError("model container requires a little-endian host");
}

struct Writer {
  std::ofstream out;
  explicit Writer(const std::string& path) : out(path, std::ios::binary) {
    if (!out) throw IoError("cannot open " + path + " for writing");
    require_little_endian();
  }
  void bytes(const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }
  void f64s(const double* p, std::size_t n) { bytes(p, n * 8); }
};

struct Reader {
  std::ifstream in;
  std::string path;
  explicit Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
    if (!in) throw IoError("cannot open " + p);
    require_little_endian();
  }
  void bytes(void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw IoError(path + ": truncated model container");
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return v;
  }
  double f64() {
    double v;
    bytes(&v, 8);
    return v;
  }
  void f64s(double* p, std::size_t n) { bytes(p, n * 8); }
};

void write_header(Writer& w, ModelKind kind, std::uint64_t seed,
                  const std::vector<std::uint64_t>& dims, double ratio) {
  w.bytes(kMagic, 8);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(kind));
  w.u64(seed);
  w.u32(static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) w.u64(d);
  w.f64(ratio);
}

struct Header {
  ModelKind kind;
  std::uint64_t seed;
  std::vector<std::uint64_t> dims;
  double ratio;
};

Header read_header(Reader& r, ModelKind expected) {
  char magic[8];
  r.bytes(magic, 8);
  if (!std::equal(magic, magic + 8, kMagic)) throw IoError(r.path + ": bad model magic");
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw IoError(r.path + ": unsupported model version " + std::to_string(version));
  Header h;
  h.kind = static_cast<ModelKind>(r.u32());
  if (h.kind != expected) throw IoError(r.path + ": model kind mismatch");
  h.seed = r.u64();
  const std::uint32_t nd = r.u32();
  h.dims.resize(nd);
  for (auto& d : h.dims) d = r.u64();
  h.ratio = r.f64();
  return h;
}

}  // namespace

void save_bcs_model(const std::string& path, const BcsModel& model) {
  Writer w(path);
  write_header(w, ModelKind::Bcs, model.seed, {model.m(), model.n(), model.block_size},
               model.sampling_ratio);
  w.u32(model.fitted() ? 1 : 0);
  w.f64s(model.phi.data(), static_cast<std::size_t>(model.phi.size()));
  if (model.fitted()) w.f64s(model.init_map.data(), static_cast<std::size_t>(model.init_map.size()));
}

BcsModel load_bcs_model(const std::string& path) {
  Reader r(path);
  const Header h = read_header(r, ModelKind::Bcs);
  if (h.dims.size() != 3) throw IoError(path + ": bad BCS dims");
  const auto m = static_cast<Eigen::Index>(h.dims[0]), n = static_cast<Eigen::Index>(h.dims[1]);
  BcsModel model;
  model.block_size = h.dims[2];
  model.sampling_ratio = h.ratio;
  model.seed = h.seed;
  const bool fitted = r.u32() != 0;
  model.phi.resize(m, n);
  r.f64s(model.phi.data(), static_cast<std::size_t>(model.phi.size()));
  if (fitted) {
    model.init_map.resize(n, m);
    r.f64s(model.init_map.data(), static_cast<std::size_t>(model.init_map.size()));
  }
  return model;
}

void save_mri_model(const std::string& path, const MriModel& model) {
  Writer w(path);
  write_header(w, ModelKind::Mri, model.seed, {model.h(), model.w()}, model.sampling_ratio);
  w.bytes(model.mask.on.data(), model.mask.on.size());
}

MriModel load_mri_model(const std::string& path) {
  Reader r(path);
  const Header h = read_header(r, ModelKind::Mri);
  if (h.dims.size() != 2) throw IoError(path + ": bad MRI dims");
  MriModel model;
  model.mask.h = h.dims[0];
  model.mask.w = h.dims[1];
  model.mask.on.resize(model.mask.h * model.mask.w);
  model.sampling_ratio = h.ratio;
  model.seed = h.seed;
  r.bytes(model.mask.on.data(), model.mask.on.size());
  return model;
}

void save_cdp_model(const std::string& path, const CdpModel& model) {
  Writer w(path);
  write_header(w, ModelKind::Cdp, model.seed, {model.h(), model.w(), model.m()},
               model.sampling_ratio);
  for (const auto& c : model.phase_mask.v) {
    w.f64(c.real());
    w.f64(c.imag());
  }
  for (auto idx : model.row_selector) w.u64(idx);
}

CdpModel load_cdp_model(const std::string& path) {
  Reader r(path);
  const Header h = read_header(r, ModelKind::Cdp);
  if (h.dims.size() != 3) throw IoError(path + ": bad CDP dims");
  CdpModel model;
  model.phase_mask = ComplexImage(h.dims[0], h.dims[1]);
  model.sampling_ratio = h.ratio;
  model.seed = h.seed;
  for (auto& c : model.phase_mask.v) {
    const double re = r.f64(), im = r.f64();
    c = {re, im};
  }
  model.row_selector.resize(h.dims[2]);
  for (auto& idx : model.row_selector) idx = r.u64();
  return model;
}

}  // namespace dpu
