#include "dpu/fft.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <tuple>

#include "dpu/errors.hpp"

namespace dpu::fft {

namespace {

// Plans are created once per (h, w, direction) with FFTW_UNALIGNED so they can
// be replayed on any buffer via fftw_execute_dft. Creation is serialized;
// execution is not (FFTW guarantees replay on distinct arrays is safe).
std::mutex g_plan_mutex;

fftw_plan plan_d(std::size_t h, std::size_t w, bool inverse) {
  static std::map<std::tuple<std::size_t, std::size_t, bool>, fftw_plan> cache;
  std::lock_guard<std::mutex> lock(g_plan_mutex);
  auto key = std::make_tuple(h, w, inverse);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  std::vector<std::complex<double>> scratch(h * w);
  auto* p = reinterpret_cast<fftw_complex*>(scratch.data());
  fftw_plan plan = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), p, p,
                                    inverse ? FFTW_BACKWARD : FFTW_FORWARD,
                                    FFTW_ESTIMATE | FFTW_UNALIGNED);
  cache.emplace(key, plan);
  return plan;
}

fftwf_plan plan_f(std::size_t h, std::size_t w, bool inverse) {
  static std::map<std::tuple<std::size_t, std::size_t, bool>, fftwf_plan> cache;
  std::lock_guard<std::mutex> lock(g_plan_mutex);
  auto key = std::make_tuple(h, w, inverse);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  std::vector<std::complex<float>> scratch(h * w);
  auto* p = reinterpret_cast<fftwf_complex*>(scratch.data());
  fftwf_plan plan = fftwf_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), p, p,
                                      inverse ? FFTW_BACKWARD : FFTW_FORWARD,
                                      FFTW_ESTIMATE | FFTW_UNALIGNED);
  cache.emplace(key, plan);
  return plan;
}

}  // namespace

void fft2(std::complex<double>* data, std::size_t h, std::size_t w, bool inverse) {
  if (h == 0 || w == 0) throw DimensionError("fft2: empty array");
  fftw_plan plan = plan_d(h, w, inverse);
  auto* p = reinterpret_cast<fftw_complex*>(data);
  fftw_execute_dft(plan, p, p);
  const double scale = 1.0 / std::sqrt(static_cast<double>(h * w));
  for (std::size_t i = 0; i < h * w; ++i) data[i] *= scale;
}

void fft2(std::complex<float>* data, std::size_t h, std::size_t w, bool inverse) {
  if (h == 0 || w == 0) throw DimensionError("fft2: empty array");
  fftwf_plan plan = plan_f(h, w, inverse);
  auto* p = reinterpret_cast<fftwf_complex*>(data);
  fftwf_execute_dft(plan, p, p);
  const float scale = 1.0f / std::sqrt(static_cast<float>(h * w));
  for (std::size_t i = 0; i < h * w; ++i) data[i] *= scale;
}

}  // namespace dpu::fft
