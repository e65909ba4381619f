#pragma once
#include <complex>
#include <cstddef>
#include <vector>

namespace dpu::fft {

// In-place unitary 2-D FFT of a row-major h*w buffer (both directions are
// scaled by 1/sqrt(h*w), so the inverse is the adjoint). Backed by FFTW with
// a process-wide plan cache; safe to call concurrently on distinct buffers.
void fft2(std::complex<double>* data, std::size_t h, std::size_t w, bool inverse);
void fft2(std::complex<float>* data, std::size_t h, std::size_t w, bool inverse);

template <typename Real>
void fft2(std::vector<std::complex<Real>>& buf, std::size_t h, std::size_t w, bool inverse) {
  fft2(buf.data(), h, w, inverse);
}

}  // namespace dpu::fft
