#include "dpu/metrics.hpp"

#include <cmath>
#include <limits>

#include "dpu/errors.hpp"

namespace dpu {

double mse(const TensorD& a, const TensorD& b) {
  if (!a.same_shape(b)) throw DimensionError("mse: shape mismatch");
  if (a.numel() == 0) throw DimensionError("mse: empty tensors");
  double acc = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

double psnr(const TensorD& x_hat, const TensorD& x) {
  const double e = mse(x_hat, x);
  if (e == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / e);
}

}  // namespace dpu
