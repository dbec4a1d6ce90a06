#include <cassert>

#include "netspill/kernels.hpp"

namespace netspill::kernels::scalar {

double sum(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s;
}

double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double gather_dot(std::span<const double> w, std::span<const std::uint32_t> idx,
                  std::span<const double> values) {
  assert(w.size() == idx.size());
  double s = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) s += w[k] * values[idx[k]];
  return s;
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

}  // namespace netspill::kernels::scalar
