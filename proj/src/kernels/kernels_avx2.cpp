#include <cassert>

#include "netspill/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>
#define NETSPILL_HAVE_AVX2_KERNELS 1
#define NETSPILL_TARGET_AVX2 __attribute__((target("avx2,fma")))
#endif

namespace netspill::kernels::avx2 {

#ifdef NETSPILL_HAVE_AVX2_KERNELS

namespace {

NETSPILL_TARGET_AVX2 inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

}  // namespace

NETSPILL_TARGET_AVX2 double sum(std::span<const double> x) {
  const std::size_t n = x.size();
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x.data() + i));
    acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(x.data() + i + 4));
  }
  if (i + 4 <= n) {
    acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x.data() + i));
    i += 4;
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += x[i];
  return s;
}

NETSPILL_TARGET_AVX2 double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  const std::size_t n = a.size();
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a.data() + i), _mm256_loadu_pd(b.data() + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a.data() + i + 4),
                           _mm256_loadu_pd(b.data() + i + 4), acc1);
  }
  if (i + 4 <= n) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a.data() + i), _mm256_loadu_pd(b.data() + i), acc0);
    i += 4;
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

NETSPILL_TARGET_AVX2 double gather_dot(std::span<const double> w,
                                       std::span<const std::uint32_t> idx,
                                       std::span<const double> values) {
  assert(w.size() == idx.size());
  const std::size_t n = w.size();
  __m256d acc = _mm256_setzero_pd();
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const __m128i vi = _mm_loadu_si128(reinterpret_cast<const __m128i*>(idx.data() + k));
    const __m256d v = _mm256_i32gather_pd(values.data(), vi, 8);
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(w.data() + k), v, acc);
  }
  double s = hsum(acc);
  for (; k < n; ++k) s += w[k] * values[idx[k]];
  return s;
}

NETSPILL_TARGET_AVX2 void axpy(double a, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  const std::size_t n = x.size();
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vy = _mm256_loadu_pd(y.data() + i);
    _mm256_storeu_pd(y.data() + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x.data() + i), vy));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

#else

double sum(std::span<const double> x) { return scalar::sum(x); }
double dot(std::span<const double> a, std::span<const double> b) { return scalar::dot(a, b); }
double gather_dot(std::span<const double> w, std::span<const std::uint32_t> idx,
                  std::span<const double> values) {
  return scalar::gather_dot(w, idx, values);
}
void axpy(double a, std::span<const double> x, std::span<double> y) { scalar::axpy(a, x, y); }

#endif

}  // namespace netspill::kernels::avx2
