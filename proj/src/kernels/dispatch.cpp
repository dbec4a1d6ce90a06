#include <atomic>
#include <cstdlib>
#include <string>

#include "netspill/errors.hpp"
#include "netspill/kernels.hpp"

namespace netspill::kernels {

namespace {

struct Table {
  Isa isa;
  double (*sum)(std::span<const double>);
  double (*dot)(std::span<const double>, std::span<const double>);
  double (*gather_dot)(std::span<const double>, std::span<const std::uint32_t>,
                       std::span<const double>);
  void (*axpy)(double, std::span<const double>, std::span<double>);
};

constexpr Table kScalar{Isa::scalar, scalar::sum, scalar::dot, scalar::gather_dot, scalar::axpy};
constexpr Table kAvx2{Isa::avx2, avx2::sum, avx2::dot, avx2::gather_dot, avx2::axpy};

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

// NETSPILL_ISA=scalar disables the vector kernels process-wide.
const Table* detect() {
  if (const char* env = std::getenv("NETSPILL_ISA"); env && std::string(env) == "scalar") {
    return &kScalar;
  }
  return cpu_has_avx2() ? &kAvx2 : &kScalar;
}

std::atomic<const Table*>& current() {
  static std::atomic<const Table*> table{detect()};
  return table;
}

const Table& table() { return *current().load(std::memory_order_relaxed); }

}  // namespace

std::string_view to_string(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

bool isa_available(Isa isa) { return isa == Isa::scalar || cpu_has_avx2(); }

Isa active_isa() { return table().isa; }

void force_isa(Isa isa) {
  if (!isa_available(isa)) {
    throw ConfigError("instruction set " + std::string(to_string(isa)) + " not supported");
  }
  current().store(isa == Isa::avx2 ? &kAvx2 : &kScalar);
}

void reset_isa() { current().store(detect()); }

double sum(std::span<const double> x) { return table().sum(x); }

double dot(std::span<const double> a, std::span<const double> b) { return table().dot(a, b); }

double gather_dot(std::span<const double> w, std::span<const std::uint32_t> idx,
                  std::span<const double> values) {
  return table().gather_dot(w, idx, values);
}

void axpy(double a, std::span<const double> x, std::span<double> y) { table().axpy(a, x, y); }

}  // namespace netspill::kernels
