#pragma once

#include <cstdint>
#include <span>
#include <string_view>

// Data-parallel inner loops. Every kernel has a scalar reference version and,
// on x86-64, an AVX2 version; the dispatching entry points pick one at first
// use from the CPU's features. The two variants agree up to reassociation of
// floating point sums.
namespace netspill::kernels {

enum class Isa { scalar, avx2 };

std::string_view to_string(Isa isa);
bool isa_available(Isa isa);
Isa active_isa();
// Pins the implementation used by the dispatching entry points. Throws if the
// CPU does not support `isa`.
void force_isa(Isa isa);
// Returns to the automatically detected implementation.
void reset_isa();

double sum(std::span<const double> x);
double dot(std::span<const double> a, std::span<const double> b);
// sum_k w[k] * values[idx[k]]
double gather_dot(std::span<const double> w, std::span<const std::uint32_t> idx,
                  std::span<const double> values);
// y += a * x
void axpy(double a, std::span<const double> x, std::span<double> y);

namespace scalar {
double sum(std::span<const double> x);
double dot(std::span<const double> a, std::span<const double> b);
double gather_dot(std::span<const double> w, std::span<const std::uint32_t> idx,
                  std::span<const double> values);
void axpy(double a, std::span<const double> x, std::span<double> y);
}  // namespace scalar

namespace avx2 {
double sum(std::span<const double> x);
double dot(std::span<const double> a, std::span<const double> b);
double gather_dot(std::span<const double> w, std::span<const std::uint32_t> idx,
                  std::span<const double> values);
void axpy(double a, std::span<const double> x, std::span<double> y);
}  // namespace avx2

}  // namespace netspill::kernels
