#pragma once

#include <complex>
#include <vector>

namespace vsep {

// Thin thread-safe wrappers over FFTW (plans cached per size, planner guarded
// by a mutex; execution uses the new-array interface).

// In-place-safe 1D transform. sign = -1 forward (e^{-j2pi}), +1 backward.
// No normalization is applied.
std::vector<std::complex<double>> fft(const std::vector<std::complex<double>>& in, int sign);

// 2D transform of row-major data with `rows` rows of length `cols`.
std::vector<std::complex<double>> fft2(const std::vector<std::complex<double>>& in,
                                       int rows, int cols, int sign);

}  // namespace vsep
