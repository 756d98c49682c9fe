#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace harlab::features {

bool is_power_of_two(std::size_t n);

/// Zero-pads or truncates `signal` to `length` samples. Throws ConfigError
/// unless `length` is a power of two.
std::vector<double> fit_to_length(std::span<const double> signal, std::size_t length);

/// Orthonormal Haar decomposition. details[0] is the finest level.
struct DwtResult {
  std::vector<double> approximation;
  std::vector<std::vector<double>> details;

  /// Coarse to fine: [a_J, d_J, d_{J-1}, ..., d_1]; same length as the input.
  std::vector<double> coefficients() const;
};

/// `levels` Haar steps on a power-of-two signal:
///   a_i = (x_{2i} + x_{2i+1}) / sqrt(2),  d_i = (x_{2i} - x_{2i+1}) / sqrt(2)
/// recursing on the approximation. Throws ConfigError if the length is not a
/// power of two or is too short for the requested levels.
DwtResult haar_dwt(std::span<const double> signal, std::size_t levels);

/// In-place iterative radix-2 FFT (forward, no normalization).
void fft_inplace(std::vector<std::complex<double>>& data);

/// |X_k| for k = 0..L/2 of a power-of-two real signal.
std::vector<double> fft_magnitude(std::span<const double> signal);

}  // namespace harlab::features
