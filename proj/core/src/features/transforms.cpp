#include "harlab/features/transforms.hpp"

#include <fmt/format.h>

#include <cmath>
#include <numbers>

#include "harlab/errors.hpp"

namespace harlab::features {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::vector<double> fit_to_length(std::span<const double> signal, std::size_t length) {
  if (!is_power_of_two(length)) throw ConfigError(fmt::format("pad length {} is not a power of two", length));
  std::vector<double> out(length, 0.0);
  const std::size_t n = std::min(length, signal.size());
  std::copy(signal.begin(), signal.begin() + static_cast<std::ptrdiff_t>(n), out.begin());
  return out;
}

std::vector<double> DwtResult::coefficients() const {
  std::vector<double> out(approximation);
  for (auto it = details.rbegin(); it != details.rend(); ++it) out.insert(out.end(), it->begin(), it->end());
  return out;
}

DwtResult haar_dwt(std::span<const double> signal, std::size_t levels) {
  const std::size_t n = signal.size();
  if (!is_power_of_two(n)) throw ConfigError(fmt::format("DWT input length {} is not a power of two", n));
  if (levels == 0 || (n >> levels) == 0) {
    throw ConfigError(fmt::format("cannot take {} Haar levels of a {}-sample signal", levels, n));
  }
  const double s = 1.0 / std::numbers::sqrt2;
  DwtResult res;
  std::vector<double> a(signal.begin(), signal.end());
  for (std::size_t level = 0; level < levels; ++level) {
    const std::size_t half = a.size() / 2;
    std::vector<double> next(half);
    std::vector<double> d(half);
    for (std::size_t i = 0; i < half; ++i) {
      next[i] = (a[2 * i] + a[2 * i + 1]) * s;
      d[i] = (a[2 * i] - a[2 * i + 1]) * s;
    }
    res.details.push_back(std::move(d));
    a = std::move(next);
  }
  res.approximation = std::move(a);
  return res;
}

void fft_inplace(std::vector<std::complex<double>>& data) {
  const std::size_t n = data.size();
  if (!is_power_of_two(n)) throw ConfigError(fmt::format("FFT length {} is not a power of two", n));
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        // Twiddles computed directly rather than by recurrence to avoid drift.
        const std::complex<double> w = std::polar(1.0, angle * static_cast<double>(k));
        const auto u = data[start + k];
        const auto v = data[start + k + len / 2] * w;
        data[start + k] = u + v;
        data[start + k + len / 2] = u - v;
      }
    }
  }
}

std::vector<double> fft_magnitude(std::span<const double> signal) {
  std::vector<std::complex<double>> x(signal.begin(), signal.end());
  fft_inplace(x);
  std::vector<double> mag(x.size() / 2 + 1);
  for (std::size_t k = 0; k < mag.size(); ++k) mag[k] = std::abs(x[k]);
  return mag;
}

}  // namespace harlab::features
