#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace earcan {

// Iterative radix-2 FFT with a per-size twiddle table. Sizes must be
// powers of two.
class Fft {
 public:
  explicit Fft(std::size_t n);

  std::size_t size() const { return n_; }

  void forward(std::vector<std::complex<double>>& data) const;
  void inverse(std::vector<std::complex<double>>& data) const;

  // One-sided transform of a real signal zero-padded to size(); returns
  // n/2 + 1 bins.
  std::vector<std::complex<double>> forward_real(const std::vector<double>& x) const;

  // Inverse of a one-sided spectrum (hermitian extension), real output of
  // length size().
  std::vector<double> inverse_real(const std::vector<std::complex<double>>& half) const;

  static bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }
  static std::size_t next_pow2(std::size_t n);

 private:
  void transform(std::vector<std::complex<double>>& data, bool invert) const;

  std::size_t n_;
  std::vector<std::size_t> bitrev_;
  std::vector<std::complex<double>> twiddle_;  // forward twiddles, n/2 entries
};

// Cached plan lookup for hot loops (framewise spectra).
const Fft& fft_plan(std::size_t n);

}  // namespace earcan
