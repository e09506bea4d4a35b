#include "earcan/fft.hpp"

#include <cmath>
#include <map>
#include <mutex>

#include "earcan/error.hpp"

namespace earcan {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

Fft::Fft(std::size_t n) : n_(n) {
  if (!is_pow2(n)) fail(Errc::config, "FFT size must be a power of two, got " + std::to_string(n));
  bitrev_.resize(n);
  std::size_t log2n = 0;
  while ((std::size_t{1} << log2n) < n) ++log2n;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = 0;
    for (std::size_t b = 0; b < log2n; ++b)
      if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (log2n - 1 - b);
    bitrev_[i] = r;
  }
  twiddle_.resize(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double ang = -2.0 * kPi * static_cast<double>(k) / static_cast<double>(n);
    twiddle_[k] = {std::cos(ang), std::sin(ang)};
  }
}

std::size_t Fft::next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

void Fft::transform(std::vector<std::complex<double>>& a, bool invert) const {
  if (a.size() != n_) fail(Errc::dim_mismatch, "FFT buffer size != plan size");
  for (std::size_t i = 0; i < n_; ++i) {
    const std::size_t j = bitrev_[i];
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n_; len <<= 1) {
    const std::size_t half = len >> 1;
    const std::size_t step = n_ / len;
    for (std::size_t i = 0; i < n_; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        std::complex<double> w = twiddle_[k * step];
        if (invert) w = std::conj(w);
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + half] * w;
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
  if (invert) {
    const double inv = 1.0 / static_cast<double>(n_);
    for (auto& x : a) x *= inv;
  }
}

void Fft::forward(std::vector<std::complex<double>>& data) const { transform(data, false); }
void Fft::inverse(std::vector<std::complex<double>>& data) const { transform(data, true); }

std::vector<std::complex<double>> Fft::forward_real(const std::vector<double>& x) const {
  if (x.size() > n_) fail(Errc::nfft_too_small, "signal longer than transform length");
  std::vector<std::complex<double>> buf(n_);
  for (std::size_t i = 0; i < x.size(); ++i) buf[i] = {x[i], 0.0};
  transform(buf, false);
  buf.resize(n_ / 2 + 1);
  return buf;
}

std::vector<double> Fft::inverse_real(const std::vector<std::complex<double>>& half) const {
  if (half.size() != n_ / 2 + 1) fail(Errc::dim_mismatch, "one-sided spectrum has wrong bin count");
  std::vector<std::complex<double>> buf(n_);
  for (std::size_t k = 0; k <= n_ / 2; ++k) buf[k] = half[k];
  for (std::size_t k = n_ / 2 + 1; k < n_; ++k) buf[k] = std::conj(half[n_ - k]);
  transform(buf, true);
  std::vector<double> out(n_);
  for (std::size_t i = 0; i < n_; ++i) out[i] = buf[i].real();
  return out;
}

const Fft& fft_plan(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, Fft> plans;
  std::lock_guard<std::mutex> lock(mu);
  auto it = plans.find(n);
  if (it == plans.end()) it = plans.emplace(n, Fft(n)).first;
  return it->second;
}

}  // namespace earcan
