#include "earcan/signal.hpp"

#include <cmath>
#include <string>

#include "earcan/error.hpp"
#include "earcan/fft.hpp"
#include "earcan/rng.hpp"

namespace earcan {

namespace {

Signal convolve_direct(const Signal& a, const Signal& b) {
  Signal out;
  out.sample_rate = a.sample_rate;
  out.samples.assign(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double ai = a.samples[i];
    if (ai == 0.0) continue;
    for (std::size_t j = 0; j < b.size(); ++j) out.samples[i + j] += ai * b.samples[j];
  }
  return out;
}

Signal convolve_fft(const Signal& a, const Signal& b) {
  const std::size_t out_len = a.size() + b.size() - 1;
  const std::size_t nfft = Fft::next_pow2(out_len);
  const Fft& plan = fft_plan(nfft);
  auto fa = plan.forward_real(a.samples);
  auto fb = plan.forward_real(b.samples);
  for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= fb[k];
  auto full = plan.inverse_real(fa);
  Signal out;
  out.sample_rate = a.sample_rate;
  out.samples.assign(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(out_len));
  return out;
}

}  // namespace

Signal convolve(const Signal& a, const Signal& b) {
  if (a.samples.empty() || b.samples.empty()) fail(Errc::empty_input, "convolve: empty signal");
  if (a.sample_rate != b.sample_rate)
    fail(Errc::rate_mismatch, "convolve: " + std::to_string(a.sample_rate) + " Hz vs " +
                                  std::to_string(b.sample_rate) + " Hz");
  // Direct summation is faster until the smaller operand gets long.
  if (a.size() * b.size() <= 1u << 14) return convolve_direct(a, b);
  return convolve_fft(a, b);
}

ComplexSpectrum spectrum(const Signal& s, std::size_t nfft) {
  if (!Fft::is_pow2(nfft))
    fail(Errc::config, "spectrum: nfft must be a power of two, got " + std::to_string(nfft));
  if (nfft < s.size())
    fail(Errc::nfft_too_small, "spectrum: nfft " + std::to_string(nfft) +
                                   " shorter than signal length " + std::to_string(s.size()));
  ComplexSpectrum sp;
  sp.nfft = nfft;
  sp.sample_rate = s.sample_rate;
  sp.bins = fft_plan(nfft).forward_real(s.samples);
  return sp;
}

Signal white_noise(std::size_t length, double amplitude, std::uint64_t seed, int sample_rate) {
  if (amplitude < 0.0) fail(Errc::config, "white_noise: negative amplitude");
  Rng rng(seed);
  Signal out;
  out.sample_rate = sample_rate;
  out.samples.resize(length);
  for (auto& x : out.samples) x = amplitude * (2.0 * rng.uniform() - 1.0);
  return out;
}

double energy(const Signal& s) {
  double e = 0.0;
  for (double x : s.samples) e += x * x;
  return e;
}

double rms(const Signal& s) {
  if (s.samples.empty()) return 0.0;
  return std::sqrt(energy(s) / static_cast<double>(s.size()));
}

double spectrum_energy(const ComplexSpectrum& sp) {
  double e = 0.0;
  for (std::size_t k = 0; k < sp.bins.size(); ++k) {
    const double m = std::norm(sp.bins[k]);
    const bool edge = (k == 0) || (k == sp.nfft / 2);
    e += edge ? m : 2.0 * m;
  }
  return e;
}

}  // namespace earcan
