#pragma once

#include <complex>
#include <cstdint>
#include <vector>

namespace earcan {

// Uniformly sampled real audio. Amplitudes are dimensionless with full
// scale at 1.0; generators stay inside [-1, 1].
struct Signal {
  std::vector<double> samples;
  int sample_rate = 0;

  std::size_t size() const { return samples.size(); }
  double duration() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

// One-sided spectrum: bins[k] corresponds to frequency k * sample_rate / nfft,
// k = 0 .. nfft/2.
struct ComplexSpectrum {
  std::vector<std::complex<double>> bins;
  std::size_t nfft = 0;
  int sample_rate = 0;

  double bin_freq(std::size_t k) const {
    return static_cast<double>(k) * sample_rate / static_cast<double>(nfft);
  }
};

// Full linear convolution, length a+b-1. Uses the FFT above a size
// threshold; both paths agree with direct summation to 1e-9 relative.
Signal convolve(const Signal& a, const Signal& b);

// One-sided DFT of the zero-padded signal. nfft must be a power of two
// and at least the signal length (never silently truncates).
ComplexSpectrum spectrum(const Signal& s, std::size_t nfft);

// i.i.d. uniform samples in [-amplitude, +amplitude]. Same seed, same bits.
Signal white_noise(std::size_t length, double amplitude, std::uint64_t seed, int sample_rate);

double energy(const Signal& s);
double rms(const Signal& s);

// Spectrum energy consistent with Parseval: sum == time-domain energy * nfft.
double spectrum_energy(const ComplexSpectrum& sp);

}  // namespace earcan
