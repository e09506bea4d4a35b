#pragma once

#include <cstddef>

#include "earcan/ear_model.hpp"
#include "earcan/signal.hpp"

namespace earcan {

// Exponential sine sweep descriptor.
struct ChirpSpec {
  double f0_hz = 20.0;
  double f1_hz = 8000.0;
  double duration_s = 1.0;
  double amplitude = 0.5;
};

// s(t) = A * sin(2*pi*f0*L*(exp(t/L)-1)), L = T/ln(f1/f0). Instantaneous
// frequency rises exponentially from f0 to f1.
Signal exponential_chirp(const ChirpSpec& spec, int sample_rate);

// Time-reversed, +6 dB/octave compensated inverse (built as the
// regularized matched inverse conj(X)/(|X|^2 + eps*max|X|^2)), normalized
// so that convolve(chirp, inverse) peaks at exactly 1. Refuses a signal
// that was not produced by exponential_chirp with the given spec.
Signal inverse_filter(const Signal& chirp, const ChirpSpec& spec);

struct SoundingInfo {
  std::size_t origin = 0;        // deconvolution time origin (lag 0) in the raw output
  long peak_lag = 0;             // detected peak position relative to the origin
  double peak_to_rms_db = 0.0;   // detection statistic
};

// Deconvolve a recorded in-ear acquisition of `probe` and crop the channel
// impulse response, anchored at the deconvolution time origin so tap k is
// channel lag k. Throws sounding_failed when no peak rises above the
// deconvolution noise floor.
ImpulseResponse estimate_ir(const Signal& probe, const Signal& recorded, const ChirpSpec& spec,
                            std::size_t ir_length, SoundingInfo* info = nullptr,
                            double min_peak_to_rms_db = 20.0);

// Thin wrapper over spectrum(); enrollment (full-band) and playback
// (band-limited) estimates are compared in this domain.
ComplexSpectrum transfer_function(const ImpulseResponse& ir, std::size_t nfft);

// sum |A-B|^2 / sum |B|^2 over FFT bins inside [lo_hz, hi_hz]; B is the
// reference. Both IRs are zero-padded to nfft.
double band_limited_nmse(const ImpulseResponse& estimate, const ImpulseResponse& reference,
                         double lo_hz, double hi_hz, std::size_t nfft = 4096);

}  // namespace earcan
