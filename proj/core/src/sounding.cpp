#include "earcan/sounding.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "earcan/error.hpp"
#include "earcan/fft.hpp"

namespace earcan {

namespace {
constexpr double kPi = 3.14159265358979323846;

void check_spec(const ChirpSpec& spec, int sample_rate) {
  if (spec.f0_hz <= 0.0) fail(Errc::config, "chirp: f0 must be positive (log sweep undefined)");
  if (spec.f0_hz >= spec.f1_hz) fail(Errc::config, "chirp: need f0 < f1");
  if (spec.f1_hz > sample_rate / 2.0) fail(Errc::config, "chirp: f1 above Nyquist");
  if (spec.duration_s <= 0.0) fail(Errc::config, "chirp: duration must be positive");
}

struct Inverse {
  Signal taps;
  std::size_t origin;
};

Inverse make_inverse(const Signal& chirp, const ChirpSpec& spec) {
  const Signal expected = exponential_chirp(spec, chirp.sample_rate);
  if (expected.size() != chirp.size())
    fail(Errc::spec_mismatch, "inverse_filter: signal length does not match spec");
  for (std::size_t i = 0; i < chirp.size(); ++i) {
    if (std::abs(expected.samples[i] - chirp.samples[i]) > 1e-9)
      fail(Errc::spec_mismatch, "inverse_filter: signal was not produced by this spec");
  }

  const std::size_t nfft = Fft::next_pow2(2 * chirp.size());
  const Fft& plan = fft_plan(nfft);
  auto spec_bins = plan.forward_real(chirp.samples);
  double max_pw = 0.0;
  for (const auto& b : spec_bins) max_pw = std::max(max_pw, std::norm(b));
  const double floor_pw = 1e-8 * max_pw;
  for (auto& b : spec_bins) b = std::conj(b) / (std::norm(b) + floor_pw);

  Inverse inv;
  inv.taps.sample_rate = chirp.sample_rate;
  inv.taps.samples = plan.inverse_real(spec_bins);

  // Calibrate: locate the band-limited impulse and normalize its peak to 1.
  const Signal pulse = convolve(chirp, inv.taps);
  std::size_t p0 = 0;
  double best = 0.0;
  for (std::size_t i = 0; i < pulse.size(); ++i) {
    const double a = std::abs(pulse.samples[i]);
    if (a > best) {
      best = a;
      p0 = i;
    }
  }
  const double peak = pulse.samples[p0];
  for (auto& x : inv.taps.samples) x /= peak;
  inv.origin = p0;
  return inv;
}

}  // namespace

Signal exponential_chirp(const ChirpSpec& spec, int sample_rate) {
  check_spec(spec, sample_rate);
  const double ratio_log = std::log(spec.f1_hz / spec.f0_hz);
  const double sweep_time = spec.duration_s / ratio_log;
  const std::size_t n = static_cast<std::size_t>(std::llround(spec.duration_s * sample_rate));
  Signal s;
  s.sample_rate = sample_rate;
  s.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    const double phase = 2.0 * kPi * spec.f0_hz * sweep_time * (std::exp(t / sweep_time) - 1.0);
    s.samples[i] = spec.amplitude * std::sin(phase);
  }
  return s;
}

Signal inverse_filter(const Signal& chirp, const ChirpSpec& spec) {
  return make_inverse(chirp, spec).taps;
}

ImpulseResponse estimate_ir(const Signal& probe, const Signal& recorded, const ChirpSpec& spec,
                            std::size_t ir_length, SoundingInfo* info,
                            double min_peak_to_rms_db) {
  if (recorded.samples.empty()) fail(Errc::empty_input, "estimate_ir: empty recording");
  const Inverse inv = make_inverse(probe, spec);
  const Signal deconv = convolve(recorded, inv.taps);

  double peak = 0.0;
  std::size_t peak_idx = 0;
  for (std::size_t i = 0; i < deconv.size(); ++i) {
    const double a = std::abs(deconv.samples[i]);
    if (a > peak) {
      peak = a;
      peak_idx = i;
    }
  }
  const double floor_rms = rms(deconv);
  const double ratio_db =
      20.0 * std::log10((peak + 1e-300) / (floor_rms + 1e-300));
  if (ratio_db < min_peak_to_rms_db)
    fail(Errc::sounding_failed, "estimate_ir: no deconvolution peak above noise floor (" +
                                    std::to_string(ratio_db) + " dB)");

  ImpulseResponse ir;
  ir.origin = ImpulseResponse::Origin::estimated;
  ir.taps.sample_rate = recorded.sample_rate;
  ir.taps.samples.assign(ir_length, 0.0);
  for (std::size_t k = 0; k < ir_length; ++k) {
    const std::size_t idx = inv.origin + k;
    if (idx < deconv.size()) ir.taps.samples[k] = deconv.samples[idx];
  }
  if (info) {
    info->origin = inv.origin;
    info->peak_lag = static_cast<long>(peak_idx) - static_cast<long>(inv.origin);
    info->peak_to_rms_db = ratio_db;
  }
  return ir;
}

ComplexSpectrum transfer_function(const ImpulseResponse& ir, std::size_t nfft) {
  return spectrum(ir.taps, nfft);
}

double band_limited_nmse(const ImpulseResponse& estimate, const ImpulseResponse& reference,
                         double lo_hz, double hi_hz, std::size_t nfft) {
  const ComplexSpectrum a = transfer_function(estimate, nfft);
  const ComplexSpectrum b = transfer_function(reference, nfft);
  double err = 0.0, ref = 0.0;
  for (std::size_t k = 0; k < b.bins.size(); ++k) {
    const double f = b.bin_freq(k);
    if (f < lo_hz || f > hi_hz) continue;
    err += std::norm(a.bins[k] - b.bins[k]);
    ref += std::norm(b.bins[k]);
  }
  if (ref == 0.0) fail(Errc::domain, "band_limited_nmse: reference has no energy in band");
  return err / ref;
}

}  // namespace earcan
