#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "earcan/ear_model.hpp"
#include "earcan/error.hpp"
#include "earcan/features.hpp"
#include "earcan/sounding.hpp"

using namespace earcan;

namespace {

constexpr int kFs = 16000;

ChirpSpec default_spec() { return ChirpSpec{}; }  // 20 Hz -> 8 kHz, 1 s, 0.5

// Sub-sample zero-crossing positions by linear interpolation.
std::vector<double> interpolated_crossings(const Signal& s, std::size_t lo, std::size_t hi) {
  std::vector<double> out;
  for (std::size_t i = lo; i + 1 < hi; ++i) {
    const double a = s.samples[i], b = s.samples[i + 1];
    if ((a <= 0.0 && b > 0.0) || (a >= 0.0 && b < 0.0)) {
      if (a == b) continue;
      out.push_back(static_cast<double>(i) + a / (a - b));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("chirp endpoints: instantaneous frequency f0 at t=0 and f1 at t=T within 1%") {
  ChirpSpec spec;
  spec.f0_hz = 100.0;  // endpoints measurable by zero crossings
  spec.f1_hz = 6000.0;
  spec.duration_s = 2.0;
  const Signal chirp = exponential_chirp(spec, kFs);
  // first half cycle: spacing from the t=0 crossing to the next one
  const auto head = interpolated_crossings(chirp, 0, 1000);
  REQUIRE(head.size() >= 2);
  const double f_start = kFs / (2.0 * (head[1] - head[0]));
  CHECK(std::abs(f_start - 100.0) / 100.0 < 0.01);
  // crossing count over a short window at the end
  const auto tail = interpolated_crossings(chirp, chirp.size() - 64, chirp.size());
  REQUIRE(tail.size() >= 3);
  const double f_end =
      kFs * static_cast<double>(tail.size() - 1) / (2.0 * (tail.back() - tail.front()));
  CHECK(std::abs(f_end - 6000.0) / 6000.0 < 0.01);
}

TEST_CASE("chirp: spectrogram ridge is monotonically increasing (short-time oracle)") {
  const Signal chirp = exponential_chirp(default_spec(), kFs);
  FeatureConfig cfg;
  std::size_t n_frames = 0;
  const auto powers = band_power_matrix(chirp, cfg, &n_frames);
  const auto centers = band_centers(cfg);
  double prev_ridge = 0.0;
  // skip the low-frequency lead-in that sits below the first band
  for (std::size_t t = 10; t < n_frames; t += 5) {
    std::size_t best = 0;
    double best_p = 0.0;
    for (std::size_t b = 0; b < cfg.n_bands; ++b) {
      if (powers[t * cfg.n_bands + b] > best_p) {
        best_p = powers[t * cfg.n_bands + b];
        best = b;
      }
    }
    const double ridge = centers[best];
    CHECK(ridge >= prev_ridge * 0.98);  // monotone up to band quantization
    prev_ridge = std::max(prev_ridge, ridge);
  }
  CHECK(prev_ridge > 6000.0);
}

TEST_CASE("chirp: f0 <= 0 is refused (log sweep undefined)") {
  ChirpSpec spec;
  spec.f0_hz = 0.0;
  try {
    exponential_chirp(spec, kFs);
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::config);
  }
}

TEST_CASE("inverse filter: band-limited impulse with peak exactly 1 and sidelobes <= -30 dB") {
  const ChirpSpec spec = default_spec();
  const Signal chirp = exponential_chirp(spec, kFs);
  const Signal inv = inverse_filter(chirp, spec);
  const Signal pulse = convolve(chirp, inv);

  std::size_t p0 = 0;
  double peak = 0.0;
  for (std::size_t i = 0; i < pulse.size(); ++i) {
    if (std::abs(pulse.samples[i]) > peak) {
      peak = std::abs(pulse.samples[i]);
      p0 = i;
    }
  }
  CHECK(pulse.samples[p0] == doctest::Approx(1.0).epsilon(0.01));

  double max_sidelobe = 0.0;
  for (std::size_t i = 0; i < pulse.size(); ++i) {
    if (i + 8 > p0 && i < p0 + 8) continue;  // mainlobe exclusion
    max_sidelobe = std::max(max_sidelobe, std::abs(pulse.samples[i]));
  }
  CHECK(20.0 * std::log10(max_sidelobe / peak) <= -30.0);
}

TEST_CASE("inverse filter applied twice is not an identity") {
  const ChirpSpec spec = default_spec();
  const Signal chirp = exponential_chirp(spec, kFs);
  const Signal inv = inverse_filter(chirp, spec);
  const Signal twice = convolve(inv, inv);
  double peak = 0.0;
  double sum_sq = 0.0;
  for (double v : twice.samples) {
    peak = std::max(peak, std::abs(v));
    sum_sq += v * v;
  }
  const double rms = std::sqrt(sum_sq / static_cast<double>(twice.size()));
  // an impulse would concentrate energy; this stays spread out
  CHECK(peak / rms < 100.0);
  const Signal pulse = convolve(chirp, inv);
  double pulse_peak = 0.0, pulse_sq = 0.0;
  for (double v : pulse.samples) {
    pulse_peak = std::max(pulse_peak, std::abs(v));
    pulse_sq += v * v;
  }
  CHECK(pulse_peak / std::sqrt(pulse_sq / static_cast<double>(pulse.size())) > 200.0);
}

TEST_CASE("inverse filter refuses a signal that does not match its spec") {
  const ChirpSpec spec = default_spec();
  Signal chirp = exponential_chirp(spec, kFs);
  chirp.samples[100] += 0.01;
  try {
    inverse_filter(chirp, spec);
    FAIL("expected spec_mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::spec_mismatch);
  }
}

TEST_CASE("estimate_ir: known delta channel recovered at the right lag (known-channel oracle)") {
  const ChirpSpec spec = default_spec();
  const Signal chirp = exponential_chirp(spec, kFs);
  // ground truth: delta at lag 5, gain 0.5
  Signal channel;
  channel.sample_rate = kFs;
  channel.samples.assign(64, 0.0);
  channel.samples[5] = 0.5;
  const Signal recorded = convolve(chirp, channel);
  const ImpulseResponse est = estimate_ir(chirp, recorded, spec, 64);
  CHECK(est.origin == ImpulseResponse::Origin::estimated);
  CHECK(std::abs(est.taps.samples[5] - 0.5) < 1e-3);
  for (std::size_t i = 0; i < est.taps.size(); ++i) {
    if (i == 5) continue;
    CHECK(std::abs(est.taps.samples[i]) < 1e-3);
  }
}

TEST_CASE("estimate_ir: noiseless resonator channel, band-limited NMSE < 1e-4") {
  const ChirpSpec spec = default_spec();
  const Signal chirp = exponential_chirp(spec, kFs);
  const EarProfile profile = sample_profile(3, PopulationParams{});
  const ImpulseResponse truth = realize_ir(profile, kFs, 512);
  const Signal recorded = simulate_in_ear(profile, chirp, 0.0, 0, 512);
  const ImpulseResponse est = estimate_ir(chirp, recorded, spec, 512);
  const double nmse = band_limited_nmse(est, truth, 40.0, 7600.0);
  CHECK(nmse < 1e-4);
}

TEST_CASE("estimate_ir: pure noise recording raises sounding_failed") {
  const ChirpSpec spec = default_spec();
  const Signal chirp = exponential_chirp(spec, kFs);
  const Signal noise = white_noise(chirp.size() + 511, 0.3, 17, kFs);
  try {
    estimate_ir(chirp, noise, spec, 512);
    FAIL("expected sounding_failed");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::sounding_failed);
  }
}

TEST_CASE("transfer_function: flat for unit impulse, linear phase for delay, resonant peak") {
  ImpulseResponse delta;
  delta.taps.sample_rate = kFs;
  delta.taps.samples.assign(64, 0.0);
  delta.taps.samples[0] = 1.0;
  auto sp = transfer_function(delta, 256);
  for (const auto& b : sp.bins) CHECK(std::abs(b) == doctest::Approx(1.0).epsilon(1e-12));

  ImpulseResponse delayed = delta;
  delayed.taps.samples[0] = 0.0;
  delayed.taps.samples[3] = 1.0;
  sp = transfer_function(delayed, 256);
  for (std::size_t k = 1; k < 20; ++k) {
    CHECK(std::abs(sp.bins[k]) == doctest::Approx(1.0).epsilon(1e-12));
    const double expected_phase = -2.0 * 3.14159265358979323846 * 3.0 * k / 256.0;
    const double got = std::arg(sp.bins[k]);
    CHECK(std::abs(std::remainder(got - expected_phase, 2.0 * 3.14159265358979323846)) < 1e-9);
  }

  EarProfile p;
  p.direct_gain = 0.0;
  p.resonators.push_back({2000.0, 12.0, 0.1});
  const ImpulseResponse res = realize_ir(p, kFs, 512);
  sp = transfer_function(res, 2048);
  std::size_t peak_bin = 0;
  double peak = 0.0;
  for (std::size_t k = 0; k < sp.bins.size(); ++k)
    if (std::abs(sp.bins[k]) > peak) {
      peak = std::abs(sp.bins[k]);
      peak_bin = k;
    }
  CHECK(std::abs(sp.bin_freq(peak_bin) - 2000.0) < 2000.0 / 12.0);
}

TEST_CASE("end-to-end identity: enrollment recovers the realized IR (NMSE < 1e-4)") {
  const ChirpSpec spec = default_spec();
  const Signal chirp = exponential_chirp(spec, kFs);
  for (std::uint64_t seed : {11u, 22u, 33u}) {
    const EarProfile profile = sample_profile(seed, PopulationParams{});
    const Signal recorded = simulate_in_ear(profile, chirp, 0.0, 0, 512);
    const ImpulseResponse est = estimate_ir(chirp, recorded, spec, 512);
    const ImpulseResponse truth = realize_ir(profile, kFs, 512);
    CHECK(band_limited_nmse(est, truth, 40.0, 7600.0) < 1e-4);
  }
}

TEST_CASE("estimation error grows with noise amplitude (median over 20 seeds)") {
  const ChirpSpec spec = default_spec();
  const Signal chirp = exponential_chirp(spec, kFs);
  const std::vector<double> noise_levels = {1e-4, 1e-3, 1e-2};
  std::vector<double> med_nmse;
  for (double noise : noise_levels) {
    std::vector<double> nmses;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const EarProfile profile = sample_profile(500 + seed, PopulationParams{});
      const Signal recorded = simulate_in_ear(profile, chirp, noise, 900 + seed, 512);
      const ImpulseResponse est = estimate_ir(chirp, recorded, spec, 512);
      const ImpulseResponse truth = realize_ir(profile, kFs, 512);
      nmses.push_back(band_limited_nmse(est, truth, 40.0, 7600.0));
    }
    std::sort(nmses.begin(), nmses.end());
    med_nmse.push_back(nmses[nmses.size() / 2]);
  }
  CHECK(med_nmse[0] < med_nmse[1]);
  CHECK(med_nmse[1] < med_nmse[2]);
}
