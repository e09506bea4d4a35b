#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "earcan/ear_model.hpp"
#include "earcan/error.hpp"
#include "earcan/signal.hpp"

using namespace earcan;

namespace {

PopulationParams default_pop() { return PopulationParams{}; }

Signal unit_impulse(std::size_t len, int fs = 16000) {
  Signal s;
  s.sample_rate = fs;
  s.samples.assign(len, 0.0);
  s.samples[0] = 1.0;
  return s;
}

std::vector<double> direct_convolution(const std::vector<double>& a,
                                       const std::vector<double>& b) {
  std::vector<double> out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  return out;
}

}  // namespace

TEST_CASE("sample_profile: deterministic, distinct across seeds") {
  const auto pop = default_pop();
  const EarProfile a1 = sample_profile(1, pop);
  const EarProfile a2 = sample_profile(1, pop);
  CHECK(a1.resonators.size() == a2.resonators.size());
  for (std::size_t i = 0; i < a1.resonators.size(); ++i) {
    CHECK(a1.resonators[i].center_freq_hz == a2.resonators[i].center_freq_hz);
    CHECK(a1.resonators[i].q_factor == a2.resonators[i].q_factor);
    CHECK(a1.resonators[i].gain == a2.resonators[i].gain);
  }
  const EarProfile b = sample_profile(2, pop);
  bool differs = a1.resonators.size() != b.resonators.size();
  for (std::size_t i = 0; !differs && i < a1.resonators.size(); ++i)
    differs = a1.resonators[i].center_freq_hz != b.resonators[i].center_freq_hz;
  CHECK(differs);
}

TEST_CASE("sample_profile: 1000 seeds stay inside configured ranges") {
  const auto pop = default_pop();
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const EarProfile p = sample_profile(seed, pop);
    CHECK(p.resonators.size() >= 1);
    CHECK(p.resonators.size() <= static_cast<std::size_t>(pop.resonators_max));
    for (const auto& r : p.resonators) {
      CHECK(r.center_freq_hz >= pop.fc_min_hz);
      CHECK(r.center_freq_hz <= pop.fc_max_hz);
      CHECK(r.q_factor >= pop.q_min);
      CHECK(r.q_factor <= pop.q_max);
      CHECK(r.gain > 0.0);
    }
    CHECK(p.direct_gain >= pop.direct_gain_min);
    CHECK(p.direct_gain <= pop.direct_gain_max);
    CHECK(p.direct_delay >= pop.direct_delay_min);
    CHECK(p.direct_delay <= pop.direct_delay_max);
  }
}

TEST_CASE("sample_profile: degenerate range is a config error") {
  auto pop = default_pop();
  pop.q_min = 10.0;
  pop.q_max = 2.0;
  try {
    sample_profile(1, pop);
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::config);
  }
}

TEST_CASE("realize_ir: zero resonators, unit direct gain, zero delay is a unit impulse") {
  EarProfile p;
  p.direct_gain = 1.0;
  p.direct_delay = 0;
  const ImpulseResponse ir = realize_ir(p, 16000, 128);
  CHECK(ir.taps.samples[0] == doctest::Approx(1.0));
  for (std::size_t i = 1; i < ir.taps.size(); ++i) CHECK(ir.taps.samples[i] == 0.0);
  CHECK(ir.origin == ImpulseResponse::Origin::ground_truth);
}

TEST_CASE("realize_ir: single resonator peaks within fc/Q of fc (spectrum peak-pick oracle)") {
  EarProfile p;
  p.direct_gain = 0.0;
  p.direct_delay = 0;
  p.resonators.push_back({3000.0, 10.0, 0.1});
  const ImpulseResponse ir = realize_ir(p, 16000, 512);
  const auto sp = spectrum(ir.taps, 4096);
  std::size_t peak_bin = 0;
  double peak = 0.0;
  for (std::size_t k = 0; k < sp.bins.size(); ++k) {
    const double m = std::abs(sp.bins[k]);
    if (m > peak) {
      peak = m;
      peak_bin = k;
    }
  }
  CHECK(std::abs(sp.bin_freq(peak_bin) - 3000.0) <= 300.0);
}

TEST_CASE("realize_ir: doubling all gains scales the IR by exactly 2") {
  EarProfile p = sample_profile(5, default_pop());
  EarProfile doubled = p;
  doubled.direct_gain *= 2.0;
  for (auto& r : doubled.resonators) r.gain *= 2.0;
  const auto a = realize_ir(p, 16000, 256);
  const auto b = realize_ir(doubled, 16000, 256);
  for (std::size_t i = 0; i < a.taps.size(); ++i)
    CHECK(b.taps.samples[i] == doctest::Approx(2.0 * a.taps.samples[i]).epsilon(1e-12));
}

TEST_CASE("realize_ir: errors on short length or delay outside window") {
  EarProfile p;
  p.direct_delay = 100;
  try {
    realize_ir(p, 16000, 32);
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::config);
  }
  try {
    realize_ir(p, 16000, 64);  // delay 100 >= 64
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::config);
  }
}

TEST_CASE("simulate_in_ear: sifting property and convolution oracle") {
  const EarProfile p = sample_profile(9, default_pop());
  const ImpulseResponse ir = realize_ir(p, 16000, 512);

  const Signal delta = unit_impulse(1);
  const Signal out = simulate_in_ear(p, delta, 0.0, 0, 512);
  REQUIRE(out.size() == ir.taps.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    CHECK(out.samples[i] == doctest::Approx(ir.taps.samples[i]).epsilon(1e-12));

  const Signal playback = white_noise(400, 0.5, 77, 16000);
  const Signal resp = simulate_in_ear(p, playback, 0.0, 0, 512);
  const auto oracle = direct_convolution(playback.samples, ir.taps.samples);
  REQUIRE(resp.size() == oracle.size());
  double peak = 0.0;
  for (double v : oracle) peak = std::max(peak, std::abs(v));
  for (std::size_t i = 0; i < oracle.size(); ++i)
    CHECK(std::abs(resp.samples[i] - oracle[i]) < 1e-9 * peak);

  const Signal r1 = simulate_in_ear(p, playback, 0.01, 42, 512);
  const Signal r2 = simulate_in_ear(p, playback, 0.01, 42, 512);
  CHECK(r1.samples == r2.samples);
}

TEST_CASE("simulate_in_ear is linear in the playback at zero noise") {
  const EarProfile p = sample_profile(13, default_pop());
  const Signal a = white_noise(300, 0.4, 1, 16000);
  const Signal b = white_noise(300, 0.4, 2, 16000);
  Signal mix;
  mix.sample_rate = 16000;
  mix.samples.resize(300);
  for (std::size_t i = 0; i < 300; ++i) mix.samples[i] = 0.6 * a.samples[i] - 0.3 * b.samples[i];
  const Signal ra = simulate_in_ear(p, a, 0.0, 0);
  const Signal rb = simulate_in_ear(p, b, 0.0, 0);
  const Signal rm = simulate_in_ear(p, mix, 0.0, 0);
  for (std::size_t i = 0; i < rm.size(); ++i)
    CHECK(rm.samples[i] ==
          doctest::Approx(0.6 * ra.samples[i] - 0.3 * rb.samples[i]).epsilon(1e-9));
}

TEST_CASE("jitter_profile: bounded multiplicative jitter, deterministic") {
  const auto pop = default_pop();
  const EarProfile base = sample_profile(21, pop);
  const JitterParams jit;
  const EarProfile j1 = jitter_profile(base, jit, 5, pop);
  const EarProfile j2 = jitter_profile(base, jit, 5, pop);
  CHECK(j1.direct_gain == j2.direct_gain);
  for (std::size_t i = 0; i < base.resonators.size(); ++i) {
    const double ratio = j1.resonators[i].center_freq_hz / base.resonators[i].center_freq_hz;
    CHECK(ratio >= 1.0 - jit.fc_fraction - 1e-12);
    CHECK(ratio <= 1.0 + jit.fc_fraction + 1e-12);
    const double gratio = j1.resonators[i].gain / base.resonators[i].gain;
    CHECK(gratio >= 1.0 - jit.gain_fraction - 1e-12);
    CHECK(gratio <= 1.0 + jit.gain_fraction + 1e-12);
  }
}

TEST_CASE("adversary: imposter with the victim's own profile is indistinguishable (control)") {
  const EarProfile victim = sample_profile(31, default_pop());
  const Signal playback = white_noise(500, 0.4, 3, 16000);
  AdversaryContext ctx;
  ctx.imposter = &victim;  // degenerate: same ear
  ctx.playback = &playback;
  ctx.seed = 11;
  ctx.current_nonce = 99;
  const AdversaryResponse fake = adversary_response(AdversaryMode::imposter, ctx);
  const Signal genuine = simulate_in_ear(victim, playback, 0.0, 11, 512);
  CHECK(fake.signal.samples == genuine.samples);
  CHECK(fake.bound_nonce == 99);
}

TEST_CASE("adversary: replay returns the stale recording and its old nonce") {
  std::vector<RecordedResponse> history;
  AdversaryContext ctx;
  ctx.history = &history;
  ctx.current_nonce = 555;
  try {
    adversary_response(AdversaryMode::replay, ctx);
    FAIL("expected no_history");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::no_history);
  }
  history.push_back({white_noise(100, 0.1, 4, 16000), 111});
  const AdversaryResponse r = adversary_response(AdversaryMode::replay, ctx);
  CHECK(r.bound_nonce == 111);  // stale, not 555
  CHECK(r.signal.samples == history.back().signal.samples);
}

TEST_CASE("adversary: delayed genuine response exceeds the latency budget") {
  const EarProfile victim = sample_profile(41, default_pop());
  const Signal playback = white_noise(200, 0.3, 5, 16000);
  AdversaryContext ctx;
  ctx.victim = &victim;
  ctx.playback = &playback;
  ctx.nominal_latency_ms = 50.0;
  ctx.extra_latency_ms = 450.0;
  const AdversaryResponse r = adversary_response(AdversaryMode::delayed, ctx);
  CHECK(r.latency_ms == doctest::Approx(500.0));
  CHECK(r.latency_ms > 200.0);  // budget
}

TEST_CASE("population separability: between-user TF distance exceeds within-user estimation spread") {
  // log-magnitude, band-averaged transfer functions of ground truth
  const auto pop = default_pop();
  const JitterParams jit;
  auto band_log_mag = [](const ImpulseResponse& ir) {
    const auto sp = spectrum(ir.taps, 2048);
    std::vector<double> out;
    const std::size_t lo = 16, hi = 960, step = 32;  // ~125 Hz .. 7.5 kHz
    for (std::size_t k = lo; k + step <= hi; k += step) {
      double p = 0.0;
      for (std::size_t j = k; j < k + step; ++j) p += std::norm(sp.bins[j]);
      out.push_back(10.0 * std::log10(p + 1e-12));
    }
    return out;
  };
  auto l2 = [](const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(d);
  };

  double min_between = 1e300, max_within = 0.0;
  const std::size_t n = 12;
  std::vector<std::vector<double>> base_tf;
  for (std::size_t u = 0; u < n; ++u) {
    const EarProfile p = sample_profile(1000 + u, pop);
    base_tf.push_back(band_log_mag(realize_ir(p, 16000, 512)));
    for (std::uint64_t s = 0; s < 3; ++s) {
      const EarProfile pj = jitter_profile(p, jit, 7000 + u * 10 + s, pop);
      max_within = std::max(max_within, l2(base_tf.back(), band_log_mag(realize_ir(pj, 16000, 512))));
    }
  }
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) min_between = std::min(min_between, l2(base_tf[a], base_tf[b]));
  CHECK(min_between > max_within);
}

TEST_CASE("profile json round trip preserves every field") {
  EarProfile p = sample_profile(77, default_pop());
  p.user_id = "user_077";
  const EarProfile q = profile_from_json(profile_to_json(p));
  CHECK(q.user_id == p.user_id);
  CHECK(q.direct_gain == p.direct_gain);
  CHECK(q.direct_delay == p.direct_delay);
  REQUIRE(q.resonators.size() == p.resonators.size());
  for (std::size_t i = 0; i < p.resonators.size(); ++i) {
    CHECK(q.resonators[i].center_freq_hz == p.resonators[i].center_freq_hz);
    CHECK(q.resonators[i].q_factor == p.resonators[i].q_factor);
    CHECK(q.resonators[i].gain == p.resonators[i].gain);
  }
}
