#include "earcan/ear_model.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "earcan/error.hpp"
#include "earcan/rng.hpp"

namespace earcan {

namespace {
constexpr double kPi = 3.14159265358979323846;

void check_ranges(const PopulationParams& p) {
  if (p.resonators_min > p.resonators_max || p.resonators_min < 1)
    fail(Errc::config, "population: resonator count range degenerate");
  if (p.fc_min_hz > p.fc_max_hz || p.q_min > p.q_max || p.peak_min > p.peak_max ||
      p.direct_gain_min > p.direct_gain_max || p.direct_delay_min > p.direct_delay_max)
    fail(Errc::config, "population: min > max in a parameter range");
  if (p.fc_min_hz <= 0.0 || p.fc_max_hz >= p.sample_rate / 2.0)
    fail(Errc::config, "population: resonance band outside (0, Nyquist)");
}

double peak_to_gain(double peak, double fc, double q, int fs) {
  // A decaying sinusoid g*exp(-a t)*sin(2*pi*fc*t), a = pi*fc/q, has
  // |H(fc)| ~= g*fs/(2a), so g = peak * 2*pi*fc / (fs*q).
  return peak * 2.0 * kPi * fc / (static_cast<double>(fs) * q);
}

}  // namespace

EarProfile sample_profile(std::uint64_t seed, const PopulationParams& params) {
  check_ranges(params);
  Rng rng(seed);
  EarProfile p;
  const int n = static_cast<int>(rng.uniform_int(params.resonators_min, params.resonators_max));
  p.resonators.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double fc = 0.0;
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      fc = rng.uniform(params.fc_min_hz, params.fc_max_hz);
      placed = std::none_of(p.resonators.begin(), p.resonators.end(), [&](const Resonator& r) {
        return std::abs(r.center_freq_hz - fc) < params.min_spacing_hz;
      });
    }
    if (!placed) continue;  // band saturated; fewer resonators is still valid
    Resonator r;
    r.center_freq_hz = fc;
    r.q_factor = rng.uniform(params.q_min, params.q_max);
    r.gain = peak_to_gain(rng.uniform(params.peak_min, params.peak_max), fc, r.q_factor,
                          params.sample_rate);
    p.resonators.push_back(r);
  }
  std::sort(p.resonators.begin(), p.resonators.end(),
            [](const Resonator& a, const Resonator& b) { return a.center_freq_hz < b.center_freq_hz; });
  p.direct_gain = rng.uniform(params.direct_gain_min, params.direct_gain_max);
  p.direct_delay = static_cast<int>(rng.uniform_int(params.direct_delay_min, params.direct_delay_max));
  return p;
}

EarProfile jitter_profile(const EarProfile& profile, const JitterParams& jitter,
                          std::uint64_t seed, const PopulationParams& params) {
  Rng rng(seed);
  EarProfile out = profile;
  for (auto& r : out.resonators) {
    const double df = jitter.fc_fraction * (2.0 * rng.uniform() - 1.0);
    const double dg = jitter.gain_fraction * (2.0 * rng.uniform() - 1.0);
    r.center_freq_hz = std::clamp(r.center_freq_hz * (1.0 + df), params.fc_min_hz, params.fc_max_hz);
    r.gain *= 1.0 + dg;
  }
  out.direct_gain *= 1.0 + jitter.gain_fraction * (2.0 * rng.uniform() - 1.0);
  return out;
}

ImpulseResponse realize_ir(const EarProfile& profile, int sample_rate, std::size_t length) {
  if (length < 64) fail(Errc::config, "realize_ir: length below 64 taps");
  if (profile.direct_delay < 0 || static_cast<std::size_t>(profile.direct_delay) >= length)
    fail(Errc::config, "realize_ir: direct_delay outside the requested length");
  ImpulseResponse ir;
  ir.origin = ImpulseResponse::Origin::ground_truth;
  ir.taps.sample_rate = sample_rate;
  ir.taps.samples.assign(length, 0.0);
  ir.taps.samples[static_cast<std::size_t>(profile.direct_delay)] += profile.direct_gain;
  for (const auto& r : profile.resonators) {
    const double a = kPi * r.center_freq_hz / r.q_factor;
    const double w = 2.0 * kPi * r.center_freq_hz;
    for (std::size_t n = 0; n < length; ++n) {
      const double t = static_cast<double>(n) / sample_rate;
      ir.taps.samples[n] += r.gain * std::exp(-a * t) * std::sin(w * t);
    }
  }
  return ir;
}

Signal simulate_in_ear(const EarProfile& profile, const Signal& playback,
                       double noise_amplitude, std::uint64_t seed, std::size_t ir_length) {
  const ImpulseResponse ir = realize_ir(profile, playback.sample_rate, ir_length);
  Signal out = convolve(playback, ir.taps);
  if (noise_amplitude > 0.0) {
    const Signal noise = white_noise(out.size(), noise_amplitude, seed, out.sample_rate);
    for (std::size_t i = 0; i < out.size(); ++i) out.samples[i] += noise.samples[i];
  }
  return out;
}

AdversaryResponse adversary_response(AdversaryMode mode, const AdversaryContext& ctx) {
  AdversaryResponse resp;
  switch (mode) {
    case AdversaryMode::imposter: {
      if (!ctx.imposter || !ctx.playback) fail(Errc::config, "adversary: imposter mode needs a profile and playback");
      resp.signal = simulate_in_ear(*ctx.imposter, *ctx.playback, ctx.noise_amplitude, ctx.seed,
                                    ctx.ir_length);
      resp.latency_ms = ctx.nominal_latency_ms;
      resp.bound_nonce = ctx.current_nonce;
      break;
    }
    case AdversaryMode::replay: {
      if (!ctx.history || ctx.history->empty())
        fail(Errc::no_history, "adversary: replay with no recorded responses");
      const RecordedResponse& rec = ctx.history->back();
      resp.signal = rec.signal;
      resp.latency_ms = ctx.nominal_latency_ms;
      resp.bound_nonce = rec.nonce;  // stale: bound to the challenge it was recorded under
      break;
    }
    case AdversaryMode::delayed: {
      if (!ctx.victim || !ctx.playback) fail(Errc::config, "adversary: delayed mode needs the victim profile and playback");
      resp.signal = simulate_in_ear(*ctx.victim, *ctx.playback, ctx.noise_amplitude, ctx.seed,
                                    ctx.ir_length);
      resp.latency_ms = ctx.nominal_latency_ms + ctx.extra_latency_ms;
      resp.bound_nonce = ctx.current_nonce;
      break;
    }
  }
  return resp;
}

std::string profile_to_json(const EarProfile& profile) {
  nlohmann::ordered_json j;
  j["user_id"] = profile.user_id;
  j["direct_gain"] = profile.direct_gain;
  j["direct_delay"] = profile.direct_delay;
  j["resonators"] = nlohmann::ordered_json::array();
  for (const auto& r : profile.resonators) {
    j["resonators"].push_back({{"center_freq_hz", r.center_freq_hz},
                               {"q_factor", r.q_factor},
                               {"gain", r.gain}});
  }
  return j.dump(2);
}

EarProfile profile_from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::format, std::string("profile json: ") + e.what());
  }
  EarProfile p;
  try {
    p.user_id = j.at("user_id").get<std::string>();
    p.direct_gain = j.at("direct_gain").get<double>();
    p.direct_delay = j.at("direct_delay").get<int>();
    for (const auto& rj : j.at("resonators")) {
      Resonator r;
      r.center_freq_hz = rj.at("center_freq_hz").get<double>();
      r.q_factor = rj.at("q_factor").get<double>();
      r.gain = rj.at("gain").get<double>();
      p.resonators.push_back(r);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::format, std::string("profile json: ") + e.what());
  }
  return p;
}

}  // namespace earcan
