#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "earcan/signal.hpp"

namespace earcan {

struct Resonator {
  double center_freq_hz = 0.0;
  double q_factor = 0.0;
  double gain = 0.0;  // tap-domain gain of the decaying sinusoid
};

// Parametric per-user ear-canal model: a direct path plus a small bank of
// decaying sinusoid resonators. This is the biometric ground truth the
// rest of the pipeline tries to measure.
struct EarProfile {
  std::vector<Resonator> resonators;
  double direct_gain = 1.0;
  int direct_delay = 0;  // samples
  std::string user_id;
};

struct ImpulseResponse {
  enum class Origin { ground_truth, estimated };
  Signal taps;
  Origin origin = Origin::ground_truth;
};

// Ranges for the synthetic population. Resonator strength is drawn as a
// target magnitude-response peak height and converted to the tap-domain
// gain, so resonances stay O(1) across frequency and Q.
struct PopulationParams {
  int resonators_min = 2;
  int resonators_max = 4;
  double fc_min_hz = 500.0;
  double fc_max_hz = 7000.0;
  double q_min = 2.0;
  double q_max = 30.0;
  double peak_min = 0.5;  // |H| at resonance
  double peak_max = 2.5;
  double min_spacing_hz = 400.0;  // keeps resonances resolvable
  double direct_gain_min = 0.3;
  double direct_gain_max = 0.7;
  int direct_delay_min = 8;
  int direct_delay_max = 32;
  int sample_rate = 16000;
};

// Per-session acquisition variability: multiplicative jitter applied to
// resonator frequencies and all gains. Without it every EER is trivially 0.
struct JitterParams {
  double fc_fraction = 0.03;
  double gain_fraction = 0.10;
};

EarProfile sample_profile(std::uint64_t seed, const PopulationParams& params);

// Jittered copy of a profile for one acquisition session.
EarProfile jitter_profile(const EarProfile& profile, const JitterParams& jitter,
                          std::uint64_t seed, const PopulationParams& params);

ImpulseResponse realize_ir(const EarProfile& profile, int sample_rate, std::size_t length);

// convolve(playback, realize_ir(profile)) + white noise, full length.
Signal simulate_in_ear(const EarProfile& profile, const Signal& playback,
                       double noise_amplitude, std::uint64_t seed,
                       std::size_t ir_length = 512);

enum class AdversaryMode { imposter, replay, delayed };

struct RecordedResponse {
  Signal signal;
  std::uint64_t nonce = 0;
};

struct AdversaryContext {
  const EarProfile* victim = nullptr;    // delayed mode replays the genuine channel
  const EarProfile* imposter = nullptr;  // imposter mode uses this foreign ear
  const Signal* playback = nullptr;
  double noise_amplitude = 0.0;
  std::uint64_t seed = 0;
  std::size_t ir_length = 512;
  const std::vector<RecordedResponse>* history = nullptr;  // replay source
  double nominal_latency_ms = 50.0;
  double extra_latency_ms = 0.0;
  std::uint64_t current_nonce = 0;
};

struct AdversaryResponse {
  Signal signal;
  double latency_ms = 0.0;
  std::uint64_t bound_nonce = 0;  // nonce of the challenge this response answers
};

AdversaryResponse adversary_response(AdversaryMode mode, const AdversaryContext& ctx);

// JSON document with documented field names (user_id, direct_gain,
// direct_delay, resonators[].center_freq_hz/q_factor/gain).
std::string profile_to_json(const EarProfile& profile);
EarProfile profile_from_json(const std::string& json_text);

}  // namespace earcan
