#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "earcan/augmentation.hpp"
#include "earcan/ear_model.hpp"
#include "earcan/embedding.hpp"
#include "earcan/features.hpp"
#include "earcan/session.hpp"
#include "earcan/sounding.hpp"

namespace earcan {

// Flat dotted-key experiment configuration. A config plus the code version
// determines every output bit; unknown keys and type mismatches are
// reported with their line numbers.
struct ExperimentConfig {
  std::uint64_t seed = 42;
  int sample_rate = 16000;

  // population
  std::size_t n_users = 20;
  PopulationParams population;
  JitterParams jitter;

  // enrollment sounding
  ChirpSpec chirp;
  std::size_t ir_length = 512;
  double sounding_noise = 5e-5;
  double min_peak_to_rms_db = 20.0;
  std::size_t enroll_sessions = 2;

  // corpus
  CorpusKind corpus_kind = CorpusKind::synthetic_speechlike;
  std::size_t train_clips = 20;
  std::size_t calib_clips = 4;
  std::size_t test_clips = 5;
  std::size_t session_clips = 4;
  double silence_profile = 0.5;
  double clip_min_s = 1.2;
  double clip_max_s = 2.0;
  double acquisition_noise = 5e-5;

  // features
  FeatureConfig features;

  // network / training
  NetConfig net;
  TrainHyper train;

  // watermark
  std::size_t watermark_iters = 12;
  double watermark_step = 0.25;
  double masking_offset_db = 13.0;

  // session machine and attack simulation
  SessionConfig session;  // theta_* filled from calibration at run time
  double update_far_target = 0.01;
  std::size_t session_windows = 16;
  std::size_t takeover_window = 5;
  std::size_t intrusion_trials = 200;
  std::string session_condition = "watermarked";  // chirp | playback | watermarked

  // output
  std::string output_root = "earcan_out";
  bool write_pair_wavs = false;
  bool write_watermarked_wavs = true;

  static ExperimentConfig defaults();
  static ExperimentConfig from_file(const std::string& path);
  static ExperimentConfig from_text(const std::string& text);

  // Sorted "key = value" lines; the canonical form that gets hashed into
  // reports.
  std::string canonical_text() const;
  std::string hash() const;

  void validate() const;
};

// FNV-1a 64-bit, hex encoded.
std::string fnv1a_hex(const std::string& text);

}  // namespace earcan
