#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "earcan/signal.hpp"

namespace earcan {

// Frame / band geometry for the relative-transfer-function front end.
// 40 mel-spaced bands over [100, 7600] Hz, 25 ms frames at 10 ms hop.
struct FeatureConfig {
  std::size_t frame_len = 400;
  std::size_t hop = 160;
  std::size_t nfft = 512;
  std::size_t n_bands = 40;
  double band_lo_hz = 100.0;
  double band_hi_hz = 7600.0;
  double clamp_lo_db = -80.0;
  double clamp_hi_db = 40.0;
  double ratio_eps = 1e-10;          // floor on band powers inside the log ratio
  // Frame RMS below this is silent. Sits below the threshold-in-quiet
  // watermark ceiling (a full T_q-level patch lands near -66 dBFS frame
  // RMS) but above the acquisition noise floor, so watermarked frames
  // stay sensable while noise-only frames still gate out.
  double silence_dbfs = -70.0;
  double deficiency_margin_db = 3.0; // gate sits this far below threshold-in-quiet
  int sample_rate = 16000;
};

// Per-frame, per-band log band-power ratios in dB, clamped to
// [clamp_lo_db, clamp_hi_db]. Deficient cells are reported at the clamp
// floor: they carry no user information by construction.
struct FeatureMatrix {
  std::size_t n_frames = 0;
  std::size_t n_bands = 0;
  std::vector<double> values;  // row-major [frame][band]
  std::vector<double> band_edges_hz;

  double at(std::size_t t, std::size_t b) const { return values[t * n_bands + b]; }
  double& at(std::size_t t, std::size_t b) { return values[t * n_bands + b]; }
};

struct DeficiencyMask {
  std::size_t n_frames = 0;
  std::size_t n_bands = 0;
  std::vector<std::uint8_t> deficient;  // row-major
  std::vector<std::uint8_t> silent_frames;

  bool at(std::size_t t, std::size_t b) const { return deficient[t * n_bands + b] != 0; }
  bool any() const;
  std::size_t count() const;
};

// Band edge positions (n_bands + 1 entries, mel spaced) and geometric band
// centers. Throws config error if any band would contain no FFT bin.
std::vector<double> band_edges(const FeatureConfig& cfg);
std::vector<double> band_centers(const FeatureConfig& cfg);

// Hann-windowed frames; count = floor((len - frame_len)/hop) + 1.
std::vector<std::vector<double>> frame_signal(const Signal& s, std::size_t frame_len,
                                              std::size_t hop);

// Band powers of every frame of s, calibrated so a full-scale sine at a
// band center reads ~0.5 (-3 dBFS). Row-major [frame][band], linear power.
std::vector<double> band_power_matrix(const Signal& s, const FeatureConfig& cfg,
                                      std::size_t* n_frames_out);

double band_power_to_dbfs(double power);

// Silence and absent-frequency detection on the playback side.
DeficiencyMask deficiency_mask(const Signal& playback, const FeatureConfig& cfg);

// Aligns response to playback by cross-correlation peak (ties toward the
// smaller lag), then emits 10*log10((P_response+eps)/(P_playback+eps)) per
// cell. Pass a precomputed mask to skip recomputing it.
FeatureMatrix rtf_features(const Signal& playback, const Signal& response,
                           const FeatureConfig& cfg, const DeficiencyMask* mask = nullptr);

// Alignment lag used by rtf_features (exposed for the watermark adjoint).
std::size_t alignment_lag(const Signal& playback, const Signal& response);

std::string features_to_csv(const FeatureMatrix& fm);

}  // namespace earcan
