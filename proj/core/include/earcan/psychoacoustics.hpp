#pragma once

namespace earcan {

// Reference level mapping: 0 dBFS plays back at 90 dB SPL.
inline constexpr double kSplAtFullScaleDb = 90.0;

// Terhardt-style threshold in quiet, dB SPL. Valid for 20 Hz..8 kHz.
// T(f) = 3.64 (f/1k)^-0.8 - 6.5 exp(-0.6 (f/1k - 3.3)^2) + 1e-3 (f/1k)^4
double threshold_in_quiet_spl(double freq_hz);

// Same curve mapped to dBFS via the 90 dB SPL = 0 dBFS reference.
double threshold_in_quiet_dbfs(double freq_hz);

}  // namespace earcan
